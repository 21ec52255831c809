use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;

/// Lower bound on kernel bandwidths and proposal variances.
pub const BANDWIDTH_FLOOR: f64 = 1e-12;

/// Random-walk scaling `2.38² / n_par`.
pub fn gamma_scale(n_par: usize) -> f64 {
    2.38 * 2.38 / n_par as f64
}

/// Weighted covariance of row vectors `samples[k]` under normalised
/// `weights`.
pub fn weighted_covariance(samples: &[Vec<f64>], weights: &[f64]) -> Result<DMatrix<f64>> {
    let Some(first) = samples.first() else {
        return Err(Error::Input("covariance of an empty sample".into()));
    };
    if samples.len() != weights.len() {
        return Err(Error::Input("samples and weights differ in length".into()));
    }
    let p = first.len();
    let mut mean = vec![0.0; p];
    for (x, w) in samples.iter().zip(weights) {
        for (m, xi) in mean.iter_mut().zip(x) {
            *m += w * xi;
        }
    }
    let mut cov = DMatrix::zeros(p, p);
    let mut dev = vec![0.0; p];
    for (x, &w) in samples.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for i in 0..p {
            dev[i] = x[i] - mean[i];
        }
        for j in 0..p {
            let wd = w * dev[j];
            for i in j..p {
                cov[(i, j)] += wd * dev[i];
            }
        }
    }
    for j in 0..p {
        for i in j + 1..p {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    Ok(cov)
}

/// Square-root factor of `γ·Σ` for the log-normal random walk, with the
/// diagonal floored so that small or collapsed sets still move.
pub fn proposal_factor(cov: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let mut s = cov * gamma;
    for i in 0..s.nrows() {
        s[(i, i)] += BANDWIDTH_FLOOR;
    }
    psd_sqrt(&s)
}

/// Per-component Silverman bandwidths `h² = 1.06² N^{−2/5} Var_w`, floored
/// at [`BANDWIDTH_FLOOR`].
pub fn silverman_bandwidth(samples: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::Input(
            "bandwidth needs at least two particles".into(),
        ));
    }
    let cov = weighted_covariance(samples, weights)?;
    let scale = 1.06f64.powi(2) * (samples.len() as f64).powf(-0.4);
    Ok((0..cov.nrows())
        .map(|i| (scale * cov[(i, i)]).max(BANDWIDTH_FLOOR))
        .collect())
}

/// Weighted Gaussian kernel mixture over log-parameters with a diagonal
/// Silverman bandwidth. Sampling picks a centre by weight, then adds kernel
/// noise, so draws follow the kernel density itself.
#[derive(Debug, Clone)]
pub struct KdeProposal {
    pub centers: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub bandwidth2: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl KdeProposal {
    pub fn from_weighted(samples: Vec<Vec<f64>>, weights: &[f64]) -> Result<Self> {
        let bandwidth2 = silverman_bandwidth(&samples, weights)?;
        let index = WeightedIndex::new(weights).map_err(|_| Error::DegenerateWeights)?;
        Ok(Self {
            centers: samples,
            weights: weights.to_vec(),
            bandwidth2,
            index,
        })
    }

    /// One draw: the chosen centre's index and the log-parameter point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Vec<f64>) {
        let j = self.index.sample(rng);
        let point = self.centers[j]
            .iter()
            .zip(&self.bandwidth2)
            .map(|(c, h2)| c + h2.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (j, point)
    }
}
