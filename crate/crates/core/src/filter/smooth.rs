use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::ObservationRecord;
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, spd_solve, symmetrize};
use crate::model::{build_spatial_k, obs_row, transition_matrix, DlmSpec, StaticParams, Variable};

use super::FilterState;

/// One joint draw of the state path at every assimilated time.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingDraw {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

struct BackwardStep {
    m: DVector<f64>,
    gm: DVector<f64>,
    gain: DMatrix<f64>,
    sqrt_cov: DMatrix<f64>,
}

/// Backward sampler with the per-time gains and conditional covariances
/// precomputed, so repeated draws cost only matrix-vector products.
///
/// Each step draws from `N(m + B(θ₊ − G m), C − B R Bᵀ)` with
/// `R = G C Gᵀ + W̃` and `B = C Gᵀ R⁻¹`.
pub struct Smoother {
    times: Vec<f64>,
    steps: Vec<BackwardStep>,
    terminal_mean: DVector<f64>,
    terminal_sqrt: DMatrix<f64>,
}

impl Smoother {
    pub fn new(history: &[FilterState], spec: &DlmSpec, params: &StaticParams) -> Result<Self> {
        let last = history
            .last()
            .ok_or_else(|| Error::State("backward sampling needs a stored forward pass".into()))?;
        let times = history
            .iter()
            .map(|s| {
                s.t_last
                    .ok_or_else(|| Error::State("history contains an unassimilated state".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let k = build_spatial_k(spec, params);
        let mut steps = Vec::with_capacity(history.len().saturating_sub(1));
        for i in 0..history.len() - 1 {
            let dt = times[i + 1] - times[i];
            let g = transition_matrix(spec, dt);
            let mut w_tilde = k.clone();
            for (p, w) in params.w.iter().enumerate() {
                w_tilde[(p, p)] += dt * w;
            }
            let c = &history[i].c;
            let gc = &g * c;
            let mut r = &gc * g.transpose() + w_tilde;
            symmetrize(&mut r);
            let gain = spd_solve(&r, &gc).transpose();
            let mut cov = c - &gain * &r * gain.transpose();
            symmetrize(&mut cov);
            steps.push(BackwardStep {
                m: history[i].m.clone(),
                gm: &g * &history[i].m,
                gain,
                sqrt_cov: psd_sqrt(&cov),
            });
        }
        Ok(Self {
            times,
            steps,
            terminal_mean: last.m.clone(),
            terminal_sqrt: psd_sqrt(&last.c),
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SmoothingDraw {
        let n = self.terminal_mean.len();
        let normal = |rng: &mut R| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut states = vec![DVector::zeros(n); self.times.len()];
        let mut next = &self.terminal_mean + &self.terminal_sqrt * normal(rng);
        *states.last_mut().unwrap() = next.clone();
        for (i, st) in self.steps.iter().enumerate().rev() {
            let cur = &st.m + &st.gain * (&next - &st.gm) + &st.sqrt_cov * normal(rng);
            states[i] = cur.clone();
            next = cur;
        }
        SmoothingDraw {
            times: self.times.clone(),
            states,
        }
    }
}

/// Draws one state path from the joint smoothing distribution.
pub fn backward_sample<R: Rng + ?Sized>(
    history: &[FilterState],
    spec: &DlmSpec,
    params: &StaticParams,
    rng: &mut R,
) -> Result<SmoothingDraw> {
    Ok(Smoother::new(history, spec, params)?.draw(rng))
}

/// Samples observations at every site (not only the observed ones) given a
/// smoothed state path. Humidity sites without a temperature regressor at a
/// time yield `None`.
pub fn predict_within_sample<R: Rng + ?Sized>(
    draw: &SmoothingDraw,
    records: &[ObservationRecord],
    spec: &DlmSpec,
    params: &StaticParams,
    rng: &mut R,
) -> Result<Vec<Vec<Option<f64>>>> {
    if records.len() != draw.states.len() {
        return Err(Error::Input(
            "records and smoothing draw differ in length".into(),
        ));
    }
    let d = spec.state_dim_per_site();
    let family = spec.family();
    let mut out = Vec::with_capacity(records.len());
    for (rec, theta) in records.iter().zip(&draw.states) {
        let mut row_out = Vec::with_capacity(spec.n_sites());
        for j in 0..spec.n_sites() {
            let regressor = match family.target() {
                Variable::Humidity => rec.temperature[j],
                Variable::Temperature => None,
            };
            let value = obs_row(family, rec.time, regressor).ok().map(|row| {
                let mean: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(p, f)| f * theta[j * d + p])
                    .sum();
                let z: f64 = rng.sample(StandardNormal);
                mean + params.v[j].sqrt() * z
            });
            row_out.push(value);
        }
        out.push(row_out);
    }
    Ok(out)
}
