use crate::data::ObservationRecord;
use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, cholesky_with_jitter, forward_substitute};
use crate::model::{fill_spatial_k, obs_row, DlmSpec, Family, StaticParams, Variable, OMEGA};

use super::FilterState;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One record reduced to what the filter needs: observed sites, their values
/// and their observation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStep {
    /// Position in the original series.
    pub index: usize,
    pub time: f64,
    pub sites: Vec<usize>,
    pub y: Vec<f64>,
    /// `sites.len() × state_dim_per_site`, row-major.
    pub rows: Vec<f64>,
}

/// A series pre-processed for one model family. Observation rows are
/// evaluated once here rather than once per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSeries {
    steps: Vec<PreparedStep>,
    family: Family,
    n_sites: usize,
}

impl PreparedSeries {
    pub fn new(spec: &DlmSpec, records: &[ObservationRecord]) -> Result<Self> {
        let family = spec.family();
        let l = spec.n_sites();
        let d = spec.state_dim_per_site();
        let mut steps = Vec::with_capacity(records.len());
        let mut last: Option<f64> = None;
        for (index, rec) in records.iter().enumerate() {
            if rec.n_sites() != l {
                return Err(Error::Input(format!(
                    "record {index} has {} sites, model has {l}",
                    rec.n_sites()
                )));
            }
            if let Some(t0) = last {
                if !(rec.time > t0) {
                    return Err(Error::Ordering {
                        last: t0,
                        next: rec.time,
                    });
                }
            }
            last = Some(rec.time);
            let mut sites = Vec::new();
            let mut y = Vec::new();
            let mut rows = Vec::new();
            for j in 0..l {
                let (value, regressor) = match family.target() {
                    Variable::Temperature => (rec.temperature[j], None),
                    Variable::Humidity => {
                        let h = rec.humidity[j];
                        if h.is_some() && rec.temperature[j].is_none() {
                            return Err(Error::Input(format!(
                                "record {index} (t={}): humidity present without temperature at site {j}",
                                rec.time
                            )));
                        }
                        (h, rec.temperature[j])
                    }
                };
                if let Some(v) = value {
                    sites.push(j);
                    y.push(v);
                    let row = obs_row(family, rec.time, regressor)?;
                    debug_assert_eq!(row.len(), d);
                    rows.extend(row);
                }
            }
            steps.push(PreparedStep {
                index,
                time: rec.time,
                sites,
                y,
                rows,
            });
        }
        Ok(Self {
            steps,
            family,
            n_sites: l,
        })
    }

    pub fn steps(&self) -> &[PreparedStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.time).collect()
    }
}

/// A model with its parameters baked into flat buffers, ready for repeated
/// assimilation.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    l: usize,
    d: usize,
    n: usize,
    harmonics: usize,
    w: Vec<f64>,
    v: Vec<f64>,
    k: Vec<f64>,
}

/// Scratch buffers reused across assimilation calls.
#[derive(Debug, Clone)]
pub struct Workspace {
    r: Vec<f64>,
    rf: Vec<f64>,
    q: Vec<f64>,
    lq: Vec<f64>,
    e: Vec<f64>,
    col: Vec<f64>,
}

impl Workspace {
    pub fn new(model: &CompiledModel) -> Self {
        Self::with_dims(model.n, model.l)
    }

    pub fn with_dims(state_dim: usize, n_sites: usize) -> Self {
        Self {
            r: vec![0.0; state_dim * state_dim],
            rf: vec![0.0; state_dim * n_sites],
            q: vec![0.0; n_sites * n_sites],
            lq: vec![0.0; n_sites * n_sites],
            e: vec![0.0; n_sites],
            col: vec![0.0; n_sites],
        }
    }
}

impl CompiledModel {
    pub fn new(spec: &DlmSpec, params: &StaticParams) -> Self {
        let n = spec.state_dim();
        let mut k = vec![0.0; n * n];
        fill_spatial_k(spec, params, &mut k);
        Self {
            l: spec.n_sites(),
            d: spec.state_dim_per_site(),
            n,
            harmonics: spec.family().harmonics(),
            w: params.w.clone(),
            v: params.v.clone(),
            k,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    /// Applies the harmonic rotations `m ← G m`, `C ← G C Gᵀ` for a gap of
    /// `dt` hours.
    fn rotate(&self, state: &mut FilterState, dt: f64) {
        let n = self.n;
        let c = state.c.as_mut_slice();
        let m = state.m.as_mut_slice();
        for r in 1..=self.harmonics {
            let (s, co) = (OMEGA * r as f64 * dt).sin_cos();
            for j in 0..self.l {
                let o = j * self.d + 2 * (r - 1);
                let (a, b) = (m[o], m[o + 1]);
                m[o] = co * a + s * b;
                m[o + 1] = -s * a + co * b;
                // rows (storage is column-major: element (i, j) at j*n + i)
                for col in 0..n {
                    let (a, b) = (c[col * n + o], c[col * n + o + 1]);
                    c[col * n + o] = co * a + s * b;
                    c[col * n + o + 1] = -s * a + co * b;
                }
                for row in 0..n {
                    let (a, b) = (c[o * n + row], c[(o + 1) * n + row]);
                    c[o * n + row] = co * a + s * b;
                    c[(o + 1) * n + row] = -s * a + co * b;
                }
            }
        }
    }

    /// Assimilates one record, returning its log-likelihood increment.
    ///
    /// The first call on a prior state performs the initialisation update
    /// without propagation; later calls propagate by `dt = t − t_last` with
    /// system covariance `dt·diag(W) + K` before conditioning. A record with
    /// no observed sites is a pure propagation step with increment zero.
    pub fn assimilate(
        &self,
        state: &mut FilterState,
        step: &PreparedStep,
        ws: &mut Workspace,
    ) -> Result<f64> {
        let n = self.n;
        let d = self.d;
        let dt = match state.t_last {
            None => None,
            Some(t0) => {
                if !(step.time > t0) {
                    return Err(Error::Ordering {
                        last: t0,
                        next: step.time,
                    });
                }
                Some(step.time - t0)
            }
        };
        if let Some(dt) = dt {
            if self.harmonics > 0 {
                self.rotate(state, dt);
            }
        }

        let r = &mut ws.r;
        {
            let c = state.c.as_slice();
            match dt {
                None => r.copy_from_slice(c),
                Some(dt) => {
                    for i in 0..n {
                        for j in 0..=i {
                            let val = 0.5 * (c[i * n + j] + c[j * n + i]) + self.k[i * n + j];
                            r[i * n + j] = val;
                            r[j * n + i] = val;
                        }
                        r[i * n + i] += dt * self.w[i];
                    }
                }
            }
        }

        let ni = step.sites.len();
        state.t_last = Some(step.time);
        if ni == 0 {
            state.c.as_mut_slice().copy_from_slice(r);
            return Ok(0.0);
        }

        let rows = &step.rows;
        let m = state.m.as_slice();
        // rf = R Fᵀ, n × ni row-major
        let rf = &mut ws.rf;
        for i in 0..n {
            for (a, &site) in step.sites.iter().enumerate() {
                let base = site * d;
                let mut s = 0.0;
                for p in 0..d {
                    s += r[i * n + base + p] * rows[a * d + p];
                }
                rf[i * ni + a] = s;
            }
        }
        let q = &mut ws.q;
        let e = &mut ws.e;
        for (a, &site) in step.sites.iter().enumerate() {
            let base = site * d;
            let mut f = 0.0;
            for p in 0..d {
                f += rows[a * d + p] * m[base + p];
            }
            e[a] = step.y[a] - f;
            for b in 0..=a {
                let mut s = 0.0;
                for p in 0..d {
                    s += rows[a * d + p] * rf[(base + p) * ni + b];
                }
                q[a * ni + b] = s;
                q[b * ni + a] = s;
            }
            q[a * ni + a] += self.v[site];
        }
        let lq = &mut ws.lq;
        if cholesky_with_jitter(&q[..ni * ni], &mut lq[..ni * ni], ni).is_none() {
            return Err(Error::Numerical {
                index: step.index,
                message: format!(
                    "innovation covariance not positive definite at t={}",
                    step.time
                ),
            });
        }
        forward_substitute(&lq[..ni * ni], ni, &mut e[..ni]);
        let quad: f64 = e[..ni].iter().map(|u| u * u).sum();
        let ll = -0.5 * (ni as f64 * LN_2PI + chol_logdet(&lq[..ni * ni], ni) + quad);

        // Z = R Fᵀ L⁻ᵀ, row by row in place.
        let col = &mut ws.col;
        for i in 0..n {
            col[..ni].copy_from_slice(&rf[i * ni..(i + 1) * ni]);
            forward_substitute(&lq[..ni * ni], ni, &mut col[..ni]);
            rf[i * ni..(i + 1) * ni].copy_from_slice(&col[..ni]);
        }
        let m = state.m.as_mut_slice();
        for i in 0..n {
            let mut s = 0.0;
            for a in 0..ni {
                s += rf[i * ni + a] * e[a];
            }
            m[i] += s;
        }
        let c = state.c.as_mut_slice();
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for a in 0..ni {
                    s += rf[i * ni + a] * rf[j * ni + a];
                }
                let val = r[i * n + j] - s;
                c[i * n + j] = val;
                c[j * n + i] = val;
            }
        }
        state.loglik_total += ll;
        state.loglik_window += ll;
        Ok(ll)
    }
}
