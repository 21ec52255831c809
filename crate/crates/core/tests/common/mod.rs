//! Reference computations written from the model definition alone, with no
//! calls into the filter, model or SMC code. Only the plain data types are
//! shared with the library.

#![allow(dead_code)]

use std::f64::consts::PI;

use dlm_ibis::data::ObservationRecord;
use dlm_ibis::filter::StatePrior;
use dlm_ibis::model::{DlmSpec, Family, Location, StaticParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Sinusoid,
    Fourier(usize),
    Humidity,
}

#[derive(Debug, Clone)]
pub struct Obs {
    pub time: f64,
    /// Target values per site.
    pub y: Vec<Option<f64>>,
    /// Same-site temperature, used only by the humidity kind.
    pub x: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct OracleModel {
    pub kind: Kind,
    pub coords: Vec<(f64, f64)>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub psi: Vec<f64>,
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
}

/// Observed-data Gaussian with every state stacked.
pub struct Joint {
    pub state_mean: DVector<f64>,
    pub state_cov: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub y: DVector<f64>,
    pub obs_cov: DMatrix<f64>,
}

impl OracleModel {
    pub fn per_site(&self) -> usize {
        match self.kind {
            Kind::Sinusoid => 3,
            Kind::Fourier(q) => 2 * q + 1,
            Kind::Humidity => 2,
        }
    }

    pub fn dim(&self) -> usize {
        self.per_site() * self.coords.len()
    }

    fn row(&self, t: f64, x: Option<f64>) -> Vec<f64> {
        match self.kind {
            Kind::Sinusoid => vec![(PI * t / 12.0).cos(), (PI * t / 12.0).sin(), 1.0],
            Kind::Fourier(q) => {
                let mut r = vec![0.0; 2 * q + 1];
                for k in 0..q {
                    r[2 * k] = 1.0;
                }
                r[2 * q] = 1.0;
                r
            }
            Kind::Humidity => vec![x.expect("regressor"), 1.0],
        }
    }

    fn g(&self, dt: f64) -> DMatrix<f64> {
        let n = self.dim();
        let d = self.per_site();
        let mut g = DMatrix::identity(n, n);
        if let Kind::Fourier(q) = self.kind {
            for j in 0..self.coords.len() {
                for r in 1..=q {
                    let a = PI * r as f64 * dt / 12.0;
                    let o = j * d + 2 * (r - 1);
                    g[(o, o)] = a.cos();
                    g[(o, o + 1)] = a.sin();
                    g[(o + 1, o)] = -a.sin();
                    g[(o + 1, o + 1)] = a.cos();
                }
            }
        }
        g
    }

    fn q(&self, dt: f64) -> DMatrix<f64> {
        let n = self.dim();
        let d = self.per_site();
        let l = self.coords.len();
        let mut q = DMatrix::zeros(n, n);
        for a in 0..l {
            for b in 0..l {
                let dx = self.coords[a].0 - self.coords[b].0;
                let dy = self.coords[a].1 - self.coords[b].1;
                let dist = (dx * dx + dy * dy).sqrt();
                for m in 0..d {
                    q[(a * d + m, b * d + m)] = self.sigma2[m] * (-self.psi[m] * dist).exp();
                }
            }
        }
        for i in 0..n {
            q[(i, i)] += dt * self.w[i];
        }
        q
    }

    /// Builds the stacked state vector as a linear map of the initial state
    /// and the innovations, then projects onto the observed coordinates.
    pub fn joint(&self, obs: &[Obs]) -> Joint {
        let n = obs.len();
        let s = self.dim();
        let d = self.per_site();
        let big = n * s;
        let gs: Vec<DMatrix<f64>> = (0..n)
            .map(|i| {
                if i == 0 {
                    DMatrix::identity(s, s)
                } else {
                    self.g(obs[i].time - obs[i - 1].time)
                }
            })
            .collect();
        let mut noise = DMatrix::zeros(big, big);
        noise.view_mut((0, 0), (s, s)).copy_from(&self.c0);
        for i in 1..n {
            let q = self.q(obs[i].time - obs[i - 1].time);
            noise.view_mut((i * s, i * s), (s, s)).copy_from(&q);
        }
        let mut a = DMatrix::zeros(big, big);
        for i in 0..n {
            for k in 0..=i {
                let mut phi = DMatrix::identity(s, s);
                for step in (k + 1)..=i {
                    phi = &gs[step] * phi;
                }
                a.view_mut((i * s, k * s), (s, s)).copy_from(&phi);
            }
        }
        let mut e0 = DVector::zeros(big);
        e0.rows_mut(0, s).copy_from(&self.m0);
        let state_mean = &a * e0;
        let state_cov = &a * noise * a.transpose();

        let mut rows = Vec::new();
        let mut ys = Vec::new();
        let mut vs = Vec::new();
        for (i, o) in obs.iter().enumerate() {
            for (j, y) in o.y.iter().enumerate() {
                if let Some(y) = y {
                    let mut r = vec![0.0; big];
                    for (c, f) in self.row(o.time, o.x[j]).into_iter().enumerate() {
                        r[i * s + j * d + c] = f;
                    }
                    rows.push(r);
                    ys.push(*y);
                    vs.push(self.v[j]);
                }
            }
        }
        let h = DMatrix::from_fn(rows.len(), big, |r, c| rows[r][c]);
        let obs_cov =
            &h * &state_cov * h.transpose() + DMatrix::from_diagonal(&DVector::from_vec(vs));
        Joint {
            state_mean,
            state_cov,
            h,
            y: DVector::from_vec(ys),
            obs_cov,
        }
    }

    pub fn log_likelihood(&self, obs: &[Obs]) -> f64 {
        let j = self.joint(obs);
        gaussian_logpdf(&j.y, &(&j.h * &j.state_mean), &j.obs_cov)
    }

    /// Mean and covariance of all stacked states given every observation.
    pub fn smoothing(&self, obs: &[Obs]) -> (DVector<f64>, DMatrix<f64>) {
        let j = self.joint(obs);
        if j.y.is_empty() {
            return (j.state_mean, j.state_cov);
        }
        let gain_t = j
            .obs_cov
            .clone()
            .cholesky()
            .expect("observation covariance is positive definite")
            .solve(&(&j.h * &j.state_cov));
        let resid = &j.y - &j.h * &j.state_mean;
        let mean = &j.state_mean + gain_t.transpose() * resid;
        let cov = &j.state_cov - (&j.state_cov * j.h.transpose()) * &gain_t;
        (mean, (&cov + cov.transpose()) * 0.5)
    }

    /// Textbook dense Kalman filter; cheap enough for grid quadrature.
    pub fn kalman_log_likelihood(&self, obs: &[Obs]) -> f64 {
        let d = self.per_site();
        let s = self.dim();
        let mut m = self.m0.clone();
        let mut c = self.c0.clone();
        let mut total = 0.0;
        for (i, o) in obs.iter().enumerate() {
            if i > 0 {
                let dt = o.time - obs[i - 1].time;
                let g = self.g(dt);
                m = &g * m;
                c = &g * c * g.transpose() + self.q(dt);
            }
            let sites: Vec<usize> = (0..o.y.len()).filter(|&j| o.y[j].is_some()).collect();
            if sites.is_empty() {
                continue;
            }
            let mut f = DMatrix::zeros(sites.len(), s);
            for (r, &j) in sites.iter().enumerate() {
                for (k, v) in self.row(o.time, o.x[j]).into_iter().enumerate() {
                    f[(r, j * d + k)] = v;
                }
            }
            let y = DVector::from_iterator(sites.len(), sites.iter().map(|&j| o.y[j].unwrap()));
            let v = DMatrix::from_diagonal(&DVector::from_iterator(
                sites.len(),
                sites.iter().map(|&j| self.v[j]),
            ));
            let q = &f * &c * f.transpose() + v;
            let fm = &f * &m;
            total += gaussian_logpdf(&y, &fm, &q);
            let k = q.cholesky().unwrap().solve(&(&f * &c)).transpose();
            m = &m + &k * (y - fm);
            c = &c - &k * &f * &c;
            c = (&c + c.transpose()) * 0.5;
        }
        total
    }
}

pub fn gaussian_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let chol = cov
        .clone()
        .cholesky()
        .expect("covariance is positive definite");
    let r = y - mean;
    let z = chol.l().solve_lower_triangular(&r).unwrap();
    let logdet: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    -0.5 * (y.len() as f64 * (2.0 * PI).ln() + logdet + z.dot(&z))
}

/// Converts records to oracle observations for a temperature or humidity
/// target.
pub fn observations(records: &[ObservationRecord], humidity: bool) -> Vec<Obs> {
    records
        .iter()
        .map(|r| Obs {
            time: r.time,
            y: if humidity {
                r.humidity.clone()
            } else {
                r.temperature.clone()
            },
            x: r.temperature.clone(),
        })
        .collect()
}

/// A random small configuration in both library and oracle form.
pub struct Case {
    pub spec: DlmSpec,
    pub params: StaticParams,
    pub prior: StatePrior,
    pub records: Vec<ObservationRecord>,
    pub oracle: OracleModel,
    pub humidity: bool,
}

fn random_pd<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.2;
    (&m + m.transpose()) * 0.5
}

pub fn random_case<R: Rng>(rng: &mut R, max_sites: usize, max_len: usize) -> Case {
    let l = rng.random_range(1..=max_sites);
    let kind = match rng.random_range(0..4) {
        0 => Kind::Sinusoid,
        1 => Kind::Fourier(1),
        2 => Kind::Fourier(2),
        _ => Kind::Humidity,
    };
    let family = match kind {
        Kind::Sinusoid => Family::Sinusoid,
        Kind::Fourier(q) => Family::Fourier(q),
        Kind::Humidity => Family::HumidityConditional,
    };
    let coords: Vec<(f64, f64)> = (0..l)
        .map(|_| (rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)))
        .collect();
    let locations = coords
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| Location::new(i, format!("s{i}"), x, y))
        .collect();
    let spec = DlmSpec::new(family, locations).unwrap();
    let d = spec.state_dim_per_site();
    let params = StaticParams {
        w: (0..l * d).map(|_| rng.random_range(0.01..1.5)).collect(),
        v: (0..l).map(|_| rng.random_range(0.1..2.0)).collect(),
        sigma2: (0..d).map(|_| rng.random_range(0.05..2.0)).collect(),
        psi: (0..d).map(|_| rng.random_range(0.005..0.5)).collect(),
    };
    let s = spec.state_dim();
    let m0 = DVector::from_fn(s, |_, _| rng.random_range(-5.0..5.0));
    let c0 = random_pd(s, rng);
    let prior = StatePrior::new(m0.clone(), c0.clone()).unwrap();

    let n = rng.random_range(1..=max_len);
    let mut t = rng.random_range(0.0..24.0);
    let humidity = kind == Kind::Humidity;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            t += if rng.random_bool(0.5) {
                1.0
            } else {
                rng.random_range(0.25..6.0)
            };
        }
        let temperature: Vec<Option<f64>> = (0..l)
            .map(|_| rng.random_bool(0.75).then(|| rng.random_range(0.0..30.0)))
            .collect();
        let hum: Vec<Option<f64>> = temperature
            .iter()
            .map(|x| {
                (humidity && x.is_some() && rng.random_bool(0.75))
                    .then(|| rng.random_range(40.0..100.0))
            })
            .collect();
        records.push(ObservationRecord {
            time: t,
            temperature,
            humidity: hum,
        });
    }
    let oracle = OracleModel {
        kind,
        coords,
        w: params.w.clone(),
        v: params.v.clone(),
        sigma2: params.sigma2.clone(),
        psi: params.psi.clone(),
        m0,
        c0,
    };
    Case {
        spec,
        params,
        prior,
        records,
        oracle,
        humidity,
    }
}

/// Weighted two-sample Kolmogorov-Smirnov distance, written out directly.
pub fn ks_distance(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> f64 {
    let mut pts: Vec<(f64, f64, f64)> = Vec::with_capacity(a.len() + b.len());
    let sa: f64 = wa.iter().sum();
    let sb: f64 = wb.iter().sum();
    pts.extend(a.iter().zip(wa).map(|(&x, &w)| (x, w / sa, 0.0)));
    pts.extend(b.iter().zip(wb).map(|(&x, &w)| (x, 0.0, w / sb)));
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    let (mut fa, mut fb, mut best) = (0.0f64, 0.0f64, 0.0f64);
    let mut i = 0;
    while i < pts.len() {
        let x = pts[i].0;
        while i < pts.len() && pts[i].0 == x {
            fa += pts[i].1;
            fb += pts[i].2;
            i += 1;
        }
        best = best.max((fa - fb).abs());
    }
    best
}
