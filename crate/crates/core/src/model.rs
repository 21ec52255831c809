//! Spatial dynamic linear model families and their matrix builders.
//!
//! Three families share one layout: the state vector stacks one block of
//! `state_dim_per_site` components per location, and each block evolves as a
//! random walk (rotated, for the Fourier form) perturbed by a per-site
//! diagonal innovation plus a spatially correlated Gaussian-process term.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};

/// Seasonal period in hours. Every harmonic is a multiple of `2π / 24`.
pub const PERIOD_HOURS: f64 = 24.0;

/// Angular frequency of the fundamental harmonic, per hour.
pub const OMEGA: f64 = 2.0 * PI / PERIOD_HOURS;

/// A sensor location with planar coordinates in kilometres.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub id: usize,
    pub name: String,
    pub east_km: f64,
    pub north_km: f64,
}

impl Location {
    pub fn new(id: usize, name: impl Into<String>, east_km: f64, north_km: f64) -> Self {
        Self {
            id,
            name: name.into(),
            east_km,
            north_km,
        }
    }

    pub fn distance_km(&self, other: &Location) -> f64 {
        (self.east_km - other.east_km).hypot(self.north_km - other.north_km)
    }
}

/// Structural family of a spatial DLM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Observation row `(cos(πt/12), sin(πt/12), 1)`, identity evolution.
    Sinusoid,
    /// Fourier form with `q` harmonics and rotating evolution.
    Fourier(usize),
    /// Humidity regressed on the same-site temperature: row `(x_t, 1)`.
    HumidityConditional,
}

impl Family {
    pub fn state_dim_per_site(self) -> usize {
        match self {
            Family::Sinusoid => 3,
            Family::Fourier(q) => 2 * q + 1,
            Family::HumidityConditional => 2,
        }
    }

    /// Number of harmonic rotation blocks in the evolution matrix.
    pub fn harmonics(self) -> usize {
        match self {
            Family::Fourier(q) => q,
            _ => 0,
        }
    }

    /// Which measured variable this family describes.
    pub fn target(self) -> Variable {
        match self {
            Family::HumidityConditional => Variable::Humidity,
            _ => Variable::Temperature,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Sinusoid => write!(f, "sinusoid"),
            Family::Fourier(q) => write!(f, "fourier:{q}"),
            Family::HumidityConditional => write!(f, "humidity"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "sinusoid" => Ok(Family::Sinusoid),
            "humidity" => Ok(Family::HumidityConditional),
            _ => {
                let q = s
                    .strip_prefix("fourier:")
                    .and_then(|q| q.parse::<usize>().ok())
                    .ok_or_else(|| Error::config("model", format!("unknown model `{s}`")))?;
                if q == 0 {
                    return Err(Error::config(
                        "model",
                        "fourier needs at least one harmonic",
                    ));
                }
                Ok(Family::Fourier(q))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    Temperature,
    Humidity,
}

/// Complete structural definition of one spatial DLM.
#[derive(Debug, Clone)]
pub struct DlmSpec {
    family: Family,
    locations: Vec<Location>,
    distances: Vec<f64>,
}

impl DlmSpec {
    pub fn new(family: Family, locations: Vec<Location>) -> Result<Self> {
        if locations.is_empty() {
            return Err(Error::Input("at least one location is required".into()));
        }
        if let Family::Fourier(0) = family {
            return Err(Error::Input("fourier form needs q >= 1".into()));
        }
        for (i, loc) in locations.iter().enumerate() {
            if loc.id != i {
                return Err(Error::Input(format!(
                    "location ids must be 0..L-1 in order; found id {} at position {i}",
                    loc.id
                )));
            }
            if !loc.east_km.is_finite() || !loc.north_km.is_finite() {
                return Err(Error::Input(format!(
                    "location {} has non-finite coordinates",
                    loc.name
                )));
            }
        }
        let l = locations.len();
        let mut distances = vec![0.0; l * l];
        for j in 0..l {
            for k in 0..l {
                distances[j * l + k] = if j == k {
                    0.0
                } else {
                    locations[j].distance_km(&locations[k])
                };
            }
        }
        Ok(Self {
            family,
            locations,
            distances,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn n_sites(&self) -> usize {
        self.locations.len()
    }

    pub fn state_dim_per_site(&self) -> usize {
        self.family.state_dim_per_site()
    }

    pub fn state_dim(&self) -> usize {
        self.n_sites() * self.state_dim_per_site()
    }

    /// Length of the flattened static parameter vector.
    pub fn n_params(&self) -> usize {
        let d = self.state_dim_per_site();
        self.n_sites() * d + self.n_sites() + 2 * d
    }

    pub fn distance(&self, j: usize, k: usize) -> f64 {
        self.distances[j * self.n_sites() + k]
    }

    pub fn with_family(&self, family: Family) -> Self {
        Self {
            family,
            locations: self.locations.clone(),
            distances: self.distances.clone(),
        }
    }

    /// Restricts the spec to a subset of sites, renumbering ids.
    pub fn subset(&self, sites: &[usize]) -> Result<Self> {
        let locs = sites
            .iter()
            .enumerate()
            .map(|(new_id, &j)| {
                let loc = self
                    .locations
                    .get(j)
                    .ok_or_else(|| Error::Input(format!("site {j} out of range")))?;
                Ok(Location::new(
                    new_id,
                    loc.name.clone(),
                    loc.east_km,
                    loc.north_km,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.family, locs)
    }

    /// Human-readable names of the flattened parameters, in flattening order.
    pub fn param_names(&self) -> Vec<String> {
        let d = self.state_dim_per_site();
        let mut names = Vec::with_capacity(self.n_params());
        for loc in &self.locations {
            for k in 0..d {
                names.push(format!("W{}.{}", k + 1, loc.name));
            }
        }
        for loc in &self.locations {
            names.push(format!("V.{}", loc.name));
        }
        for k in 0..d {
            names.push(format!("sigma2.{}", k + 1));
        }
        for k in 0..d {
            names.push(format!("psi.{}", k + 1));
        }
        names
    }
}

/// The static parameter vector: system variances, observation variances and
/// Gaussian-process amplitudes and decays.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticParams {
    /// Per-site system variances, site-major (`L × state_dim_per_site`).
    pub w: Vec<f64>,
    /// Per-site observation variances.
    pub v: Vec<f64>,
    /// GP variance per state channel.
    pub sigma2: Vec<f64>,
    /// GP decay per state channel, in 1/km.
    pub psi: Vec<f64>,
}

impl StaticParams {
    /// The same value for every component of every group.
    pub fn uniform(spec: &DlmSpec, w: f64, v: f64, sigma2: f64, psi: f64) -> Self {
        let d = spec.state_dim_per_site();
        Self {
            w: vec![w; spec.state_dim()],
            v: vec![v; spec.n_sites()],
            sigma2: vec![sigma2; d],
            psi: vec![psi; d],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w.len() + self.v.len() + 2 * self.sigma2.len());
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.v);
        out.extend_from_slice(&self.sigma2);
        out.extend_from_slice(&self.psi);
        out
    }

    pub fn from_flat(spec: &DlmSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.n_params() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                spec.n_params(),
                flat.len()
            )));
        }
        let nw = spec.state_dim();
        let l = spec.n_sites();
        let d = spec.state_dim_per_site();
        Ok(Self {
            w: flat[..nw].to_vec(),
            v: flat[nw..nw + l].to_vec(),
            sigma2: flat[nw + l..nw + l + d].to_vec(),
            psi: flat[nw + l + d..].to_vec(),
        })
    }

    fn check_shape(&self, spec: &DlmSpec) -> Result<()> {
        let d = spec.state_dim_per_site();
        if self.w.len() != spec.state_dim()
            || self.v.len() != spec.n_sites()
            || self.sigma2.len() != d
            || self.psi.len() != d
        {
            return Err(Error::Input(
                "parameter lengths do not match the model".into(),
            ));
        }
        Ok(())
    }

    /// Checks shapes, strict positivity, the upper bound and optionally the
    /// per-site `W < V` constraint.
    pub fn validate(&self, spec: &DlmSpec, upper: f64, constrain_w_lt_v: bool) -> Result<()> {
        self.check_shape(spec)?;
        if let Some(bad) = self.flatten().iter().find(|x| !(**x > 0.0 && **x <= upper)) {
            return Err(Error::Domain(format!(
                "parameter {bad} outside (0, {upper}]"
            )));
        }
        if constrain_w_lt_v && !self.satisfies_w_lt_v(spec) {
            return Err(Error::Domain("W < V constraint violated".into()));
        }
        Ok(())
    }

    pub fn satisfies_w_lt_v(&self, spec: &DlmSpec) -> bool {
        let d = spec.state_dim_per_site();
        (0..spec.n_sites()).all(|j| self.w[j * d..(j + 1) * d].iter().all(|&w| w < self.v[j]))
    }

    pub fn gp(&self, channel: usize) -> GpCovariance {
        GpCovariance {
            sigma2: self.sigma2[channel],
            psi: self.psi[channel],
        }
    }
}

/// Exponential covariance `σ² exp(−ψ d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpCovariance {
    pub sigma2: f64,
    pub psi: f64,
}

impl GpCovariance {
    pub fn new(sigma2: f64, psi: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !(psi > 0.0) {
            return Err(Error::Domain(format!(
                "GP covariance needs sigma2 > 0 and psi > 0 (got {sigma2}, {psi})"
            )));
        }
        Ok(Self { sigma2, psi })
    }

    #[inline]
    fn eval_unchecked(&self, d: f64) -> f64 {
        self.sigma2 * (-self.psi * d).exp()
    }
}

pub fn gp_cov(gp: &GpCovariance, d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!(
            "distance must be non-negative, got {d}"
        )));
    }
    Ok(gp.eval_unchecked(d))
}

/// Dense `(L·m) × (L·m)` spatial covariance of the GP innovations. Block
/// `(j, j′)` is `diag_m f_m(d_jj′)`.
pub fn build_spatial_k(spec: &DlmSpec, params: &StaticParams) -> DMatrix<f64> {
    let n = spec.state_dim();
    let mut k = DMatrix::zeros(n, n);
    fill_spatial_k(spec, params, k.as_mut_slice());
    k
}

/// Writes the spatial covariance into a flat `n × n` buffer (symmetric, so
/// row- and column-major agree).
pub(crate) fn fill_spatial_k(spec: &DlmSpec, params: &StaticParams, out: &mut [f64]) {
    let l = spec.n_sites();
    let d = spec.state_dim_per_site();
    let n = l * d;
    out[..n * n].iter_mut().for_each(|x| *x = 0.0);
    for j in 0..l {
        for jp in 0..l {
            let dist = spec.distance(j, jp);
            for m in 0..d {
                let v = params.gp(m).eval_unchecked(dist);
                out[(j * d + m) * n + jp * d + m] = v;
            }
        }
    }
}

/// Row selector onto the observed sites, stored as an ascending index list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incidence {
    sites: Vec<usize>,
    n_sites: usize,
}

pub fn build_incidence(mask: &[bool]) -> Incidence {
    Incidence {
        sites: mask
            .iter()
            .enumerate()
            .filter_map(|(j, &m)| m.then_some(j))
            .collect(),
        n_sites: mask.len(),
    }
}

impl Incidence {
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn rows(&self) -> usize {
        self.sites.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.sites.iter().map(|&j| values[j]).collect()
    }

    /// Dense `n_i × L` 0/1 matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.sites.len(), self.n_sites);
        for (r, &j) in self.sites.iter().enumerate() {
            p[(r, j)] = 1.0;
        }
        p
    }
}

/// Per-site observation row at time `t` (hours since the first record).
///
/// `regressor` is the same-site temperature and is required only by the
/// humidity family.
pub fn obs_row(family: Family, t: f64, regressor: Option<f64>) -> Result<Vec<f64>> {
    match family {
        Family::Sinusoid => {
            let a = OMEGA * t;
            Ok(vec![a.cos(), a.sin(), 1.0])
        }
        Family::Fourier(q) => {
            let mut row = Vec::with_capacity(2 * q + 1);
            for _ in 0..q {
                row.push(1.0);
                row.push(0.0);
            }
            row.push(1.0);
            Ok(row)
        }
        Family::HumidityConditional => {
            let x = regressor.ok_or_else(|| {
                Error::Input("humidity observation without a same-site temperature".into())
            })?;
            Ok(vec![x, 1.0])
        }
    }
}

/// Post-incidence observation matrix: `n_i × (L·d)`, block-diagonal over the
/// observed sites.
pub fn obs_matrix(
    spec: &DlmSpec,
    t: f64,
    incidence: &Incidence,
    regressors: Option<&[Option<f64>]>,
) -> Result<DMatrix<f64>> {
    let d = spec.state_dim_per_site();
    let mut f = DMatrix::zeros(incidence.rows(), spec.state_dim());
    for (r, &j) in incidence.sites().iter().enumerate() {
        let reg = regressors.and_then(|x| x.get(j).copied().flatten());
        let row = obs_row(spec.family(), t, reg)?;
        for (c, v) in row.into_iter().enumerate() {
            f[(r, j * d + c)] = v;
        }
    }
    Ok(f)
}

/// Harmonic rotation for harmonic `r` advanced by `dt` hours.
pub fn harmonic(r: usize, dt: f64) -> Matrix2<f64> {
    let a = OMEGA * r as f64 * dt;
    let (s, c) = a.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// One-hour evolution matrix over all sites.
pub fn system_matrix(spec: &DlmSpec) -> DMatrix<f64> {
    transition_matrix(spec, 1.0)
}

/// Evolution matrix for a gap of `dt` hours: identity for the sinusoid and
/// humidity families, block-diagonal rotations by `πr·dt/12` for Fourier.
pub fn transition_matrix(spec: &DlmSpec, dt: f64) -> DMatrix<f64> {
    let n = spec.state_dim();
    let mut g = DMatrix::identity(n, n);
    let q = spec.family().harmonics();
    let d = spec.state_dim_per_site();
    for j in 0..spec.n_sites() {
        for r in 1..=q {
            let h = harmonic(r, dt);
            let o = j * d + 2 * (r - 1);
            g[(o, o)] = h[(0, 0)];
            g[(o, o + 1)] = h[(0, 1)];
            g[(o + 1, o)] = h[(1, 0)];
            g[(o + 1, o + 1)] = h[(1, 1)];
        }
    }
    g
}

/// Cosine-form view of a sinusoid state block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeasonalComponents {
    pub amplitude: f64,
    /// `None` when the amplitude is exactly zero.
    pub phase: Option<f64>,
    pub basal: f64,
}

pub fn amplitude_phase(state: [f64; 3]) -> SeasonalComponents {
    let [a, b, basal] = state;
    SeasonalComponents {
        amplitude: a.hypot(b),
        phase: if a == 0.0 && b == 0.0 {
            None
        } else {
            Some(b.atan2(a))
        },
        basal,
    }
}

/// Dense system matrices for one time step, after incidence projection.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// `dt·diag(W) + K`.
    pub w_tilde: DMatrix<f64>,
    pub v_tilde: DMatrix<f64>,
}

impl SystemMatrices {
    /// Assembles all matrices for an observation at time `t`, `dt` hours after
    /// the previous one.
    pub fn assemble(
        spec: &DlmSpec,
        params: &StaticParams,
        t: f64,
        dt: f64,
        incidence: &Incidence,
        regressors: Option<&[Option<f64>]>,
    ) -> Result<Self> {
        let f = obs_matrix(spec, t, incidence, regressors)?;
        let g = transition_matrix(spec, dt);
        let mut w_tilde = build_spatial_k(spec, params);
        for (i, w) in params.w.iter().enumerate() {
            w_tilde[(i, i)] += dt * w;
        }
        let v_tilde = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
            incidence.sites().iter().map(|&j| params.v[j]).collect(),
        ));
        Ok(Self {
            f,
            g,
            w_tilde,
            v_tilde,
        })
    }
}
