use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::model::{DlmSpec, StaticParams};

pub const DEFAULT_SHAPE: f64 = 1.0;
pub const DEFAULT_SCALE: f64 = 0.01;
pub const DEFAULT_UPPER: f64 = 10.0;

/// Give up on constrained rejection sampling after this many tries per site.
const MAX_REJECTIONS: usize = 100_000;

/// Prior on one flattened parameter component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentPrior {
    /// Inverse-Gamma with density `∝ x^{−a−1} e^{−b/x}`, truncated above at
    /// the prior's upper bound.
    InvGamma { shape: f64, scale: f64 },
    /// Point mass; the component is not sampled or moved.
    Fixed(f64),
}

/// Independent truncated inverse-Gamma priors over the flattened parameter
/// vector, optionally restricted to `W < V` at every site.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    components: Vec<ComponentPrior>,
    upper: f64,
    constrain_w_lt_v: bool,
    n_sites: usize,
    d: usize,
    free: Vec<usize>,
}

impl PriorSpec {
    /// IG(1, 0.01) on every component, truncated at 10.
    pub fn new(spec: &DlmSpec) -> Self {
        Self::inverse_gamma(spec, DEFAULT_SHAPE, DEFAULT_SCALE, DEFAULT_UPPER)
            .expect("default prior is valid")
    }

    pub fn inverse_gamma(spec: &DlmSpec, shape: f64, scale: f64, upper: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0) {
            return Err(Error::config("prior", "shape and scale must be positive"));
        }
        if !(upper > 0.0) {
            return Err(Error::config(
                "prior_upper",
                "truncation bound must be positive",
            ));
        }
        let components = vec![ComponentPrior::InvGamma { shape, scale }; spec.n_params()];
        Ok(Self {
            free: (0..components.len()).collect(),
            components,
            upper,
            constrain_w_lt_v: false,
            n_sites: spec.n_sites(),
            d: spec.state_dim_per_site(),
        })
    }

    /// A point mass at `params`: every component fixed.
    pub fn point_mass(spec: &DlmSpec, params: &StaticParams) -> Result<Self> {
        let mut p = Self::new(spec);
        for (i, x) in params.flatten().into_iter().enumerate() {
            p = p.fix(i, x)?;
        }
        Ok(p)
    }

    pub fn fix(mut self, index: usize, value: f64) -> Result<Self> {
        if index >= self.components.len() {
            return Err(Error::config(
                "prior",
                format!("no parameter at index {index}"),
            ));
        }
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::config(
                "prior",
                "fixed values must be positive and finite",
            ));
        }
        self.components[index] = ComponentPrior::Fixed(value);
        self.free = (0..self.components.len())
            .filter(|&i| !matches!(self.components[i], ComponentPrior::Fixed(_)))
            .collect();
        Ok(self)
    }

    pub fn with_constraint(mut self, constrain_w_lt_v: bool) -> Self {
        self.constrain_w_lt_v = constrain_w_lt_v;
        self
    }

    pub fn components(&self) -> &[ComponentPrior] {
        &self.components
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn constrain_w_lt_v(&self) -> bool {
        self.constrain_w_lt_v
    }

    /// Indices of components that are sampled and moved.
    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    pub fn n_params(&self) -> usize {
        self.components.len()
    }

    fn v_index(&self, site: usize) -> usize {
        self.n_sites * self.d + site
    }

    fn satisfies_constraint(&self, flat: &[f64]) -> bool {
        (0..self.n_sites).all(|j| {
            let v = flat[self.v_index(j)];
            flat[j * self.d..(j + 1) * self.d].iter().all(|&w| w < v)
        })
    }

    pub fn in_support(&self, flat: &[f64]) -> bool {
        if flat.len() != self.components.len() {
            return false;
        }
        let ok = self.components.iter().zip(flat).all(|(c, &x)| match c {
            ComponentPrior::Fixed(v) => x == *v,
            ComponentPrior::InvGamma { .. } => x > 0.0 && x <= self.upper,
        });
        ok && (!self.constrain_w_lt_v || self.satisfies_constraint(flat))
    }

    /// Log prior density over the free components, normalised for the
    /// truncation. With the `W < V` constraint the density is restricted to
    /// the constrained set but not renormalised; the missing constant cancels
    /// in every ratio taken by the samplers. Returns `−∞` outside the support.
    pub fn log_density(&self, flat: &[f64]) -> f64 {
        if !self.in_support(flat) {
            return f64::NEG_INFINITY;
        }
        self.free
            .iter()
            .map(|&i| match self.components[i] {
                ComponentPrior::InvGamma { shape, scale } => {
                    let x = flat[i];
                    shape * scale.ln()
                        - ln_gamma(shape)
                        - (shape + 1.0) * x.ln()
                        - scale / x
                        - gamma_ur(shape, scale / self.upper).ln()
                }
                ComponentPrior::Fixed(_) => 0.0,
            })
            .sum()
    }

    fn draw_component<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Result<f64> {
        match self.components[i] {
            ComponentPrior::Fixed(v) => Ok(v),
            ComponentPrior::InvGamma { shape, scale } => {
                let g = Gamma::new(shape, 1.0 / scale)
                    .map_err(|e| Error::config("prior", e.to_string()))?;
                for _ in 0..MAX_REJECTIONS {
                    let x = 1.0 / g.sample(rng);
                    if x > 0.0 && x <= self.upper {
                        return Ok(x);
                    }
                }
                Err(Error::config(
                    "prior",
                    "truncation bound leaves negligible prior mass",
                ))
            }
        }
    }

    /// Draws a flattened parameter vector. Truncation and the `W < V`
    /// constraint are enforced by rejection, site by site.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let n = self.components.len();
        let mut flat = vec![0.0; n];
        for j in 0..self.n_sites {
            let block: Vec<usize> = (j * self.d..(j + 1) * self.d)
                .chain(std::iter::once(self.v_index(j)))
                .collect();
            let mut tries = 0;
            loop {
                for &i in &block {
                    flat[i] = self.draw_component(i, rng)?;
                }
                let v = flat[self.v_index(j)];
                if !self.constrain_w_lt_v || block[..self.d].iter().all(|&i| flat[i] < v) {
                    break;
                }
                tries += 1;
                if tries >= MAX_REJECTIONS {
                    return Err(Error::config(
                        "constrain_w_lt_v",
                        format!("cannot satisfy W < V at site {j} under this prior"),
                    ));
                }
            }
        }
        for i in (self.n_sites * (self.d + 1))..n {
            flat[i] = self.draw_component(i, rng)?;
        }
        Ok(flat)
    }
}
