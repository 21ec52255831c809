//! Gaussian forward filtering, backward sampling and predictive draws.
//!
//! [`CompiledModel::assimilate`] is the structured fast path used for every
//! particle update; [`filter_init`] and [`filter_step`] are the direct dense
//! formulation on assembled [`SystemMatrices`](crate::model::SystemMatrices).
//! Both produce the same posterior summaries and likelihood increments.

mod dense;
mod engine;
mod forecast;
mod smooth;

pub use dense::{filter_init, filter_step};
pub use engine::{CompiledModel, PreparedSeries, PreparedStep, Workspace};
pub use forecast::{forecast, ForecastDraw};
pub use smooth::{backward_sample, predict_within_sample, Smoother, SmoothingDraw};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{DlmSpec, Family};

/// Gaussian prior on the state at the first observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePrior {
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
}

impl StatePrior {
    pub fn new(m0: DVector<f64>, c0: DMatrix<f64>) -> Result<Self> {
        if c0.nrows() != m0.len() || c0.ncols() != m0.len() {
            return Err(Error::Input(
                "prior mean and covariance sizes differ".into(),
            ));
        }
        if (&c0 - c0.transpose()).abs().max() > 1e-12 {
            return Err(Error::Input("prior covariance must be symmetric".into()));
        }
        Ok(Self { m0, c0 })
    }

    /// Per-site mean block repeated over sites, with identity covariance.
    ///
    /// Temperature families centre the basal level at 17 °C with zero
    /// seasonal coefficients; the humidity family centres on slope −1 and
    /// basal level 90 %.
    pub fn default_for(spec: &DlmSpec) -> Self {
        let d = spec.state_dim_per_site();
        let block: Vec<f64> = match spec.family() {
            Family::HumidityConditional => vec![-1.0, 90.0],
            _ => {
                let mut b = vec![0.0; d];
                b[d - 1] = 17.0;
                b
            }
        };
        let m0 = DVector::from_iterator(
            spec.state_dim(),
            (0..spec.n_sites()).flat_map(|_| block.iter().copied()),
        );
        Self {
            m0,
            c0: DMatrix::identity(spec.state_dim(), spec.state_dim()),
        }
    }
}

/// Filtering summaries after the most recent assimilated record.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub m: DVector<f64>,
    pub c: DMatrix<f64>,
    pub loglik_total: f64,
    pub loglik_window: f64,
    /// `None` until the first record has been assimilated.
    pub t_last: Option<f64>,
}

impl FilterState {
    /// A state that still represents the prior; the next assimilation is the
    /// initialisation step (no propagation).
    pub fn from_prior(prior: &StatePrior) -> Self {
        Self {
            m: prior.m0.clone(),
            c: prior.c0.clone(),
            loglik_total: 0.0,
            loglik_window: 0.0,
            t_last: None,
        }
    }
}

/// Runs the fast filter over a whole series, returning the final state and
/// every intermediate state.
pub fn filter_history(
    model: &CompiledModel,
    prior: &StatePrior,
    series: &PreparedSeries,
) -> Result<Vec<FilterState>> {
    let mut ws = Workspace::new(model);
    let mut state = FilterState::from_prior(prior);
    let mut out = Vec::with_capacity(series.len());
    for step in series.steps() {
        model.assimilate(&mut state, step, &mut ws)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Total observed-data log-likelihood of a series.
pub fn log_likelihood(
    model: &CompiledModel,
    prior: &StatePrior,
    series: &PreparedSeries,
) -> Result<f64> {
    let mut ws = Workspace::new(model);
    let mut state = FilterState::from_prior(prior);
    for step in series.steps() {
        model.assimilate(&mut state, step, &mut ws)?;
    }
    Ok(state.loglik_total)
}
