use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;
use crate::model::{build_spatial_k, obs_row, transition_matrix, DlmSpec, StaticParams, Variable};

use super::FilterState;

/// Observation draws for horizons `1..=H`, one value per site.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDraw {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Draws a future path of `horizon_steps` observations spaced `step_hours`
/// apart, starting from the filtering distribution in `state`.
///
/// The state is drawn from `N(m, C)` and then pushed through the system
/// equation one step at a time, so horizon 1 is distributed as
/// `N(F G m, F (G C Gᵀ + W̃) Fᵀ + V)`.
pub fn forecast<R: Rng + ?Sized>(
    state: &FilterState,
    horizon_steps: usize,
    step_hours: f64,
    params: &StaticParams,
    spec: &DlmSpec,
    rng: &mut R,
) -> Result<ForecastDraw> {
    if horizon_steps == 0 {
        return Err(Error::config(
            "horizon",
            "forecast horizon must be at least 1",
        ));
    }
    if !(step_hours > 0.0) {
        return Err(Error::config(
            "step_hours",
            "forecast step must be positive",
        ));
    }
    if spec.family().target() == Variable::Humidity {
        return Err(Error::Input(
            "humidity forecasts need future temperature regressors".into(),
        ));
    }
    let t0 = state
        .t_last
        .ok_or_else(|| Error::State("forecast needs at least one assimilated record".into()))?;
    let n = spec.state_dim();
    let d = spec.state_dim_per_site();
    let normal =
        |rng: &mut R, k: usize| DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));

    let g = transition_matrix(spec, step_hours);
    let mut w_tilde = build_spatial_k(spec, params);
    for (p, w) in params.w.iter().enumerate() {
        w_tilde[(p, p)] += step_hours * w;
    }
    let w_sqrt = psd_sqrt(&w_tilde);
    let mut theta = &state.m + psd_sqrt(&state.c) * normal(rng, n);

    let mut times = Vec::with_capacity(horizon_steps);
    let mut values = Vec::with_capacity(horizon_steps);
    for h in 1..=horizon_steps {
        let t = t0 + h as f64 * step_hours;
        theta = &g * theta + &w_sqrt * normal(rng, n);
        let mut obs = Vec::with_capacity(spec.n_sites());
        for j in 0..spec.n_sites() {
            let row = obs_row(spec.family(), t, None)?;
            let mean: f64 = row
                .iter()
                .enumerate()
                .map(|(p, f)| f * theta[j * d + p])
                .sum();
            let z: f64 = rng.sample(StandardNormal);
            obs.push(mean + params.v[j].sqrt() * z);
        }
        times.push(t);
        values.push(obs);
    }
    Ok(ForecastDraw { times, values })
}
