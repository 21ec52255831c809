//! Sequential Monte Carlo over static parameters.
//!
//! Particles carry a parameter vector together with the Kalman filter state
//! it induces, so that reweighting is one filter step per particle. When the
//! effective sample size drops, particles are resampled and moved with a
//! Metropolis–Hastings kernel: a log-normal random walk with full-data
//! replay ([`run_ibis`]), or a particle-centred kernel with window-only
//! replay ([`run_online_ibis`]).

mod ibis;
mod prior;
mod proposal;
mod window;

pub use ibis::{
    apply_increments, log_bayes_factor, mh_move_full, mh_move_windowed, multinomial_resample,
    resample_indices, reweight, run_ibis, run_online_ibis, Anchor, EvidencePoint, IbisConfig,
    IbisOutput, MoveContext, MoveOutcome, Particle, ParticleSet, TriggerEvent, WindowStart,
};
pub use prior::{ComponentPrior, PriorSpec, DEFAULT_SCALE, DEFAULT_SHAPE, DEFAULT_UPPER};
pub use proposal::{
    gamma_scale, proposal_factor, silverman_bandwidth, weighted_covariance, KdeProposal,
    BANDWIDTH_FLOOR,
};
pub use window::window_partition;

use crate::error::{Error, Result};

/// `log Σ exp(xᵢ)`, stable for large magnitudes. Returns `−∞` for an empty
/// slice or when every entry is `−∞`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Shifts log-weights so that they exponentiate to a probability vector,
/// returning the log normaliser that was removed.
pub fn normalize_log_weights(lw: &mut [f64]) -> Result<f64> {
    let lse = log_sum_exp(lw);
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    for w in lw.iter_mut() {
        *w -= lse;
    }
    Ok(lse)
}

/// Normalised weights from log-weights.
pub fn normalized_weights(lw: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(lw);
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    Ok(lw.iter().map(|w| (w - lse).exp()).collect())
}

/// Effective sample size `1 / Σ ωₖ²` of the normalised weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let doubled: Vec<f64> = log_weights.iter().map(|w| 2.0 * (w - lse)).collect();
    let n = log_weights.len() as f64;
    Ok((-log_sum_exp(&doubled)).exp().clamp(1.0, n))
}
