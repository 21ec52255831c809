//! Spatially coupled dynamic linear models for hourly sensor temperatures,
//! with sequential Monte Carlo inference over static parameters.
//!
//! The crate is organised bottom up:
//!
//! - [`model`]: model families, parameter layout and system matrices.
//! - [`filter`]: Kalman forward filter, backward sampler and forecasts.
//! - [`smc`]: priors, weights, resampling, proposals and IBIS drivers.
//! - [`parallel`]: batched IBIS across a worker pool and the final merge.
//! - [`data`]: observation records, file formats and synthetic data.
//! - [`config`] and [`cli`]: run configuration and the commands behind the
//!   `dlm-ibis` binary.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod smc;
pub mod stats;

pub use error::{Error, Result};
