//! Bayesian graduation of mortality tables across one or more populations.
//!
//! Log central rates are smoothed along age with multivariate dynamic linear
//! models (local linear trends, optionally tied together by a common term),
//! using age-varying discount factors for the evolution covariance. Inference
//! is a Gibbs sampler that alternates forward-filtering backward-sampling of
//! the states, a Wishart draw of the observational precision and
//! conditional-normal imputation of missing cells.

pub mod commands;
pub mod data;
pub mod distributions;
pub mod error;
pub mod forecast;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod stats;

pub use error::{Error, ErrorCategory, Result};
