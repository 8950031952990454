//! Conditional flow matching for univariate time series.
//!
//! The crate provides Gaussian-process priors over fixed-length windows,
//! mini-batch optimal transport coupling, a small residual vector-field
//! network with analytic gradients, conditional/unconditional training
//! loops, Langevin-based conditional prior sampling with guided
//! generation, and CRPS-based evaluation.

pub mod cfm;
pub mod data;
pub mod error;
pub mod gp;
pub mod metrics;
pub mod net;
pub mod ot;
pub mod sampling;

pub use error::{Error, Result};
