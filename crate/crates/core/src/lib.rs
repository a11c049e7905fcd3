//! Estimation of the lasso's effective noise `2 ||X^T eps||_inf / n` via a
//! multiplier-bootstrap fixed-point algorithm, with applications to tuning
//! parameter calibration and significance testing in high-dimensional linear
//! models, plus a Monte Carlo harness for simulation studies.

pub mod cli;
pub mod data_model;
pub mod effective_noise;
pub mod error;
pub mod inference;
pub mod lasso;
pub mod simulation;

pub use error::{Error, Result};
