//! Conditional CRPS and companion multivariate proper scoring rules.
//!
//! This crate provides:
//!
//! - closed-form univariate CRPS for Gaussian, mixture-Gaussian, log-normal,
//!   student-t, (scaled) beta, point-mass and empirical laws;
//! - exact univariate marginal/conditional extraction for five multivariate
//!   families, which together define the Conditional CRPS (CCRPS) family of
//!   multivariate scoring rules;
//! - Energy Score, Variogram Score, Logarithmic Score and a bivariate-marginal
//!   negative log-likelihood, with analytic paths where they exist and seeded
//!   Monte-Carlo estimation elsewhere;
//! - a small reverse-mode autodiff tape and distributional regression networks
//!   trained on CCRPS, smoothed Energy Score and bivariate-MLE losses;
//! - synthetic ensemble-postprocessing dataset generation and a score
//!   sensitivity experiment, both reachable from the `ccrps` CLI.

pub mod autodiff;
pub mod cli;
pub mod crps;
pub mod distributions;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mscores;
pub mod regression;
pub mod rng;
pub mod special;
pub mod synthetic;

pub use error::{Error, Result};
