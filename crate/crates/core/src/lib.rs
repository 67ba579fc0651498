//! Residualizing a baseline estimator against estimated robustness checks.
//!
//! The core object is a [`JointCovariance`] of the baseline estimator and the
//! vector of checks. From it come the projection coefficient, the
//! residualized estimate, its variance and the misspecification bounds.
//! Around that core sit a covariance estimator built from influence
//! contributions, an adapter for randomized experiments, two Monte Carlo
//! laboratories and the file-level I/O used by the `resid` binary.

pub mod covariance;
pub mod design;
pub mod error;
pub mod exec;
pub mod io;
pub mod model;
pub mod rct;
pub mod misspec;
pub mod selection;
pub mod stats;

pub use covariance::{joint_covariance, InfluenceContributions};
pub use error::{Error, Result};
pub use model::{
    compute_lambda, diagnostics, misspec_bounds, orthogonality_stat, residualize,
    worst_case_bias, Diagnostics, JointCovariance, ResidualizationResult,
};
