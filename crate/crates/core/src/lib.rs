//! Varying-coefficient tail index regression for Pareto-type responses.
//!
//! The conditional extreme value index is modelled as
//! `log(1/gamma(x, t)) = (1, x') theta(t)` with smooth coefficient functions
//! `theta(.)` of a secondary covariate `t`. This crate provides the local
//! constant likelihood estimator, tuning parameter selection, sup-deviation
//! tests for constancy and sparsity of a coefficient function, residual
//! diagnostics, and a seeded Monte Carlo harness.

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod hypothesis;
pub mod kernels;
pub mod model;
pub mod simulation;
pub mod stats;
pub mod tuning;

pub mod cli;

pub use error::{Error, ErrorCategory, Result};
pub use kernels::{KernelFamily, KernelSpec, XiVariant};
pub use model::{
    rescale_t_to_unit_cube, validate_dataset, AffineMap, CoefficientFit, Dataset, ExecMode, FitConfig,
    GridFit, Observation, PointFailure,
};
