//! Equilibrium investment strategies for rank-dependent utility investors in
//! complete Brownian markets.
//!
//! The pipeline runs [`market`] and [`weighting`] through the kernel in
//! [`hkernel`], solves the terminal-value problem for `Lambda` in
//! [`lambda_solver`], fixes the budget multiplier in [`equilibrium`] and
//! checks the result in [`verifier`]. Numerics are generic over [`Real`]
//! (`f32` or `f64`); the aliases below fix `f64`.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod curve;
pub mod equilibrium;
pub mod error;
pub mod hkernel;
pub mod interp;
pub mod lambda_solver;
pub mod linalg;
pub mod market;
pub mod preferences;
pub mod ode;
pub mod quadrature;
pub mod scalar;
pub mod special;
pub mod verifier;
pub mod weighting;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete double-precision types.
pub type Market = market::MarketModel<f64>;
pub type Grid = market::TimeGrid<f64>;
pub type Weighting = weighting::WeightingFamily<f64>;
pub type Kernel = hkernel::HKernel<f64>;
pub type Utility = preferences::UtilityModel<f64>;
pub type Solution = lambda_solver::LambdaSolution<f64>;
pub type Maps = verifier::TransformMaps<f64>;
