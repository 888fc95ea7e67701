//! Error type for all fallible operations.

use thiserror::Error;

/// Errors raised by the solver pipeline.
///
/// Numerical payloads are stored as `f64` so the type is independent of the
/// scalar the computation ran on.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("volatility matrix is singular at t = {t} (pivot ratio {ratio:e})")]
    SingularVolatility { t: f64, ratio: f64 },
    #[error("market price of risk vanishes at t = {t} (|theta| = {norm:e})")]
    ZeroRiskPremium { t: f64, norm: f64 },
    #[error("time grid is empty or malformed: {0}")]
    EmptyGrid(String),
    #[error("non-finite coefficient at t = {t}: {what}")]
    NonfiniteCoefficient { t: f64, what: String },
    #[error("argument outside the domain: {0}")]
    DomainError(String),
    #[error("derivative is unbounded at the endpoint p = {p}")]
    EndpointSingularity { p: f64 },
    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    QuadratureNonconvergence { achieved: f64, requested: f64 },
    #[error("integrand is not finite at y = {at}")]
    NonfiniteIntegrand { at: f64 },
    #[error("improper integral tail did not converge: {0}")]
    TailNonconvergence(String),
    #[error("seed slope iteration failed: {0}")]
    SeedDivergence(String),
    #[error("ODE residual {achieved:e} exceeds tolerance {requested:e}")]
    ResidualExceeded { achieved: f64, requested: f64 },
    #[error("solution left the positive half-line at t = {t}")]
    NonpositiveSolution { t: f64 },
    #[error("ODE integration failed: {0}")]
    IntegrationFailure(String),
    #[error("budget root not bracketed on ln kappa in [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },
    #[error("Monte Carlo root uncertain: standard error {std_error:e} on ln kappa exceeds {tolerance:e}")]
    MonteCarloNoise { std_error: f64, tolerance: f64 },
    #[error("risk-premium sign test disagrees with lambda at t = {t}")]
    InconsistentSign { t: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
