//! JSON run configuration and its translation into model objects.

use crate::curve::TimeCurve;
use crate::equilibrium::PricingMethod;
use crate::error::{Error, Result};
use crate::hkernel::{HKernel, QuadConfig};
use crate::lambda_solver::SolverConfig;
use crate::linalg::Matrix;
use crate::market::{MarketModel, TimeGrid};
use crate::preferences::{UtilityModel, UtilityTable};
use crate::verifier::CertificateConfig;
use crate::weighting::WeightingFamily;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

/// Piecewise-constant market: segment `i` holds on `[times[i], times[i+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub horizon: f64,
    #[serde(default = "zero_times")]
    pub times: Vec<f64>,
    /// Drift vector per segment.
    pub mu: Vec<Vec<f64>>,
    /// Volatility matrix (rows) per segment.
    pub sigma: Vec<Vec<Vec<f64>>>,
}

fn zero_times() -> Vec<f64> {
    vec![0.0]
}

/// Time dependence of a weighting parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveSpec {
    Constant(f64),
    Piecewise { times: Vec<f64>, values: Vec<f64> },
    /// `1 + sign(far - 1) min(|far - 1|, coeff (T - t)^exponent)`.
    Terminal { far: f64, coeff: f64, exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightingSpec {
    Identity,
    GaussianHalf,
    Tk { delta: CurveSpec },
    Power { gamma: CurveSpec },
    Tabulated { p: Vec<f64>, w: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilitySpec {
    Exponential { alpha: f64 },
    /// CSV with header `x,u,u1,u2,u3`; relative paths resolve against the
    /// configuration file.
    Tabulated { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Uniform,
    /// Nodes `T (1 - (1 - i/M)^power)`, clustered at the horizon.
    Graded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub kind: GridKind,
    pub steps: usize,
    pub power: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { kind: GridKind::Uniform, steps: 200, power: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PricingSpec {
    ClosedForm,
    Quadrature {
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
    MonteCarlo {
        n_paths: usize,
        #[serde(default = "default_mc_steps")]
        steps: usize,
    },
}

fn default_nodes() -> usize {
    96
}

fn default_mc_steps() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumSpec {
    pub x0: f64,
    pub pricing: PricingSpec,
}

impl Default for EquilibriumSpec {
    fn default() -> Self {
        EquilibriumSpec { x0: 0.0, pricing: PricingSpec::Quadrature { nodes: default_nodes() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    pub n_paths: usize,
    pub steps: usize,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec { n_paths: 10_000, steps: 100 }
    }
}

/// Everything one run of the command-line tool needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketSpec,
    pub weighting: WeightingSpec,
    pub utility: UtilitySpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub quadrature: QuadConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub equilibrium: EquilibriumSpec,
    #[serde(default)]
    pub verify: CertificateConfig,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl RunConfig {
    /// Parses a configuration; errors carry the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn market(&self) -> Result<MarketModel<f64>> {
        let m = &self.market;
        let sigmas = m
            .sigma
            .iter()
            .map(|rows| Matrix::from_rows(rows).ok_or_else(|| Error::Config("volatility matrix must be square".into())))
            .collect::<Result<Vec<_>>>()?;
        MarketModel::piecewise_constant(m.times.clone(), m.mu.clone(), sigmas, m.horizon).map_err(as_config)
    }

    pub fn weighting(&self) -> Result<WeightingFamily<f64>> {
        let horizon = self.market.horizon;
        let curve = |c: &CurveSpec| -> TimeCurve<f64> {
            match c {
                CurveSpec::Constant(v) => TimeCurve::Constant(*v),
                CurveSpec::Piecewise { times, values } => {
                    TimeCurve::Piecewise { times: times.clone(), values: values.clone() }
                }
                CurveSpec::Terminal { far, coeff, exponent } => {
                    TimeCurve::Terminal { horizon, far: *far, coeff: *coeff, exponent: *exponent }
                }
            }
        };
        Ok(match &self.weighting {
            WeightingSpec::Identity => WeightingFamily::identity(),
            WeightingSpec::GaussianHalf => WeightingFamily::gaussian_half(),
            WeightingSpec::Tk { delta } => WeightingFamily::tk(curve(delta)),
            WeightingSpec::Power { gamma } => WeightingFamily::power(curve(gamma)),
            WeightingSpec::Tabulated { p, w } => WeightingFamily::tabulated(p.clone(), w.clone()).map_err(as_config)?,
        })
    }

    pub fn kernel(&self) -> Result<HKernel<f64>> {
        Ok(HKernel::new(Arc::new(self.weighting()?), self.quadrature))
    }

    /// Builds the utility; `base` is the directory of the configuration file.
    pub fn utility(&self, base: &Path) -> Result<UtilityModel<f64>> {
        match &self.utility {
            UtilitySpec::Exponential { alpha } => UtilityModel::exponential(*alpha).map_err(as_config),
            UtilitySpec::Tabulated { path } => {
                let p = base.join(path);
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Ok(UtilityModel::tabulated(UtilityTable::from_csv(&text)?))
            }
        }
    }

    /// Solver grid with market and weighting breakpoints inserted.
    pub fn grid(&self) -> Result<TimeGrid<f64>> {
        let g = &self.grid;
        let base = match g.kind {
            GridKind::Uniform => TimeGrid::uniform(self.market.horizon, g.steps),
            GridKind::Graded => TimeGrid::graded(self.market.horizon, g.steps, g.power),
        }
        .map_err(as_config)?;
        let mut extra = self.market.times.clone();
        extra.extend(self.weighting()?.time_breakpoints());
        Ok(base.with_breakpoints(&extra))
    }

    pub fn pricing(&self) -> PricingMethod {
        match self.equilibrium.pricing {
            PricingSpec::ClosedForm => PricingMethod::ClosedForm,
            PricingSpec::Quadrature { nodes } => PricingMethod::Quadrature { nodes },
            PricingSpec::MonteCarlo { n_paths, steps } => PricingMethod::MonteCarlo { n_paths, seed: self.seed, steps },
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
