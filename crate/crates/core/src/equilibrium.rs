//! Budget multiplier, equilibrium terminal wealth and portfolio, and the
//! risk-premium classification.

use crate::error::{Error, Result};
use crate::hkernel::HKernel;
use crate::lambda_solver::LambdaSolution;
use crate::linalg::Matrix;
use crate::market::{simulate, MarketModel, PathNoise, TimeGrid};
use crate::preferences::{UtilityKind, UtilityModel};
use crate::quadrature::{legendre_rule, normal_expectation_rule};
use crate::scalar::{lit, Real};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Bracket on `ln kappa` for the budget root.
pub const LN_KAPPA_RANGE: (f64, f64) = (-40.0, 40.0);

/// How the budget expectation is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PricingMethod {
    /// Closed form; exponential utility only.
    ClosedForm,
    /// Gauss-Hermite over the single Gaussian factor of `ln rho_bar`.
    Quadrature { nodes: usize },
    /// Path simulation on a uniform grid with common random numbers.
    MonteCarlo { n_paths: usize, seed: u64, steps: usize },
}

/// Deterministic integrals of the scaling function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaIntegrals {
    /// `int lambda^2 |theta|^2`.
    pub a: f64,
    /// `int lambda |theta|^2`.
    pub b: f64,
    /// `int |theta|^2`.
    pub c: f64,
}

impl LambdaIntegrals {
    /// `int lambda (1 - lambda) |theta|^2`.
    pub fn kappa_bar_exponent(&self) -> f64 {
        self.b - self.a
    }
}

/// Four-point Gauss-Legendre on every interval of the solution grid.
pub fn lambda_integrals<T: Real>(lam: &LambdaSolution<T>, market: &MarketModel<T>) -> Result<LambdaIntegrals> {
    let nodes = lam.grid.nodes();
    let (xs, ws) = legendre_rule(4, 0.0, 1.0);
    let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
    for w in nodes.windows(2) {
        let (t0, t1) = (w[0].as_f64(), w[1].as_f64());
        let len = t1 - t0;
        for (x, wt) in xs.iter().zip(&ws) {
            let t = lit::<T>(t0 + len * x);
            let th = market.theta_norm_sq(t)?.as_f64();
            let l = lam.lambda_at(t).as_f64();
            a += wt * len * l * l * th;
            b += wt * len * l * th;
            c += wt * len * th;
        }
    }
    Ok(LambdaIntegrals { a, b, c })
}

/// `kappa_bar = kappa exp(int lambda (1 - lambda) |theta|^2)`.
pub fn kappa_bar_of<T: Real>(kappa: T, lam: &LambdaSolution<T>, market: &MarketModel<T>) -> Result<T> {
    let i = lambda_integrals(lam, market)?;
    Ok(kappa * lit::<T>(i.kappa_bar_exponent()).exp())
}

/// Budget multiplier with its Monte Carlo uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaEstimate {
    pub kappa: f64,
    /// Standard error of `ln kappa` (zero for deterministic methods).
    pub ln_kappa_se: f64,
    pub method: PricingMethod,
    /// Pricing residual at the root.
    pub budget_residual: f64,
    /// Pricing map checked to decrease at three multipliers around the root.
    pub decreasing: bool,
}

impl KappaEstimate {
    pub fn kappa_se(&self) -> f64 {
        self.kappa * self.ln_kappa_se
    }
}

/// Which budget equation is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// `E[rho I(kappa rho_bar)] = x0`.
    Original,
    /// `E[rho_bar I(kappa_bar rho_bar)] = x0`.
    Revised,
}

/// Prices `I(k rho_bar)` for arbitrary multipliers `k`.
enum Pricer<'a, T: Real> {
    /// Nodes `rho_bar_i` with weights `w_i` (already tilted).
    Nodes { rho_bar: Vec<f64>, weights: Vec<f64>, utility: &'a UtilityModel<T> },
    Paths { weight: Vec<f64>, rho_bar: Vec<f64>, utility: &'a UtilityModel<T> },
}

impl<'a, T: Real> Pricer<'a, T> {
    /// Value, derivative in `ln k`, and standard error of the value.
    fn price(&self, k: f64) -> Result<(f64, f64, f64)> {
        let eval = |u: &UtilityModel<T>, rb: f64| -> Result<(f64, f64)> {
            let y = lit::<T>(k * rb);
            let i = u.inverse_marginal(y)?.as_f64();
            let di = u.inverse_marginal_deriv(y)?.as_f64();
            Ok((i, di * k * rb))
        };
        match self {
            Pricer::Nodes { rho_bar, weights, utility } => {
                let mut v = 0.0;
                let mut d = 0.0;
                for (rb, w) in rho_bar.iter().zip(weights) {
                    let (i, di) = eval(utility, *rb)?;
                    v += w * i;
                    d += w * di;
                }
                Ok((v, d, 0.0))
            }
            Pricer::Paths { weight, rho_bar, utility } => {
                let vals: Vec<(f64, f64)> = rho_bar
                    .par_iter()
                    .zip(weight.par_iter())
                    .map(|(rb, w)| eval(utility, *rb).map(|(i, di)| (w * i, w * di)))
                    .collect::<Result<_>>()?;
                let n = vals.len() as f64;
                let v = vals.iter().map(|p| p.0).sum::<f64>() / n;
                let d = vals.iter().map(|p| p.1).sum::<f64>() / n;
                let var = vals.iter().map(|p| (p.0 - v) * (p.0 - v)).sum::<f64>() / (n - 1.0).max(1.0);
                Ok((v, d, (var / n).sqrt()))
            }
        }
    }
}

fn build_pricer<'a, T: Real>(
    market: &MarketModel<T>,
    utility: &'a UtilityModel<T>,
    lam: &LambdaSolution<T>,
    method: PricingMethod,
    budget: Budget,
) -> Result<Pricer<'a, T>> {
    match method {
        PricingMethod::ClosedForm => Err(Error::Unsupported("closed form needs no pricer".into())),
        PricingMethod::Quadrature { nodes } => {
            let i = lambda_integrals(lam, market)?;
            let (zs, ws) = normal_expectation_rule(nodes.max(2));
            // Under the pricing measure, ln rho_bar is Gaussian with variance a
            // and mean -a/2 + b (original budget) or +a/2 (revised budget).
            let mean = match budget {
                Budget::Original => -0.5 * i.a + i.b,
                Budget::Revised => 0.5 * i.a,
            };
            let sd = i.a.sqrt();
            let rho_bar = zs.iter().map(|z| (mean + sd * z).exp()).collect();
            Ok(Pricer::Nodes { rho_bar, weights: ws, utility })
        }
        PricingMethod::MonteCarlo { n_paths, seed, steps } => {
            let grid = TimeGrid::uniform(market.horizon(), steps.max(1))?;
            let lam_fn = |t: T| lam.lambda_at(t);
            let ens = simulate(market, &grid, &lam_fn, n_paths, seed)?;
            let rho_bar: Vec<f64> = ens.rho_bar_t.iter().map(|v| v.as_f64()).collect();
            let weight = match budget {
                Budget::Original => ens.rho_t.iter().map(|v| v.as_f64()).collect(),
                Budget::Revised => rho_bar.clone(),
            };
            Ok(Pricer::Paths { weight, rho_bar, utility })
        }
    }
}

/// Closed-form multiplier for exponential utility:
/// `kappa = alpha exp(-alpha x0 + a/2 - b)`.
pub fn kappa_exponential(alpha: f64, x0: f64, i: &LambdaIntegrals) -> f64 {
    alpha * (-alpha * x0 + 0.5 * i.a - i.b).exp()
}

/// Solves the budget equation for the multiplier.
///
/// Bisection on `ln kappa` over [`LN_KAPPA_RANGE`] followed by one Newton
/// step; Monte Carlo pricing reuses the same paths for every candidate.
pub fn solve_kappa<T: Real>(
    market: &MarketModel<T>,
    utility: &UtilityModel<T>,
    lam: &LambdaSolution<T>,
    x0: f64,
    method: PricingMethod,
) -> Result<KappaEstimate> {
    solve_budget(market, utility, lam, x0, method, Budget::Original, f64::INFINITY)
}

/// As [`solve_kappa`] for either budget equation, failing with
/// `MonteCarloNoise` when the standard error of `ln kappa` exceeds `max_ln_se`.
pub fn solve_budget<T: Real>(
    market: &MarketModel<T>,
    utility: &UtilityModel<T>,
    lam: &LambdaSolution<T>,
    x0: f64,
    method: PricingMethod,
    budget: Budget,
    max_ln_se: f64,
) -> Result<KappaEstimate> {
    if let PricingMethod::ClosedForm = method {
        let alpha = match utility.kind() {
            UtilityKind::Exponential { alpha } => alpha.as_f64(),
            _ => return Err(Error::Unsupported("closed-form multiplier needs exponential utility".into())),
        };
        let i = lambda_integrals(lam, market)?;
        let kappa = match budget {
            Budget::Original => kappa_exponential(alpha, x0, &i),
            Budget::Revised => alpha * (-alpha * x0 - 0.5 * i.a).exp(),
        };
        return Ok(KappaEstimate { kappa, ln_kappa_se: 0.0, method, budget_residual: 0.0, decreasing: true });
    }
    let pricer = build_pricer(market, utility, lam, method, budget)?;
    let f = |lk: f64| -> Result<f64> { Ok(pricer.price(lk.exp())?.0 - x0) };
    let (mut lo, mut hi) = LN_KAPPA_RANGE;
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(Error::NoRoot { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    let mut lk = 0.5 * (lo + hi);
    let (v, d, _) = pricer.price(lk.exp())?;
    if d < 0.0 && d.is_finite() {
        let step = (v - x0) / d;
        if step.abs() <= 1e-6 {
            lk -= step;
        }
    }
    let (v, d, se) = pricer.price(lk.exp())?;
    let ln_se = if d != 0.0 { se / d.abs() } else { f64::INFINITY };
    if ln_se > max_ln_se {
        return Err(Error::MonteCarloNoise { std_error: ln_se, tolerance: max_ln_se });
    }
    let probe = [lk - 0.5, lk, lk + 0.5];
    let vals: Vec<f64> = probe.iter().map(|&p| pricer.price(p.exp()).map(|r| r.0)).collect::<Result<_>>()?;
    let decreasing = vals[0] > vals[1] && vals[1] > vals[2];
    Ok(KappaEstimate { kappa: lk.exp(), ln_kappa_se: ln_se, method, budget_residual: v - x0, decreasing })
}

/// `pi*(t) = (1/alpha) lambda(t) (sigma(t)^T)^{-1} theta(t)`.
pub fn portfolio_exponential<T: Real>(
    alpha: T,
    lam: &LambdaSolution<T>,
    market: &MarketModel<T>,
    t: T,
) -> Result<Vec<T>> {
    let merton = merton_portfolio(alpha, market, t)?;
    let l = lam.lambda_at(t);
    Ok(merton.into_iter().map(|v| v * l).collect())
}

/// Expected-utility portfolio `(1/alpha) (sigma^T)^{-1} theta`.
pub fn merton_portfolio<T: Real>(alpha: T, market: &MarketModel<T>, t: T) -> Result<Vec<T>> {
    let theta = market.theta_of(t)?;
    let v = market.solve_sigma_transpose(t, &theta)?;
    Ok(v.into_iter().map(|x| x / alpha).collect())
}

/// Market with the same volatility and market price of risk `lambda theta`.
pub fn revised_market<T: Real>(market: &MarketModel<T>, lam: &LambdaSolution<T>) -> Result<MarketModel<T>> {
    let m1 = market.clone();
    let m2 = market.clone();
    let l = Arc::new(lam.clone());
    let mut bps = market.breakpoints().to_vec();
    bps.extend(lam.grid.nodes().iter().copied());
    MarketModel::from_fns(
        market.n_assets(),
        market.horizon(),
        Arc::new(move |t| {
            let s = l.lambda_at(t);
            m1.mu(t).into_iter().map(|v| v * s).collect()
        }),
        Arc::new(move |t| m2.sigma(t)),
        bps,
    )
}

/// Equilibrium multipliers and report data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSolution {
    pub kappa: f64,
    pub kappa_bar: f64,
    pub x0: f64,
    pub integrals: LambdaIntegrals,
    pub estimate: KappaEstimate,
}

impl EquilibriumSolution {
    /// `X(T) = I(kappa rho_bar(T))`.
    pub fn terminal_wealth<T: Real>(&self, utility: &UtilityModel<T>, rho_bar: T) -> Result<T> {
        utility.inverse_marginal(lit::<T>(self.kappa) * rho_bar)
    }
}

/// Solves the budget and assembles the equilibrium summary.
pub fn solve_equilibrium<T: Real>(
    market: &MarketModel<T>,
    utility: &UtilityModel<T>,
    lam: &LambdaSolution<T>,
    x0: f64,
    method: PricingMethod,
) -> Result<EquilibriumSolution> {
    let estimate = solve_kappa(market, utility, lam, x0, method)?;
    let integrals = lambda_integrals(lam, market)?;
    Ok(EquilibriumSolution {
        kappa: estimate.kappa,
        kappa_bar: estimate.kappa * integrals.kappa_bar_exponent().exp(),
        x0,
        integrals,
        estimate,
    })
}

/// Risk-premium classification at one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskPremiumRow {
    pub t: f64,
    pub lambda: f64,
    pub big_h: f64,
    pub big_h_deriv: f64,
    /// `H'(t, sqrt Lambda) > 0`, i.e. a reduced risk premium.
    pub reduction: bool,
    pub lambda_below_one: bool,
    pub consistent: bool,
    /// `x H / (H' + x H)` from the shifted kernel.
    pub lambda_from_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskPremiumReport {
    pub rows: Vec<RiskPremiumRow>,
    pub disagreements: usize,
    /// `|H'| / H` below which a node counts as the boundary case `lambda = 1`.
    pub boundary_tol: f64,
    /// Largest gap between the solver's lambda and the shifted-kernel identity.
    pub identity_gap: f64,
}

/// Relative band on `H'/H` treated as zero.
pub const RISK_BOUNDARY_TOL: f64 = 1e-9;
/// Allowed `|lambda - 1|` in the boundary case.
pub const RISK_LAMBDA_TOL: f64 = 1e-6;

/// Classifies every node with `Lambda > 0`; never fails on disagreement.
pub fn risk_premium_table<T: Real>(kernel: &HKernel<T>, lam: &LambdaSolution<T>) -> Result<RiskPremiumReport> {
    let shifted = kernel.shifted();
    let nodes = lam.grid.nodes();
    let idx: Vec<usize> = (0..nodes.len()).filter(|&i| lam.big_lambda[i] > T::zero()).collect();
    let rows: Vec<RiskPremiumRow> = idx
        .par_iter()
        .map(|&i| {
            let t = nodes[i];
            let x = lam.big_lambda[i].sqrt();
            let (hh, dh) = shifted.direct(t, x)?;
            let (hh, dh, x) = (hh.as_f64(), dh.as_f64(), x.as_f64());
            let l = lam.lambda[i].as_f64();
            let rel = dh / hh;
            let reduction = rel > RISK_BOUNDARY_TOL;
            let below = l < 1.0;
            let consistent = if rel.abs() <= RISK_BOUNDARY_TOL {
                (l - 1.0).abs() <= RISK_LAMBDA_TOL
            } else {
                reduction == below
            };
            Ok(RiskPremiumRow {
                t: t.as_f64(),
                lambda: l,
                big_h: hh,
                big_h_deriv: dh,
                reduction,
                lambda_below_one: below,
                consistent,
                lambda_from_h: x * hh / (dh + x * hh),
            })
        })
        .collect::<Result<_>>()?;
    let disagreements = rows.iter().filter(|r| !r.consistent).count();
    let identity_gap = rows.iter().map(|r| (r.lambda - r.lambda_from_h).abs()).fold(0.0, f64::max);
    Ok(RiskPremiumReport { rows, disagreements, boundary_tol: RISK_BOUNDARY_TOL, identity_gap })
}

/// As [`risk_premium_table`], failing with `InconsistentSign` at the first
/// node where the sign of `H'` and `lambda < 1` disagree.
pub fn risk_premium_reduction<T: Real>(kernel: &HKernel<T>, lam: &LambdaSolution<T>) -> Result<RiskPremiumReport> {
    let r = risk_premium_table(kernel, lam)?;
    if let Some(bad) = r.rows.iter().find(|row| !row.consistent) {
        return Err(Error::InconsistentSign { t: bad.t });
    }
    Ok(r)
}

/// RMS gap between Euler-replicated wealth and the target payoff.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationReport {
    pub steps: Vec<usize>,
    pub rms: Vec<f64>,
    /// `rms[i + 1] / rms[i]`.
    pub ratios: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub fine_steps: usize,
}

/// Replicates `I(kappa rho_bar(T))` for exponential utility by Euler steps of
/// the wealth equation under `pi*` on uniform grids with `coarse_steps` steps.
///
/// The target uses `rho_bar(T)` on a fine grid holding every coarse node and
/// every market breakpoint, driven by the same Brownian increments.
#[allow(clippy::too_many_arguments)]
pub fn replication_study<T: Real>(
    market: &MarketModel<T>,
    lam: &LambdaSolution<T>,
    alpha: f64,
    kappa: f64,
    x0: f64,
    coarse_steps: &[usize],
    refine: usize,
    n_paths: usize,
    seed: u64,
) -> Result<ReplicationReport> {
    if coarse_steps.is_empty() || n_paths == 0 {
        return Err(Error::DomainError("replication needs grids and paths".into()));
    }
    let horizon = market.horizon();
    let base = coarse_steps.iter().copied().fold(1, lcm) * refine.max(1);
    let fine = TimeGrid::uniform(horizon, base)?.with_breakpoints(market.breakpoints());
    let fnodes: Vec<f64> = fine.nodes().iter().map(|v| v.as_f64()).collect();
    let n = market.n_assets();
    let fsteps = fnodes.len() - 1;

    let mut f_theta = Vec::with_capacity(fsteps);
    let mut f_lam = Vec::with_capacity(fsteps);
    for &tf in &fnodes[..fsteps] {
        let t = lit::<T>(tf);
        f_theta.push(market.theta_of(t)?.iter().map(|v| v.as_f64()).collect::<Vec<_>>());
        f_lam.push(lam.lambda_at(t).as_f64());
    }

    struct Coarse {
        /// Fine index where each coarse step starts.
        start: Vec<usize>,
        pi: Vec<Vec<f64>>,
        drift: Vec<f64>,
        sigma: Vec<Matrix<f64>>,
    }
    let mut coarse = Vec::new();
    for &m in coarse_steps {
        let mut start = Vec::with_capacity(m + 1);
        let mut pi = Vec::with_capacity(m);
        let mut drift = Vec::with_capacity(m);
        let mut sigma = Vec::with_capacity(m);
        for j in 0..=m {
            let t = horizon.as_f64() * j as f64 / m as f64;
            let k = fnodes
                .iter()
                .position(|&s| (s - t).abs() <= 1e-12 * horizon.as_f64().max(1.0))
                .ok_or_else(|| Error::EmptyGrid(format!("coarse node {t} missing from the fine grid")))?;
            start.push(k);
            if j < m {
                let tt = lit::<T>(t);
                let p: Vec<f64> = portfolio_exponential(lit(alpha), lam, market, tt)?
                    .iter()
                    .map(|v| v.as_f64())
                    .collect();
                let mu: Vec<f64> = market.mu(tt).iter().map(|v| v.as_f64()).collect();
                let dt = horizon.as_f64() / m as f64;
                drift.push(p.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>() * dt);
                let s = market.sigma(tt);
                let rows: Vec<Vec<f64>> =
                    (0..n).map(|r| (0..n).map(|c| s.get(r, c).as_f64()).collect()).collect();
                sigma.push(Matrix::from_rows(&rows).ok_or_else(|| Error::DomainError("ragged volatility".into()))?);
                pi.push(p);
            }
        }
        coarse.push(Coarse { start, pi, drift, sigma });
    }

    let offset = (alpha.ln() - kappa.ln()) / alpha;
    let sq: Vec<f64> = fnodes.windows(2).map(|w| (w[1] - w[0]).sqrt()).collect();
    let dts: Vec<f64> = fnodes.windows(2).map(|w| w[1] - w[0]).collect();
    let errs: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut noise = PathNoise::new(seed, p as u64);
            let mut dw = vec![0.0; fsteps * n];
            let mut log_bar = 0.0;
            for i in 0..fsteps {
                let mut tw = 0.0;
                let mut th2 = 0.0;
                for j in 0..n {
                    let d = noise.next_normal() * sq[i];
                    dw[i * n + j] = d;
                    tw += f_theta[i][j] * d;
                    th2 += f_theta[i][j] * f_theta[i][j];
                }
                log_bar -= 0.5 * f_lam[i] * f_lam[i] * th2 * dts[i] + f_lam[i] * tw;
            }
            let target = offset - log_bar / alpha;
            coarse
                .iter()
                .map(|c| {
                    let mut x = x0;
                    for j in 0..c.pi.len() {
                        let mut inc = vec![0.0; n];
                        for i in c.start[j]..c.start[j + 1] {
                            for k in 0..n {
                                inc[k] += dw[i * n + k];
                            }
                        }
                        let sdw = c.sigma[j].mul_vec(&inc);
                        x += c.drift[j] + c.pi[j].iter().zip(&sdw).map(|(a, b)| a * b).sum::<f64>();
                    }
                    x - target
                })
                .collect()
        })
        .collect();
    let rms: Vec<f64> = (0..coarse_steps.len())
        .map(|g| (errs.iter().map(|e| e[g] * e[g]).sum::<f64>() / n_paths as f64).sqrt())
        .collect();
    let ratios = rms.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(ReplicationReport { steps: coarse_steps.to_vec(), rms, ratios, n_paths, seed, fine_steps: fsteps })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}
