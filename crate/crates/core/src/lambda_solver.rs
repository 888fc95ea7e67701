//! Terminal-value problem for the conditional variance `Lambda(t)`:
//!
//! `Lambda' = -|theta|^2 (h/h')^2 (t, sqrt Lambda) Lambda`, `Lambda(T) = 0`,
//!
//! solved in reversed time `y(s) = Lambda(T - s)` from a linear seed
//! `y(eps0) = k* eps0`. The risk-premium scaling is
//! `lambda = sqrt(Lambda) h / h'`.

use crate::error::{Error, Result};
use crate::hkernel::HKernel;
use crate::interp::{hermite, segment};
use crate::market::{MarketModel, TimeGrid};
use crate::ode::{integrate_positive, OdeOptions, OdeStats};
use crate::scalar::{lit, Real};
use serde::{Deserialize, Serialize};

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Required stability of `Lambda(0)` under halving of the seed offset.
    pub tol: f64,
    /// Bound on the stencil residual certificate.
    pub residual_tol: f64,
    pub ode_rtol: f64,
    pub ode_atol: f64,
    /// Initial seed offset as a fraction of the horizon.
    pub eps0_rel: f64,
    pub max_halvings: usize,
    pub seed_iterations: usize,
    pub seed_damping: f64,
    pub force_implicit: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            residual_tol: 1e-6,
            ode_rtol: 1e-11,
            ode_atol: 1e-15,
            eps0_rel: 1e-4,
            max_halvings: 12,
            seed_iterations: 200,
            seed_damping: 0.5,
            force_implicit: false,
        }
    }
}

/// Diagnostics of the reversed-time integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub halvings: usize,
    pub lambda0_change: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub implicit_steps: usize,
    pub rhs_evals: usize,
    pub fallback: bool,
}

impl SolveStats {
    fn absorb(&mut self, s: &OdeStats) {
        self.accepted_steps += s.accepted;
        self.rejected_steps += s.rejected;
        self.implicit_steps += s.implicit_steps;
        self.rhs_evals += s.rhs_evals;
        self.fallback |= s.fallback;
    }
}

/// `Lambda` and `lambda` on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution<T> {
    pub grid: TimeGrid<T>,
    /// `Lambda(t_i)`.
    pub big_lambda: Vec<T>,
    /// `lambda(t_i)`.
    pub lambda: Vec<T>,
    /// `Lambda'(t_i+)` from the ODE right-hand side.
    pub d_big_lambda: Vec<T>,
    /// `Lambda'(t_i-)`; differs from the right limit only where theta jumps.
    pub d_big_lambda_left: Vec<T>,
    /// Stencil residual per node (zero where it is not evaluated).
    pub residual: Vec<T>,
    pub residual_max: T,
    pub seed_slope: T,
    pub epsilon0: T,
    pub stats: SolveStats,
}

impl<T: Real> LambdaSolution<T> {
    pub fn horizon(&self) -> T {
        self.grid.horizon()
    }

    /// `Lambda(t)` by cubic Hermite interpolation with the ODE slopes.
    pub fn big_lambda_at(&self, t: T) -> T {
        let xs = self.grid.nodes();
        let i = segment(xs, t);
        let t = t.max(xs[0]).min(xs[xs.len() - 1]);
        let v = hermite(
            xs[i],
            xs[i + 1],
            self.big_lambda[i],
            self.big_lambda[i + 1],
            self.d_big_lambda[i],
            self.d_big_lambda_left[i + 1],
            t,
        )
        .0;
        v.max(T::zero())
    }

    /// `lambda(t)` by linear interpolation.
    pub fn lambda_at(&self, t: T) -> T {
        let xs = self.grid.nodes();
        let i = segment(xs, t);
        let t = t.max(xs[0]).min(xs[xs.len() - 1]);
        let w = (t - xs[i]) / (xs[i + 1] - xs[i]);
        self.lambda[i] + w * (self.lambda[i + 1] - self.lambda[i])
    }

    /// Builds a solution from known `Lambda` and `lambda` curves, e.g. a
    /// closed form. Slopes are `-lambda^2 |theta|^2`.
    pub fn from_curves(
        market: &MarketModel<T>,
        grid: &TimeGrid<T>,
        big_lambda: &dyn Fn(T) -> T,
        lambda: &dyn Fn(T) -> T,
    ) -> Result<Self> {
        let nodes = grid.nodes().to_vec();
        let bl: Vec<T> = nodes.iter().map(|&t| big_lambda(t)).collect();
        let l: Vec<T> = nodes.iter().map(|&t| lambda(t)).collect();
        let (d, dl) = slopes(market, &nodes, &l)?;
        let horizon = grid.horizon();
        let th_t = market.theta_norm_sq(horizon)?;
        let seed = l[l.len() - 1] * l[l.len() - 1] * th_t;
        Ok(LambdaSolution {
            grid: grid.clone(),
            residual: vec![T::zero(); nodes.len()],
            big_lambda: bl,
            lambda: l,
            d_big_lambda: d,
            d_big_lambda_left: dl,
            residual_max: T::zero(),
            seed_slope: seed,
            epsilon0: T::zero(),
            stats: SolveStats::default(),
        })
    }

    /// Copy with `Lambda` multiplied by `c` (used as a negative control).
    pub fn scaled_big_lambda(&self, c: T) -> Self {
        let mut s = self.clone();
        for v in s.big_lambda.iter_mut() {
            *v = *v * c;
        }
        s
    }
}

fn slopes<T: Real>(market: &MarketModel<T>, nodes: &[T], lambda: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let horizon = market.horizon();
    let bps = market.breakpoints();
    let mut right = Vec::with_capacity(nodes.len());
    let mut left = Vec::with_capacity(nodes.len());
    for (i, &t) in nodes.iter().enumerate() {
        let l2 = lambda[i] * lambda[i];
        let th = market.theta_norm_sq(t)?;
        right.push(-l2 * th);
        if bps.contains(&t) {
            let th_l = market.theta_norm_sq(t - horizon * lit(1e-12))?;
            left.push(-l2 * th_l);
        } else {
            left.push(-l2 * th);
        }
    }
    Ok((right, left))
}

/// `sqrt(y) h/h'` at `(t, sqrt y)`, i.e. `lambda` when `y = Lambda(t)`.
pub fn scaled_ratio<T: Real>(kernel: &HKernel<T>, t: T, y: T) -> Result<T> {
    if !(y > T::zero()) {
        return Err(Error::NonpositiveSolution { t: t.as_f64() });
    }
    let x = y.sqrt();
    let m = kernel.moments(t, x)?;
    if !(m[1] > T::zero()) {
        return Err(Error::DomainError(format!("h' is not positive at t = {t}, x = {x}")));
    }
    Ok(x * m[0] / m[1])
}

/// Terminal slope `k` solving `k = |theta|^2 (sqrt(k eps) h/h')^2` at
/// `t = T - eps`.
///
/// Runs the damped fixed-point iteration first. If it stalls, the same
/// condition is solved in its monotone form `(ln h)'(t, x) = |theta| sqrt(eps)`,
/// `x = sqrt(k eps)`, which has a positive root iff `h'(t, 0) < |theta| sqrt(eps)`.
pub fn seed_slope<T: Real>(
    market: &MarketModel<T>,
    kernel: &HKernel<T>,
    eps: T,
    cfg: &SolverConfig,
) -> Result<T> {
    let horizon = market.horizon();
    let th_end = market.theta_norm_sq(horizon)?;
    let th = market.theta_norm_sq(horizon - eps)?;
    let h2 = kernel.h_deriv(horizon, T::zero(), 2)?;
    if !(h2 > T::zero()) {
        return Err(Error::SeedDivergence(format!("h''(T, 0) = {h2} is not positive")));
    }
    let mut k = th_end / (h2 * h2);
    let d = lit::<T>(cfg.seed_damping);
    let floor = k * lit(1e-8);
    for _ in 0..cfg.seed_iterations {
        let r = scaled_ratio(kernel, horizon - eps, k * eps)?;
        let target = th * r * r;
        let next = (T::one() - d) * k + d * target;
        if !next.is_finite() || next <= floor {
            break;
        }
        if (next - k).abs() <= lit::<T>(1e-10) * k {
            return Ok(next);
        }
        k = next;
    }
    seed_root(kernel, horizon - eps, th.sqrt() * eps.sqrt(), k * eps).map(|x| x * x / eps)
}

/// Root of `(ln h)'(t, x) = target` for `x > 0`; `(ln h)'` is increasing.
fn seed_root<T: Real>(kernel: &HKernel<T>, t: T, target: T, guess_y: T) -> Result<T> {
    let g = |x: T| -> Result<(T, T)> {
        let m = kernel.moments(t, x)?;
        let q = m[1] / m[0];
        Ok((q - target, m[2] / m[0] - q * q))
    };
    let (g0, _) = g(T::zero())?;
    if g0 >= T::zero() {
        return Err(Error::SeedDivergence(format!(
            "h'(t, 0) / h(t, 0) = {} is not below |theta| sqrt(eps) = {} at t = {t}; no positive solution near T",
            (g0 + target).as_f64(),
            target.as_f64()
        )));
    }
    let mut lo = T::zero();
    let mut hi = guess_y.max(T::min_positive_value()).sqrt().max(target);
    let mut steps = 0;
    while g(hi)?.0 < T::zero() {
        lo = hi;
        hi = hi * lit(2.0);
        steps += 1;
        if steps > 200 {
            return Err(Error::SeedDivergence("could not bracket the terminal slope".into()));
        }
    }
    let mut x = (lo + hi) * lit(0.5);
    for _ in 0..200 {
        let (gx, dg) = g(x)?;
        if gx < T::zero() {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - gx / dg;
        let next = if newton > lo && newton < hi { newton } else { (lo + hi) * lit(0.5) };
        let stop = T::epsilon() * lit(64.0);
        if (next - x).abs() <= stop * x || hi - lo <= stop * hi {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::SeedDivergence(format!("terminal slope search did not converge at t = {t}")))
}

fn integrate_once<T: Real>(
    market: &MarketModel<T>,
    kernel: &HKernel<T>,
    stops_t: &[T],
    eps: T,
    k: T,
    cfg: &SolverConfig,
) -> Result<(Vec<T>, OdeStats)> {
    let horizon = market.horizon();
    let stops: Vec<T> = stops_t.iter().rev().map(|&t| horizon - t).filter(|&s| s > eps).collect();
    let opts = OdeOptions {
        rtol: lit(cfg.ode_rtol),
        atol: lit(cfg.ode_atol),
        force_implicit: cfg.force_implicit,
        ..OdeOptions::default()
    };
    integrate_positive(
        |s, y| {
            let t = horizon - s;
            let r = scaled_ratio(kernel, t, y)?;
            Ok(market.theta_norm_sq(t)? * r * r)
        },
        eps,
        k * eps,
        &stops,
        &opts,
    )
}

/// Solves for `Lambda` and `lambda` on `grid`.
///
/// The seed offset starts at `eps0_rel * T` and is halved until `Lambda(0)`
/// moves by less than `cfg.tol`.
pub fn solve<T: Real>(
    market: &MarketModel<T>,
    kernel: &HKernel<T>,
    grid: &TimeGrid<T>,
    cfg: &SolverConfig,
) -> Result<LambdaSolution<T>> {
    let horizon = market.horizon();
    if (grid.horizon() - horizon).abs() > horizon * lit(1e-12) {
        return Err(Error::EmptyGrid("grid does not end at the market horizon".into()));
    }
    let mut bps: Vec<T> = market.breakpoints().to_vec();
    bps.extend(kernel.weighting().time_breakpoints());
    let grid = grid.with_breakpoints(&bps);
    let nodes = grid.nodes().to_vec();
    let mut stats = SolveStats::default();

    let mut eps = horizon * lit(cfg.eps0_rel);
    let mut k = seed_slope(market, kernel, eps, cfg)?;
    let (mut ys, st) = integrate_once(market, kernel, &nodes, eps, k, cfg)?;
    stats.absorb(&st);
    let tol = lit::<T>(cfg.tol);
    let mut change = T::infinity();
    for _ in 0..cfg.max_halvings {
        let eps2 = eps * lit(0.5);
        let k2 = seed_slope(market, kernel, eps2, cfg)?;
        let (ys2, st2) = integrate_once(market, kernel, &nodes, eps2, k2, cfg)?;
        stats.absorb(&st2);
        stats.halvings += 1;
        change = (*ys2.last().unwrap() - *ys.last().unwrap()).abs();
        eps = eps2;
        k = k2;
        ys = ys2;
        if change < tol {
            break;
        }
    }
    stats.lambda0_change = change.as_f64();
    if !(change < tol) {
        return Err(Error::SeedDivergence(format!(
            "Lambda(0) still moves by {:e} after {} halvings",
            change.as_f64(),
            cfg.max_halvings
        )));
    }

    // ys holds y at reversed stops s_j = T - t_j for t_j < T - eps, in
    // increasing s; nodes closer to T use the linear seed.
    let n = nodes.len();
    let mut big = vec![T::zero(); n];
    let mut it = ys.iter().rev();
    for i in 0..n {
        let s = horizon - nodes[i];
        big[i] = if i == n - 1 {
            T::zero()
        } else if s > eps {
            *it.next().ok_or_else(|| Error::IntegrationFailure("missing output".into()))?
        } else {
            k * s
        };
    }
    let mut lambda = vec![T::zero(); n];
    for i in 0..n - 1 {
        lambda[i] = scaled_ratio(kernel, nodes[i], big[i])?;
    }
    lambda[n - 1] = (k / market.theta_norm_sq(horizon)?).sqrt();
    let (d, dl) = slopes(market, &nodes, &lambda)?;
    let mut sol = LambdaSolution {
        grid,
        big_lambda: big,
        lambda,
        d_big_lambda: d,
        d_big_lambda_left: dl,
        residual: vec![T::zero(); n],
        residual_max: T::zero(),
        seed_slope: k,
        epsilon0: eps,
        stats,
    };
    let (res, rmax) = residuals(&sol, market, kernel)?;
    sol.residual = res;
    sol.residual_max = rmax;
    if !(rmax.as_f64() <= cfg.residual_tol) {
        return Err(Error::ResidualExceeded { achieved: rmax.as_f64(), requested: cfg.residual_tol });
    }
    Ok(sol)
}

/// Per-node stencil residual and its maximum.
///
/// At interior node `i` the three-point nonuniform derivative of `Lambda` is
/// compared with `-|theta|^2 (h/h')^2 Lambda`, scaled by `max(1, |Lambda'|)`.
/// Stencils straddling a coefficient jump or kink are skipped, as are nodes
/// inside the seed zone `0 < T - t <= eps0` where `Lambda` is the linear seed.
pub fn residuals<T: Real>(
    sol: &LambdaSolution<T>,
    market: &MarketModel<T>,
    kernel: &HKernel<T>,
) -> Result<(Vec<T>, T)> {
    let nodes = sol.grid.nodes();
    let horizon = sol.horizon();
    let n = nodes.len();
    let mut jumps: Vec<T> = market.breakpoints().to_vec();
    jumps.extend(kernel.weighting().time_breakpoints());
    let mut out = vec![T::zero(); n];
    let mut worst = T::zero();
    for i in 1..n.saturating_sub(1) {
        let (t0, t1, t2) = (nodes[i - 1], nodes[i], nodes[i + 1]);
        if jumps.iter().any(|&j| j > t0 && j < t2) || jumps.contains(&t0) && t0 > T::zero() {
            continue;
        }
        if horizon - t1 <= sol.epsilon0 || (t2 < horizon && horizon - t2 <= sol.epsilon0) {
            continue;
        }
        let big = sol.big_lambda[i];
        if !(big > T::zero()) {
            return Err(Error::NonpositiveSolution { t: t1.as_f64() });
        }
        let h1 = t1 - t0;
        let h2 = t2 - t1;
        let d = -h2 / (h1 * (h1 + h2)) * sol.big_lambda[i - 1]
            + (h2 - h1) / (h1 * h2) * big
            + h1 / (h2 * (h1 + h2)) * sol.big_lambda[i + 1];
        let r = scaled_ratio(kernel, t1, big)?;
        let rhs = market.theta_norm_sq(t1)? * r * r;
        let res = (d + rhs).abs() / d.abs().max(T::one());
        out[i] = res;
        worst = worst.max(res);
    }
    Ok((out, worst))
}

/// Residual certificate of an existing solution.
pub fn residual<T: Real>(
    sol: &LambdaSolution<T>,
    market: &MarketModel<T>,
    kernel: &HKernel<T>,
) -> Result<T> {
    Ok(residuals(sol, market, kernel)?.1)
}

/// Margins of the linear sub- and supersolution conditions near `T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BracketReport {
    pub k1: f64,
    pub k2: f64,
    pub delta_window: f64,
    /// Largest ratio for `k1`; must stay below 1.
    pub k1_max_ratio: f64,
    /// Smallest ratio for `k2`; must stay above 1.
    pub k2_min_ratio: f64,
    pub k0_margin: f64,
    pub k2_margin: f64,
    pub k0_holds: bool,
    pub k2_holds: bool,
    pub mesh_points: usize,
}

/// Evaluates `|theta(T-s)|^2 (sqrt(s) h/h'(T-s, sqrt(k s)))^2` for `s` in
/// `(0, delta]` on a log mesh of 200 points down to `1e-6 delta`.
pub fn bracket_check<T: Real>(
    market: &MarketModel<T>,
    kernel: &HKernel<T>,
    k1: T,
    k2: T,
    delta: T,
) -> Result<BracketReport> {
    let horizon = market.horizon();
    if !(k2 > T::zero() && k1 > k2) {
        return Err(Error::DomainError("bracket needs 0 < k2 < k1".into()));
    }
    if !(delta > T::zero() && delta < horizon) {
        return Err(Error::DomainError("bracket window must lie in (0, T)".into()));
    }
    let m = 200;
    let ratio = |k: T, s: T| -> Result<T> {
        let th = market.theta_norm_sq(horizon - s)?;
        let r = scaled_ratio(kernel, horizon - s, k * s)?;
        Ok(th * r * r / k)
    };
    let mut max1 = T::neg_infinity();
    let mut min2 = T::infinity();
    for j in 0..m {
        let frac = lit::<T>(-6.0 + 6.0 * j as f64 / (m - 1) as f64);
        let s = delta * lit::<T>(10.0).powf(frac);
        max1 = max1.max(ratio(k1, s)?);
        min2 = min2.min(ratio(k2, s)?);
    }
    Ok(BracketReport {
        k1: k1.as_f64(),
        k2: k2.as_f64(),
        delta_window: delta.as_f64(),
        k1_max_ratio: max1.as_f64(),
        k2_min_ratio: min2.as_f64(),
        k0_margin: 1.0 - max1.as_f64(),
        k2_margin: min2.as_f64() - 1.0,
        k0_holds: max1 < T::one(),
        k2_holds: min2 > T::one(),
        mesh_points: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weighting::WeightingFamily;

    fn setup(w: WeightingFamily<f64>) -> (MarketModel<f64>, HKernel<f64>, TimeGrid<f64>) {
        (
            MarketModel::scalar(0.08, 0.2, 1.0).unwrap(),
            HKernel::with_defaults(w),
            TimeGrid::uniform(1.0, 50).unwrap(),
        )
    }

    #[test]
    fn gaussian_half_is_linear() {
        let (m, k, g) = setup(WeightingFamily::gaussian_half());
        let s = solve(&m, &k, &g, &SolverConfig::default()).unwrap();
        for (i, &t) in s.grid.nodes().iter().enumerate() {
            assert!((s.big_lambda[i] - 0.04 * (1.0 - t)).abs() < 1e-9, "t {t}");
            assert!((s.lambda[i] - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn identity_recovers_unit_lambda() {
        let (m, k, g) = setup(WeightingFamily::identity());
        let s = solve(&m, &k, &g, &SolverConfig::default()).unwrap();
        assert!(s.lambda.iter().all(|l| (l - 1.0).abs() < 1e-8));
        assert!((s.big_lambda[0] - 0.16).abs() < 1e-9);
    }

    #[test]
    fn brackets_for_closed_forms() {
        let (m, k, _) = setup(WeightingFamily::gaussian_half());
        let r = bracket_check(&m, &k, 0.08, 0.01, 0.1).unwrap();
        assert!(r.k0_holds && r.k2_holds);
        assert!((r.k1_max_ratio - 0.5).abs() < 1e-8 && (r.k2_min_ratio - 4.0).abs() < 1e-7, "{r:?}");
        let (m, k, _) = setup(WeightingFamily::identity());
        let r = bracket_check(&m, &k, 0.2, 0.1, 0.1).unwrap();
        assert!((r.k1_max_ratio - 0.8).abs() < 1e-8 && (r.k2_min_ratio - 1.6).abs() < 1e-7);
    }

    #[test]
    fn constant_tk_has_no_positive_seed() {
        let (m, k, g) = setup(WeightingFamily::tk_constant(0.65).unwrap());
        assert!(matches!(solve(&m, &k, &g, &SolverConfig::default()), Err(Error::SeedDivergence(_))));
    }
}
