//! Time-indexed probability weighting functions.
//!
//! Besides the probability-space interface `w`, `wp`, `wpp`, every family can
//! be evaluated at a normal score `y` (so `p = N(y)`). That form keeps full
//! relative precision in both tails and is what the kernel quadrature uses.

use crate::curve::TimeCurve;
use crate::error::{Error, Result};
use crate::interp::HermiteTable;
use crate::scalar::{lit, Real};
use crate::hkernel::{HKernel, QuadConfig};
use crate::market::{MarketModel, TimeGrid};
use crate::special::{norm_cdf, norm_pdf, norm_quantile};
use serde::Serialize;
use std::sync::Arc;

/// Largest normal score at which `N(-y)` is still a normal float.
pub fn z_cap<T: Real>() -> T {
    (-lit::<T>(2.0) * T::min_positive_value().ln()).sqrt() - T::one()
}

#[derive(Debug, Clone)]
pub enum WeightingKind<T: Real> {
    /// `w(p) = p`.
    Identity,
    /// `w(p) = N(N^{-1}(p) / sqrt 2)`.
    GaussianHalf,
    /// Tversky-Kahneman family with time-varying `delta(t)` in `(0, 1]`.
    Tk(TimeCurve<T>),
    /// `w(p) = p^gamma(t)` with `gamma >= 1` (convex).
    Power(TimeCurve<T>),
    /// Time-invariant monotone cubic through sample points `(p_i, w_i)`.
    Tabulated(HermiteTable<T>),
}

/// Probability weighting `w(t, p)` with p-derivatives.
#[derive(Debug, Clone)]
pub struct WeightingFamily<T: Real> {
    kind: WeightingKind<T>,
}

/// Tversky-Kahneman weighting `p^d / (p^d + (1-p)^d)^{1/d}`.
pub fn tk_weight<T: Real>(p: T, delta: T) -> Result<T> {
    check_prob(p)?;
    check_delta(delta)?;
    if p == T::zero() || p == T::one() {
        return Ok(p);
    }
    Ok(tk_parts(p, T::one() - p, delta).w)
}

/// `alpha(p; d) = (p^d + (1-p)^d)^{-1/d}`.
pub fn tk_alpha<T: Real>(p: T, delta: T) -> T {
    (p.powf(delta) + (T::one() - p).powf(delta)).powf(-delta.recip())
}

fn check_prob<T: Real>(p: T) -> Result<()> {
    if !(p >= T::zero() && p <= T::one()) {
        return Err(Error::DomainError(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_delta<T: Real>(delta: T) -> Result<()> {
    if !(delta > T::zero() && delta <= T::one()) {
        return Err(Error::DomainError(format!("TK parameter {delta} outside (0, 1]")));
    }
    Ok(())
}

/// Scaled pieces of the TK weighting with `s = min(p, q)`:
/// `w' = (w/s) sl` and `w'' = (w/s^2) (sl^2 + s2lp)`.
struct TkParts<T> {
    w: T,
    w_over_s: T,
    sl: T,
    s2lp: T,
    s: T,
}

fn tk_parts<T: Real>(p: T, q: T, d: T) -> TkParts<T> {
    let a = p.powf(d);
    let b = q.powf(d);
    let sum = a + b;
    let w = a / sum.powf(d.recip());
    let s = p.min(q);
    let rp = s / p;
    let rq = s / q;
    let u = rp * a - rq * b;
    let sl = d * rp - u / sum;
    let s2lp = -d * rp * rp - (d - T::one()) * (rp * rp * a + rq * rq * b) / sum
        + d * u * u / (sum * sum);
    TkParts { w, w_over_s: w / s, sl, s2lp, s }
}

impl<T: Real> WeightingFamily<T> {
    pub fn new(kind: WeightingKind<T>) -> Self {
        WeightingFamily { kind }
    }

    pub fn identity() -> Self {
        Self::new(WeightingKind::Identity)
    }

    pub fn gaussian_half() -> Self {
        Self::new(WeightingKind::GaussianHalf)
    }

    pub fn tk(delta: TimeCurve<T>) -> Self {
        Self::new(WeightingKind::Tk(delta))
    }

    pub fn tk_constant(delta: T) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self::tk(TimeCurve::Constant(delta)))
    }

    pub fn power(gamma: TimeCurve<T>) -> Self {
        Self::new(WeightingKind::Power(gamma))
    }

    /// Monotone cubic through `(p_i, w_i)`; the table must start at (0, 0)
    /// and end at (1, 1).
    pub fn tabulated(ps: Vec<T>, ws: Vec<T>) -> Result<Self> {
        if ps.first() != Some(&T::zero()) || ps.last() != Some(&T::one()) {
            return Err(Error::DomainError("tabulated weighting must span p = 0 to p = 1".into()));
        }
        if ws.first() != Some(&T::zero()) || ws.last() != Some(&T::one()) {
            return Err(Error::DomainError("tabulated weighting must satisfy w(0)=0, w(1)=1".into()));
        }
        Ok(Self::new(WeightingKind::Tabulated(HermiteTable::monotone(ps, ws)?)))
    }

    pub fn kind(&self) -> &WeightingKind<T> {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            WeightingKind::Identity => "identity",
            WeightingKind::GaussianHalf => "gaussian_half",
            WeightingKind::Tk(_) => "tk",
            WeightingKind::Power(_) => "power",
            WeightingKind::Tabulated(_) => "tabulated",
        }
    }

    /// `delta(t)` for the TK kind.
    pub fn delta(&self, t: T) -> Option<T> {
        match &self.kind {
            WeightingKind::Tk(c) => Some(c.eval(t)),
            _ => None,
        }
    }

    /// Times where the parameter curve jumps.
    pub fn time_breakpoints(&self) -> Vec<T> {
        match &self.kind {
            WeightingKind::Tk(c) | WeightingKind::Power(c) => c.breakpoints(),
            _ => Vec::new(),
        }
    }

    fn tk_delta(&self, t: T) -> Result<T> {
        let d = self.delta(t).unwrap_or(T::one());
        check_delta(d)?;
        Ok(d)
    }

    fn gamma(&self, t: T) -> Result<T> {
        match &self.kind {
            WeightingKind::Power(c) => {
                let g = c.eval(t);
                if !(g >= T::one() && g.is_finite()) {
                    return Err(Error::DomainError(format!("power exponent {g} must be >= 1")));
                }
                Ok(g)
            }
            _ => Ok(T::one()),
        }
    }

    /// Whether `w'(t, .)` is unbounded at the endpoints.
    pub fn unbounded_at_endpoints(&self, t: T) -> bool {
        match &self.kind {
            WeightingKind::GaussianHalf => true,
            WeightingKind::Tk(c) => c.eval(t) < T::one(),
            _ => false,
        }
    }

    /// `w(t, p)`.
    pub fn w(&self, t: T, p: T) -> Result<T> {
        check_prob(p)?;
        if p == T::zero() || p == T::one() {
            return Ok(p);
        }
        Ok(match &self.kind {
            WeightingKind::Identity => p,
            WeightingKind::GaussianHalf => {
                if p <= lit(0.5) {
                    norm_cdf(norm_quantile(p) * T::FRAC_1_SQRT_2())
                } else {
                    T::one() - norm_cdf(norm_quantile(T::one() - p) * T::FRAC_1_SQRT_2())
                }
            }
            WeightingKind::Tk(_) => tk_parts(p, T::one() - p, self.tk_delta(t)?).w,
            WeightingKind::Power(_) => p.powf(self.gamma(t)?),
            WeightingKind::Tabulated(tab) => tab.eval(p).0,
        })
    }

    /// `w` at `p = N(y)`, with `1 - w` accurate for large `y`.
    pub fn w_z(&self, t: T, y: T) -> Result<T> {
        let cap = z_cap::<T>();
        if y <= -cap {
            return Ok(T::zero());
        }
        if y >= cap {
            return Ok(T::one());
        }
        Ok(match &self.kind {
            WeightingKind::GaussianHalf => norm_cdf(y * T::FRAC_1_SQRT_2()),
            WeightingKind::Tk(_) => tk_parts(norm_cdf(y), norm_cdf(-y), self.tk_delta(t)?).w,
            _ => self.w(t, norm_cdf(y))?,
        })
    }

    /// `1 - w(t, N(y))` computed without cancellation.
    pub fn w_upper_z(&self, t: T, y: T) -> Result<T> {
        Ok(match &self.kind {
            WeightingKind::Identity => norm_cdf(-y),
            WeightingKind::GaussianHalf => norm_cdf(-y * T::FRAC_1_SQRT_2()),
            WeightingKind::Tk(_) => {
                let cap = z_cap::<T>();
                if y >= cap {
                    return Ok(T::zero());
                }
                if y <= -cap {
                    return Ok(T::one());
                }
                let d = self.tk_delta(t)?;
                let p = norm_cdf(y);
                let q = norm_cdf(-y);
                if p < lit(0.5) {
                    T::one() - tk_parts(p, q, d).w
                } else {
                    // 1 - w = (S^{1/d} - p^d) / S^{1/d}, with S^{1/d} - p^d
                    // expanded through a log to avoid cancellation.
                    let a = p.powf(d);
                    let b = q.powf(d);
                    let ln_s = (a + b).ln();
                    let e = (ln_s / d - d * p.ln()).exp_m1();
                    let sd = (ln_s / d).exp();
                    a * e / sd
                }
            }
            _ => T::one() - self.w_z(t, y)?,
        })
    }

    /// `w'_p(t, p)`.
    pub fn wp(&self, t: T, p: T) -> Result<T> {
        check_prob(p)?;
        if (p == T::zero() || p == T::one()) && self.unbounded_at_endpoints(t) {
            return Err(Error::EndpointSingularity { p: p.as_f64() });
        }
        Ok(match &self.kind {
            WeightingKind::Identity => T::one(),
            WeightingKind::GaussianHalf => {
                let x = norm_quantile(p);
                (x * x * lit(0.25)).exp() * T::FRAC_1_SQRT_2()
            }
            WeightingKind::Tk(_) => {
                let d = self.tk_delta(t)?;
                if d == T::one() {
                    return Ok(T::one());
                }
                let k = tk_parts(p, T::one() - p, d);
                k.w_over_s * k.sl
            }
            WeightingKind::Power(_) => {
                let g = self.gamma(t)?;
                g * p.powf(g - T::one())
            }
            WeightingKind::Tabulated(tab) => tab.eval(p).1,
        })
    }

    /// `w''_pp(t, p)`.
    pub fn wpp(&self, t: T, p: T) -> Result<T> {
        check_prob(p)?;
        if (p == T::zero() || p == T::one()) && self.unbounded_at_endpoints(t) {
            return Err(Error::EndpointSingularity { p: p.as_f64() });
        }
        Ok(match &self.kind {
            WeightingKind::Identity => T::zero(),
            WeightingKind::GaussianHalf => {
                let x = norm_quantile(p);
                x * lit(0.5) * (x * x * lit(0.25)).exp() * T::FRAC_1_SQRT_2() / norm_pdf(x)
            }
            WeightingKind::Tk(_) => {
                let d = self.tk_delta(t)?;
                if d == T::one() {
                    return Ok(T::zero());
                }
                let k = tk_parts(p, T::one() - p, d);
                k.w_over_s / k.s * (k.sl * k.sl + k.s2lp)
            }
            WeightingKind::Power(_) => {
                let g = self.gamma(t)?;
                if g == T::one() {
                    return Ok(T::zero());
                }
                g * (g - T::one()) * p.powf(g - lit(2.0))
            }
            WeightingKind::Tabulated(tab) => tab.eval(p).2,
        })
    }

    /// `w'_p(t, N(y))`.
    pub fn wp_z(&self, t: T, y: T) -> T {
        let cap = z_cap::<T>();
        let y = y.max(-cap).min(cap);
        match &self.kind {
            WeightingKind::Identity => T::one(),
            WeightingKind::GaussianHalf => (y * y * lit(0.25)).exp() * T::FRAC_1_SQRT_2(),
            WeightingKind::Tk(c) => {
                let d = c.eval(t);
                if d >= T::one() {
                    return T::one();
                }
                let k = tk_parts(norm_cdf(y), norm_cdf(-y), d);
                k.w_over_s * k.sl
            }
            WeightingKind::Power(c) => {
                let g = c.eval(t);
                g * norm_cdf(y).powf(g - T::one())
            }
            WeightingKind::Tabulated(tab) => tab.eval(norm_cdf(y)).1,
        }
    }

    /// `d/dy [w'_p(t, N(y))] = w''_pp(t, N(y)) N'(y)`.
    pub fn dwp_z(&self, t: T, y: T) -> T {
        let cap = z_cap::<T>();
        let y = y.max(-cap).min(cap);
        match &self.kind {
            WeightingKind::Identity => T::zero(),
            WeightingKind::GaussianHalf => {
                y * lit(0.5) * (y * y * lit(0.25)).exp() * T::FRAC_1_SQRT_2()
            }
            WeightingKind::Tk(c) => {
                let d = c.eval(t);
                if d >= T::one() {
                    return T::zero();
                }
                let k = tk_parts(norm_cdf(y), norm_cdf(-y), d);
                k.w_over_s * (norm_pdf(y) / k.s) * (k.sl * k.sl + k.s2lp)
            }
            WeightingKind::Power(c) => {
                let g = c.eval(t);
                if g == T::one() {
                    return T::zero();
                }
                let p = norm_cdf(y);
                g * (g - T::one()) * p.powf(g - T::one()) * (norm_pdf(y) / p)
            }
            WeightingKind::Tabulated(tab) => tab.eval(norm_cdf(y)).2 * norm_pdf(y),
        }
    }
}

/// One certified condition, with the mesh and tolerance it was checked on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Signed distance from failure; nonnegative when the check holds.
    pub margin: f64,
    pub tolerance: f64,
    pub grid: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    fn new(name: &str, passed: bool, margin: f64, tolerance: f64, grid: String) -> Self {
        Check { name: name.into(), passed, margin, tolerance, grid, detail: None }
    }

    fn with_detail(mut self, detail: Option<String>) -> Self {
        self.detail = detail;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Shape {
    #[serde(rename = "convex")]
    Convex,
    #[serde(rename = "inverse-S")]
    InverseS,
    #[serde(rename = "other")]
    Other,
}

/// Tail fit and shape at one time node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeReport {
    pub t: f64,
    /// Log-log slope of `w'` against `p` as `p -> 0`.
    pub slope_low: f64,
    /// Log-log slope of `w'` against `1 - p` as `p -> 1`.
    pub slope_high: f64,
    /// Exponent used in the bound `w' <= c (p^m + (1-p)^m)`.
    pub m: f64,
    pub c: f64,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightingCertificate {
    pub family: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub nodes: Vec<NodeReport>,
}

impl WeightingCertificate {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Tolerance on `w''` below which its sign is ignored.
pub const SHAPE_TOL: f64 = 1e-10;
/// Points in the symmetric log mesh used for shape classification.
pub const SHAPE_POINTS: usize = 2001;
/// Threshold for the terminal ratio `(1 - delta) / (delta sqrt(T - t))`.
pub const TERMINAL_RATIO_MAX: f64 = 0.05;
/// Tolerance on kernel sign conditions (quadrature noise).
pub const KERNEL_SIGN_TOL: f64 = 1e-9;

const TAIL_WINDOW: (f64, f64) = (1e-8, 1e-3);
const TAIL_POINTS: usize = 41;

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n).map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Classifies the sign pattern of `w''` (negatives, then positives).
pub fn classify_shape(signs: &[f64], tol: f64) -> Shape {
    let s: Vec<i8> = signs
        .iter()
        .filter_map(|&v| if v > tol { Some(1) } else if v < -tol { Some(-1) } else { None })
        .collect();
    if s.iter().all(|&v| v > 0) {
        return Shape::Convex;
    }
    let changes = s.windows(2).filter(|w| w[0] != w[1]).count();
    if changes == 1 && s[0] < 0 {
        Shape::InverseS
    } else {
        Shape::Other
    }
}

impl<T: Real> WeightingFamily<T> {
    fn node_report(&self, t: T) -> NodeReport {
        let ys_low: Vec<f64> = logspace(TAIL_WINDOW.0, TAIL_WINDOW.1, TAIL_POINTS)
            .into_iter()
            .map(norm_quantile)
            .collect();
        let fit = |sign: f64| {
            let mut lx = Vec::new();
            let mut ly = Vec::new();
            for &y in &ys_low {
                let yy = lit::<T>(sign * y);
                lx.push(norm_cdf(lit::<T>(y)).as_f64().ln());
                ly.push(self.wp_z(t, yy).as_f64().ln());
            }
            slope(&lx, &ly)
        };
        let slope_low = fit(1.0);
        let slope_high = fit(-1.0);
        let m = (slope_low.min(slope_high) - 0.05).clamp(-0.999, -0.01);
        let cap = z_cap::<T>().as_f64() - 1.0;
        let mut c = 0.0f64;
        for i in 0..=800 {
            let y = -cap + 2.0 * cap * i as f64 / 800.0;
            let p = norm_cdf(lit::<T>(y)).as_f64();
            let q = norm_cdf(lit::<T>(-y)).as_f64();
            let bound = p.powf(m) + q.powf(m);
            c = c.max(self.wp_z(t, lit(y)).as_f64() / bound);
        }
        let half = (SHAPE_POINTS - 1) / 2;
        let ps = logspace(1e-12, 0.5, half + 1);
        let mut wpp = Vec::with_capacity(SHAPE_POINTS);
        for &p in &ps {
            let y = norm_quantile(lit::<T>(p));
            wpp.push((self.dwp_z(t, y) / norm_pdf(y)).as_f64());
        }
        for &q in ps.iter().rev().skip(1) {
            let y = -norm_quantile(lit::<T>(q));
            wpp.push((self.dwp_z(t, y) / norm_pdf(y)).as_f64());
        }
        NodeReport {
            t: t.as_f64(),
            slope_low,
            slope_high,
            m,
            c,
            shape: classify_shape(&wpp, SHAPE_TOL),
        }
    }

    /// Certifies the weighting-side assumptions on `grid`; never fails, the
    /// outcome of each condition is recorded in the certificate.
    pub fn certify(&self, market: &MarketModel<T>, grid: &TimeGrid<T>) -> WeightingCertificate {
        let kernel = HKernel::new(Arc::new(self.clone()), QuadConfig::default());
        certify_with(&kernel, market, grid)
    }
}

/// As [`WeightingFamily::certify`], reusing an existing kernel.
pub fn certify_with<T: Real>(
    kernel: &HKernel<T>,
    market: &MarketModel<T>,
    grid: &TimeGrid<T>,
) -> WeightingCertificate {
    let fam = kernel.weighting();
    let nodes_t = grid.nodes();
    let horizon = market.horizon().as_f64();
    let tgrid = format!("{} time nodes on [0, {horizon}]", nodes_t.len());
    let mut checks = Vec::new();

    let mut dev = 0.0f64;
    for &t in nodes_t {
        let w0 = fam.w(t, T::zero()).map(|v| v.as_f64()).unwrap_or(f64::INFINITY);
        let w1 = fam.w(t, T::one()).map(|v| (v.as_f64() - 1.0).abs()).unwrap_or(f64::INFINITY);
        dev = dev.max(w0.abs()).max(w1);
    }
    checks.push(Check::new("endpoints", dev <= 1e-15, -dev, 1e-15, tgrid.clone()));

    let mut min_wp = f64::INFINITY;
    for &t in nodes_t {
        for i in 0..=400 {
            let y = -10.0 + 20.0 * i as f64 / 400.0;
            min_wp = min_wp.min(fam.wp_z(t, lit(y)).as_f64());
        }
    }
    checks.push(Check::new(
        "monotone",
        min_wp > 0.0,
        min_wp,
        0.0,
        format!("{tgrid} x 401 normal scores in [-10, 10]"),
    ));

    let reports: Vec<NodeReport> = nodes_t.iter().map(|&t| fam.node_report(t)).collect();
    let worst_slope = reports.iter().map(|r| r.slope_low.min(r.slope_high)).fold(f64::INFINITY, f64::min);
    let c_ok = reports.iter().all(|r| r.c.is_finite() && r.c > 0.0);
    checks.push(Check::new(
        "tail_growth",
        worst_slope > -1.0 && c_ok,
        worst_slope + 1.0,
        0.0,
        format!(
            "{tgrid}; slopes fitted on p in [{:e}, {:e}] and mirrored, {TAIL_POINTS} points; c over 801 normal scores",
            TAIL_WINDOW.0, TAIL_WINDOW.1
        ),
    ));

    let bad_shape: Vec<f64> =
        reports.iter().filter(|r| r.shape == Shape::Other).map(|r| r.t).collect();
    checks.push(
        Check::new(
            "shape",
            bad_shape.is_empty(),
            -(bad_shape.len() as f64),
            SHAPE_TOL,
            format!("{tgrid} x {SHAPE_POINTS}-point symmetric log mesh on [1e-12, 1 - 1e-12]"),
        )
        .with_detail(bad_shape.first().map(|t| format!("neither convex nor inverse-S at t = {t}"))),
    );

    let near_t = logspace(1e-8 * horizon, 1e-7 * horizon, 11);
    let near_grid = format!("T - t in [{:e}, {:e}], 11 log-spaced points", near_t[0], near_t[10]);
    if let WeightingKind::Tk(curve) = fam.kind() {
        let inf_delta = nodes_t
            .iter()
            .map(|&t| curve.eval(t).as_f64())
            .fold(f64::INFINITY, f64::min);
        let sup_delta = nodes_t.iter().map(|&t| curve.eval(t).as_f64()).fold(0.0, f64::max);
        checks.push(Check::new(
            "delta_range",
            inf_delta > 0.0 && sup_delta <= 1.0,
            inf_delta.min(1.0 - sup_delta),
            0.0,
            tgrid.clone(),
        ));
        let dt = curve.eval(market.horizon()).as_f64();
        checks.push(Check::new("delta_terminal", dt == 1.0, -(1.0 - dt).abs(), 0.0, "t = T".into()));
        let ratios: Vec<f64> = near_t
            .iter()
            .map(|&tau| {
                let d = curve.eval(market.horizon() - lit(tau)).as_f64();
                (1.0 - d) / (d * tau.sqrt())
            })
            .collect();
        let monotone = ratios.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-12));
        let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
        checks.push(Check::new(
            "terminal_ratio",
            monotone && max_ratio < TERMINAL_RATIO_MAX,
            TERMINAL_RATIO_MAX - max_ratio,
            TERMINAL_RATIO_MAX,
            near_grid.clone(),
        ));
    }

    let tol = KERNEL_SIGN_TOL;
    let mut odd_min = f64::INFINITY;
    let mut h1_sup = 0.0f64;
    let mut h2_inf = f64::INFINITY;
    let mut kernel_err: Option<String> = None;
    for &t in nodes_t {
        match (kernel.moments(t, T::zero()), kernel.h(t, T::one())) {
            (Ok(m0), Ok(h1)) => {
                odd_min = odd_min.min(m0[1].as_f64()).min(m0[3].as_f64());
                h1_sup = h1_sup.max(h1.as_f64());
                h2_inf = h2_inf.min(m0[2].as_f64());
            }
            (Err(e), _) | (_, Err(e)) => {
                kernel_err.get_or_insert_with(|| format!("t = {t}: {e}"));
            }
        }
    }
    checks.push(
        Check::new("kernel_odd_derivatives", kernel_err.is_none() && odd_min >= -tol, odd_min, tol, tgrid.clone())
            .with_detail(kernel_err.clone()),
    );
    let mut slope_ratio = 0.0f64;
    let mut theta_inf = f64::INFINITY;
    let mut h2_one_sup = 0.0f64;
    for &tau in &near_t {
        let t = market.horizon() - lit(tau);
        let th2 = market.theta_norm_sq(t).map(|v| v.as_f64()).unwrap_or(0.0);
        theta_inf = theta_inf.min(th2);
        match (kernel.h_deriv(t, T::zero(), 1), kernel.h_deriv(t, T::one(), 2)) {
            (Ok(d1), Ok(d2)) => {
                slope_ratio = slope_ratio.max(d1.as_f64() / (th2 * tau).sqrt());
                h2_one_sup = h2_one_sup.max(d2.as_f64());
            }
            (Err(e), _) | (_, Err(e)) => {
                kernel_err.get_or_insert_with(|| format!("T - t = {tau}: {e}"));
            }
        }
    }
    checks.push(Check::new(
        "terminal_kernel_slope",
        slope_ratio < 1.0 && theta_inf > 0.0,
        (1.0 - slope_ratio).min(theta_inf),
        0.0,
        near_grid.clone(),
    ));
    checks.push(Check::new(
        "kernel_bounded",
        h1_sup.is_finite() && h2_one_sup.is_finite() && kernel_err.is_none(),
        -h1_sup.max(h2_one_sup),
        0.0,
        format!("{tgrid} at x = 1; {near_grid} for the second derivative"),
    ));
    checks.push(Check::new("kernel_curvature", h2_inf > 0.0, h2_inf, 0.0, tgrid));

    WeightingCertificate {
        family: fam.name().into(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        nodes: reports,
    }
}
