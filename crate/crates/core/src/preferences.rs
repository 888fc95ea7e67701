//! Utility functions on the real line, inverse marginal utility and
//! certification of the utility-side assumptions.

use crate::error::{Error, Result};
use crate::interp::{hermite, segment};
use crate::quadrature::{integrate_scalar, GkOptions};
use crate::scalar::{lit, Real};
use crate::weighting::Check;
use serde::Serialize;
use std::fmt;
use std::sync::Arc;

pub type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// User-supplied `u` with its first three derivatives.
#[derive(Clone)]
pub struct CustomUtility<T> {
    pub u: ScalarFn<T>,
    pub u1: ScalarFn<T>,
    pub u2: ScalarFn<T>,
    pub u3: ScalarFn<T>,
    /// Closed-form `(u')^{-1}`; found by root search when absent.
    pub inverse: Option<ScalarFn<T>>,
}

/// Rows `(x, u, u', u'', u''')` with CARA extrapolation past both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTable<T> {
    pub x: Vec<T>,
    pub u: Vec<T>,
    pub u1: Vec<T>,
    pub u2: Vec<T>,
    pub u3: Vec<T>,
}

#[derive(Clone)]
pub enum UtilityKind<T> {
    /// `u(x) = -exp(-alpha x)`, so `u'(x) = alpha exp(-alpha x)`.
    Exponential { alpha: T },
    Custom(CustomUtility<T>),
    Tabulated(UtilityTable<T>),
}

impl<T: Real> fmt::Debug for UtilityKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilityKind::Exponential { alpha } => write!(f, "Exponential(alpha={alpha})"),
            UtilityKind::Custom(_) => write!(f, "Custom"),
            UtilityKind::Tabulated(t) => write!(f, "Tabulated({} rows)", t.x.len()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UtilityModel<T: Real> {
    kind: UtilityKind<T>,
}

impl<T: Real> UtilityTable<T> {
    pub fn new(x: Vec<T>, u: Vec<T>, u1: Vec<T>, u2: Vec<T>, u3: Vec<T>) -> Result<Self> {
        let n = x.len();
        if n < 2 || [u.len(), u1.len(), u2.len(), u3.len()].iter().any(|&m| m != n) {
            return Err(Error::DomainError("utility table needs at least two complete rows".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::DomainError("utility table x column must increase strictly".into()));
        }
        if u1.iter().any(|&v| !(v > T::zero())) || u2.iter().any(|&v| !(v < T::zero())) {
            return Err(Error::DomainError("utility table needs u' > 0 and u'' < 0".into()));
        }
        Ok(UtilityTable { x, u, u1, u2, u3 })
    }

    /// Parses CSV text with header `x,u,u1,u2,u3`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::Config(format!("utility CSV: {e}")))?.clone();
        let cols = ["x", "u", "u1", "u2", "u3"];
        let idx: Vec<usize> = cols
            .iter()
            .map(|c| {
                headers
                    .iter()
                    .position(|h| h == *c)
                    .ok_or_else(|| Error::Config(format!("utility CSV: missing column `{c}`")))
            })
            .collect::<Result<_>>()?;
        let mut data: [Vec<T>; 5] = Default::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("utility CSV: {e}")))?;
            for (k, &i) in idx.iter().enumerate() {
                let field = rec.get(i).unwrap_or("");
                let v: f64 = field.parse().map_err(|_| {
                    Error::Config(format!("utility CSV row {}: `{field}` is not a number", line + 2))
                })?;
                data[k].push(lit(v));
            }
        }
        let [x, u, u1, u2, u3] = data;
        Self::new(x, u, u1, u2, u3)
    }

    /// `(u, u', u'', u''')` at `x`.
    fn eval(&self, x: T) -> [T; 4] {
        let n = self.x.len();
        let (x0, xn) = (self.x[0], self.x[n - 1]);
        let edge = if x < x0 {
            Some(0)
        } else if x > xn {
            Some(n - 1)
        } else {
            None
        };
        if let Some(e) = edge {
            let a = -self.u2[e] / self.u1[e];
            let d = x - self.x[e];
            let g = (-a * d).exp();
            let up = self.u1[e] * g;
            return [self.u[e] + self.u1[e] / a * (T::one() - g), up, -a * up, a * a * up];
        }
        let i = segment(&self.x, x);
        let (xa, xb) = (self.x[i], self.x[i + 1]);
        let (u, _, _) = hermite(xa, xb, self.u[i], self.u[i + 1], self.u1[i], self.u1[i + 1], x);
        let (u1, _, _) = hermite(xa, xb, self.u1[i], self.u1[i + 1], self.u2[i], self.u2[i + 1], x);
        let (u2, _, _) = hermite(xa, xb, self.u2[i], self.u2[i + 1], self.u3[i], self.u3[i + 1], x);
        let s = (x - xa) / (xb - xa);
        let u3 = self.u3[i] + (self.u3[i + 1] - self.u3[i]) * s;
        [u, u1, u2, u3]
    }
}

impl<T: Real> UtilityModel<T> {
    pub fn new(kind: UtilityKind<T>) -> Self {
        UtilityModel { kind }
    }

    pub fn exponential(alpha: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha.is_finite()) {
            return Err(Error::DomainError(format!("risk aversion {alpha} must be positive")));
        }
        Ok(Self::new(UtilityKind::Exponential { alpha }))
    }

    pub fn custom(custom: CustomUtility<T>) -> Self {
        Self::new(UtilityKind::Custom(custom))
    }

    pub fn tabulated(table: UtilityTable<T>) -> Self {
        Self::new(UtilityKind::Tabulated(table))
    }

    pub fn kind(&self) -> &UtilityKind<T> {
        &self.kind
    }

    /// Risk aversion for the exponential kind.
    pub fn alpha(&self) -> Option<T> {
        match self.kind {
            UtilityKind::Exponential { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            UtilityKind::Exponential { .. } => "exponential",
            UtilityKind::Custom(_) => "custom",
            UtilityKind::Tabulated(_) => "tabulated",
        }
    }

    /// `(u, u', u'', u''')` at `x`.
    pub fn derivatives(&self, x: T) -> [T; 4] {
        match &self.kind {
            UtilityKind::Exponential { alpha } => {
                let e = (-*alpha * x).exp();
                [-e, *alpha * e, -*alpha * *alpha * e, *alpha * *alpha * *alpha * e]
            }
            UtilityKind::Custom(c) => [(c.u)(x), (c.u1)(x), (c.u2)(x), (c.u3)(x)],
            UtilityKind::Tabulated(t) => t.eval(x),
        }
    }

    pub fn u(&self, x: T) -> T {
        match &self.kind {
            UtilityKind::Custom(c) => (c.u)(x),
            _ => self.derivatives(x)[0],
        }
    }

    pub fn u1(&self, x: T) -> T {
        match &self.kind {
            UtilityKind::Custom(c) => (c.u1)(x),
            _ => self.derivatives(x)[1],
        }
    }

    pub fn u2(&self, x: T) -> T {
        match &self.kind {
            UtilityKind::Custom(c) => (c.u2)(x),
            _ => self.derivatives(x)[2],
        }
    }

    pub fn u3(&self, x: T) -> T {
        match &self.kind {
            UtilityKind::Custom(c) => (c.u3)(x),
            _ => self.derivatives(x)[3],
        }
    }

    /// `l(x) = -ln u'(x)`.
    pub fn l(&self, x: T) -> T {
        match self.kind {
            UtilityKind::Exponential { alpha } => alpha * x - alpha.ln(),
            _ => -self.u1(x).ln(),
        }
    }

    /// `(l', l'')` at `x`.
    pub fn l_derivs(&self, x: T) -> (T, T) {
        let [_, u1, u2, u3] = self.derivatives(x);
        let r = u2 / u1;
        (-r, -u3 / u1 + r * r)
    }

    /// `I(y) = (u')^{-1}(y)`.
    pub fn inverse_marginal(&self, y: T) -> Result<T> {
        if !(y > T::zero() && y.is_finite()) {
            return Err(Error::DomainError(format!("marginal utility level {y} must be positive")));
        }
        match &self.kind {
            UtilityKind::Exponential { alpha } => Ok((alpha.ln() - y.ln()) / *alpha),
            UtilityKind::Custom(CustomUtility { inverse: Some(inv), .. }) => Ok(inv(y)),
            _ => self.invert_numerically(y),
        }
    }

    /// `I'(y) = 1 / u''(I(y))`.
    pub fn inverse_marginal_deriv(&self, y: T) -> Result<T> {
        match self.kind {
            UtilityKind::Exponential { alpha } => Ok(-(alpha * y).recip()),
            _ => Ok(self.u2(self.inverse_marginal(y)?).recip()),
        }
    }

    /// Solves `u'(x) = y` on `ln u'` (decreasing) by bracketing, then
    /// safeguarded Newton.
    fn invert_numerically(&self, y: T) -> Result<T> {
        let target = y.ln();
        let g = |x: T| -> T { self.u1(x).ln() - target };
        let mut lo = -T::one();
        let mut hi = T::one();
        let limit = lit::<T>(1e8);
        while g(lo) < T::zero() {
            lo = lo * lit(2.0);
            if lo < -limit {
                return Err(Error::NoRoot { lo: lo.as_f64(), hi: hi.as_f64() });
            }
        }
        while g(hi) > T::zero() {
            hi = hi * lit(2.0);
            if hi > limit {
                return Err(Error::NoRoot { lo: lo.as_f64(), hi: hi.as_f64() });
            }
        }
        let mut x = (lo + hi) * lit(0.5);
        for _ in 0..200 {
            let gx = g(x);
            if gx == T::zero() {
                return Ok(x);
            }
            if gx > T::zero() {
                lo = x;
            } else {
                hi = x;
            }
            let [_, u1, u2, _] = self.derivatives(x);
            let newton = x - gx / (u2 / u1);
            x = if newton > lo && newton < hi && newton.is_finite() {
                newton
            } else {
                (lo + hi) * lit(0.5)
            };
            if (hi - lo) <= T::epsilon() * lit::<T>(4.0) * x.abs().max(T::one())
                || gx.abs() <= T::epsilon()
            {
                break;
            }
        }
        Ok(x)
    }
}

/// Outcome of [`certify_utility`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityCertificate {
    pub utility: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Fitted exponent in `limsup_{x -> -inf} -u''/(u')^alpha < inf`.
    pub alpha: f64,
    /// Constants in `l', l'' <= exp(a |l| + b)`.
    pub a: f64,
    pub b: f64,
    pub nu: f64,
    pub zeta: f64,
}

impl UtilityCertificate {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Certification mesh: `[-50, 50]`, log-densified toward 0.
pub fn certification_grid() -> Vec<f64> {
    let mut xs = vec![0.0];
    for i in 0..=240 {
        let v = 10f64.powf(-6.0 + (6.0 + 50f64.log10()) * i as f64 / 240.0);
        xs.push(v);
        xs.push(-v);
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs
}

fn check(name: &str, passed: bool, margin: f64, tolerance: f64, grid: &str) -> Check {
    Check {
        name: name.into(),
        passed,
        margin,
        tolerance,
        grid: grid.into(),
        detail: None,
    }
}

/// Certifies the utility-side assumptions on [`certification_grid`] with the
/// integrability exponents `nu`, `zeta`. Failures are reported, not thrown.
pub fn certify_utility<T: Real>(utility: &UtilityModel<T>, nu: f64, zeta: f64) -> UtilityCertificate {
    let xs = certification_grid();
    let grid = "483 points on [-50, 50], log-spaced from 1e-6";
    let d: Vec<[f64; 4]> =
        xs.iter().map(|&x| utility.derivatives(lit(x)).map(|v| v.as_f64())).collect();
    let mut checks = Vec::new();

    let first_bad = |pred: &dyn Fn(&[f64; 4]) -> bool| xs.iter().zip(&d).find(|(_, v)| !pred(v)).map(|(x, _)| *x);
    let bad = first_bad(&|v| v[1] > 0.0 && v[1].is_finite() && v[2] < 0.0);
    let m = d.iter().map(|v| v[1].min(-v[2])).fold(f64::INFINITY, f64::min);
    checks.push(
        check("increasing_concave", bad.is_none(), m, 0.0, grid)
            .with_detail_opt(bad.map(|x| format!("u' > 0 > u'' fails at x = {x}"))),
    );

    let bad = first_bad(&|v| v[3] >= 0.0);
    let m = d.iter().map(|v| v[3]).fold(f64::INFINITY, f64::min);
    checks.push(
        check("prudence", bad.is_none(), m, 0.0, grid)
            .with_detail_opt(bad.map(|x| format!("u''' < 0 at x = {x}"))),
    );

    let mut worst = 0.0f64;
    let mut inv_err = None;
    for (&x, v) in xs.iter().zip(&d) {
        if !(v[1] > 0.0 && v[1].is_finite()) {
            continue;
        }
        match utility.inverse_marginal(lit(v[1])) {
            Ok(back) => worst = worst.max((back.as_f64() - x).abs() / x.abs().max(1.0)),
            Err(e) => {
                inv_err.get_or_insert(format!("x = {x}: {e}"));
            }
        }
    }
    checks.push(
        check("inverse_marginal", inv_err.is_none() && worst <= 1e-10, 1e-10 - worst, 1e-10, grid)
            .with_detail_opt(inv_err),
    );

    let left: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] <= -10.0).collect();
    let lu1: Vec<f64> = left.iter().map(|&i| d[i][1].ln()).collect();
    let lu2: Vec<f64> = left.iter().map(|&i| (-d[i][2]).ln()).collect();
    let alpha = ols_slope(&lu1, &lu2);
    let ratios: Vec<f64> = left.iter().map(|&i| (-d[i][2]) / d[i][1].powf(alpha)).collect();
    let bounded = alpha > 0.0
        && ratios.iter().all(|r| r.is_finite())
        && ratios.first().zip(ratios.last()).is_some_and(|(far, near)| *far <= 10.0 * near.max(1e-300));
    checks.push(check(
        "marginal_growth",
        bounded,
        alpha,
        0.0,
        "grid points with x <= -10",
    ));

    let a = 1.0;
    let mut b = 1e-3f64;
    for &x in &xs {
        let (l1, l2) = utility.l_derivs(lit(x));
        let l = utility.l(lit(x)).as_f64();
        let top = l1.as_f64().max(l2.as_f64());
        if top > 0.0 {
            b = b.max(top.ln() - a * l.abs());
        }
    }
    checks.push(check("log_marginal_regularity", b.is_finite(), -b, 0.0, grid));

    type Tail<'a> = (&'static str, f64, f64, Box<dyn Fn(f64) -> f64 + 'a>);
    let tails: [Tail; 3] = [
        ("integral_left", -1.0, 0.0, Box::new(move |x| utility.u1(lit(x)).as_f64().powf(-nu))),
        ("integral_right", 0.0, 1.0, Box::new(move |x| utility.u1(lit(x)).as_f64().powf(nu))),
        (
            "integral_gaussian",
            -1.0,
            1.0,
            Box::new(move |x| utility.u1(lit(x)).as_f64() * (-zeta * x * x).exp()),
        ),
    ];
    for (name, lo_sign, hi_sign, f) in tails.iter() {
        let value = |reach: f64| -> Result<f64> {
            let (lo, hi) = (lo_sign * reach, hi_sign * reach);
            let mut breaks = vec![lo];
            let n = 20;
            for i in 1..n {
                breaks.push(lo + (hi - lo) * i as f64 / n as f64);
            }
            breaks.push(hi);
            Ok(integrate_scalar(f, &breaks, &GkOptions::default())?.0)
        };
        let (passed, margin, detail) = match (value(25.0), value(50.0)) {
            (Ok(v1), Ok(v2)) if v1.is_finite() && v2.is_finite() => {
                let change = (v2 - v1).abs() / v2.abs().max(1e-300);
                (change <= 1e-6, 1e-6 - change, None)
            }
            (Ok(_), Ok(_)) => (false, f64::NEG_INFINITY, Some("non-finite value".to_string())),
            (Err(e), _) | (_, Err(e)) => (false, f64::NEG_INFINITY, Some(e.to_string())),
        };
        checks.push(
            check(name, passed, margin, 1e-6, "truncation at |x| = 25 versus |x| = 50")
                .with_detail_opt(detail),
        );
    }

    UtilityCertificate {
        utility: utility.name().into(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        alpha,
        a,
        b,
        nu,
        zeta,
    }
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

trait DetailExt {
    fn with_detail_opt(self, d: Option<String>) -> Self;
}

impl DetailExt for Check {
    fn with_detail_opt(mut self, d: Option<String>) -> Self {
        self.detail = d;
        self
    }
}
