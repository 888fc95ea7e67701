//! Numerical certificate that a computed strategy is an equilibrium.
//!
//! The first-order identity, the second-order inequality in its
//! integration-by-parts form, the RDU functional, and a direct spike
//! variation. Internally everything is evaluated in `f64`.

use crate::error::{Error, Result};
use crate::hkernel::HKernel;
use crate::lambda_solver::LambdaSolution;
use crate::market::MarketModel;
use crate::preferences::{UtilityKind, UtilityModel};
use crate::quadrature::{integrate, legendre_rule, normal_expectation_rule, GkOptions};
use crate::scalar::{lit, Real};
use crate::special::{norm_cdf, norm_pdf, norm_quantile};
use crate::weighting::{z_cap, Check, WeightingFamily};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Changes of variable between wealth and accumulated exposure.
#[derive(Debug, Clone)]
pub struct TransformMaps<T: Real> {
    utility: UtilityModel<T>,
    kappa: f64,
    big_lambda0: f64,
    kappa_tilde: f64,
    ln_shift: f64,
}

impl<T: Real> TransformMaps<T> {
    pub fn new(utility: UtilityModel<T>, kappa: f64, big_lambda0: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) || !(big_lambda0 >= 0.0) {
            return Err(Error::DomainError(format!("kappa {kappa} and Lambda(0) {big_lambda0} out of range")));
        }
        Ok(TransformMaps {
            utility,
            kappa,
            big_lambda0,
            kappa_tilde: kappa * (-0.5 * big_lambda0).exp(),
            ln_shift: kappa.ln() - 0.5 * big_lambda0,
        })
    }

    pub fn utility(&self) -> &UtilityModel<T> {
        &self.utility
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn big_lambda0(&self) -> f64 {
        self.big_lambda0
    }

    /// `kappa exp(-Lambda(0)/2)`.
    pub fn kappa_tilde(&self) -> f64 {
        self.kappa_tilde
    }

    /// `g(x) = l(x) + ln kappa - Lambda(0)/2`.
    pub fn g(&self, x: f64) -> f64 {
        self.utility.l(lit(x)).as_f64() + self.ln_shift
    }

    /// `(g', g'')`.
    pub fn g_derivs(&self, x: f64) -> (f64, f64) {
        let (a, b) = self.utility.l_derivs(lit(x));
        (a.as_f64(), b.as_f64())
    }

    /// `f(x) = I(kappa_tilde e^{-x})`, the inverse of `g`.
    pub fn f(&self, x: f64) -> Result<f64> {
        match self.utility.kind() {
            UtilityKind::Exponential { alpha } => {
                let a = alpha.as_f64();
                Ok((x - self.ln_shift + a.ln()) / a)
            }
            _ => Ok(self.utility.inverse_marginal(lit(self.kappa_tilde * (-x).exp()))?.as_f64()),
        }
    }

    /// `f'(x) = 1 / g'(f(x))`.
    pub fn f_deriv(&self, x: f64) -> Result<f64> {
        Ok(1.0 / self.g_derivs(self.f(x)?).0)
    }

    /// `u'(f(x)) = kappa_tilde e^{-x}`.
    pub fn marginal_at_f(&self, x: f64) -> f64 {
        self.kappa_tilde * (-x).exp()
    }

    /// `v(y) = u^{-1}(y)`, infinite outside the range of `u`.
    pub fn v(&self, y: f64) -> f64 {
        if let UtilityKind::Exponential { alpha } = self.utility.kind() {
            let a = alpha.as_f64();
            return if y < 0.0 { -(-y).ln() / a } else { f64::INFINITY };
        }
        let u = |x: f64| self.utility.u(lit(x)).as_f64();
        let (mut lo, mut hi) = (-1.0, 1.0);
        while u(lo) > y {
            lo *= 2.0;
            if lo < -1e8 {
                return f64::NEG_INFINITY;
            }
        }
        while u(hi) < y {
            hi *= 2.0;
            if hi > 1e8 {
                return f64::INFINITY;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if u(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Largest relative error of `f(g(x)) = x` on `xs`.
    pub fn round_trip_error(&self, xs: &[f64]) -> Result<f64> {
        let mut worst = 0.0f64;
        for &x in xs {
            let back = self.f(self.g(x))?;
            worst = worst.max((back - x).abs() / x.abs().max(1.0));
        }
        Ok(worst)
    }
}

/// `sqrt(Lambda) h(t, sqrt(Lambda)) - lambda h'(t, sqrt(Lambda))`.
///
/// The first-order condition after the change of variables; it vanishes at
/// the solved scaling function for every exposure level.
pub fn first_order_integral<T: Real>(kernel: &HKernel<T>, lam: &LambdaSolution<T>, t: T) -> Result<f64> {
    let big = lam.big_lambda_at(t);
    if !(big > T::zero()) {
        return Err(Error::DomainError(format!("Lambda({t}) must be positive")));
    }
    first_order_at(kernel, t, big.as_f64(), lam.lambda_at(t).as_f64())
}

/// [`first_order_integral`] for given `Lambda(t)` and `lambda(t)`.
pub fn first_order_at<T: Real>(kernel: &HKernel<T>, t: T, big_lambda: f64, lambda: f64) -> Result<f64> {
    let x = big_lambda.sqrt();
    let m = kernel.moments(t, lit(x))?;
    Ok(x * m[0].as_f64() - lambda * m[1].as_f64())
}

/// Value of the second-order integral and its two parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondOrder {
    pub t: f64,
    pub c: f64,
    /// `sqrt(Lambda) m4 + m5`.
    pub value: f64,
    pub m4: f64,
    pub m5: f64,
    /// Truncation of the `y` integral.
    pub y_max: f64,
    /// Integrand magnitude at `|y| = y_max` relative to its peak.
    pub endpoint_ratio: f64,
}

/// Endpoint-to-peak ratio required of the truncated integrand.
pub const ENDPOINT_DECAY: f64 = 1e-12;

/// `int N'(y) / f'(c - sqrt(Lambda) y) d[w'(t, N(y)) u'(f(c - sqrt(Lambda) y))]`.
///
/// The differential is expanded by the product rule so that
/// `value = sqrt(Lambda) M4 + M5` with
/// `M4 = int w'(N(y)) N'(y) G(y) dy`,
/// `M5 = int d/dy[w'(N(y))] N'(y) G(y) dy` and
/// `G(y) = -u''(f(c - sqrt(Lambda) y))`.
pub fn second_order_integral<T: Real>(
    maps: &TransformMaps<T>,
    weighting: &WeightingFamily<T>,
    lam: &LambdaSolution<T>,
    t: T,
    c: f64,
) -> Result<SecondOrder> {
    let big = lam.big_lambda_at(t).as_f64();
    if !(big > 0.0) {
        return Err(Error::DomainError(format!("Lambda({t}) must be positive")));
    }
    let sl = big.sqrt();
    let parts = |y: f64| -> [f64; 2] {
        let x = match maps.f(c - sl * y) {
            Ok(x) => x,
            Err(_) => return [f64::NAN; 2],
        };
        let g = -maps.utility.u2(lit(x)).as_f64();
        let phi = norm_pdf(y);
        let yt = lit::<T>(y);
        [weighting.wp_z(t, yt).as_f64() * phi * g, weighting.dwp_z(t, yt).as_f64() * phi * g]
    };
    let mag = |y: f64| {
        let p = parts(y);
        (sl * p[0]).abs() + p[1].abs()
    };
    let peak = (-400..=400).map(|i| mag(i as f64 * 0.02)).fold(0.0, f64::max);
    let cap = z_cap::<f64>();
    let mut y_max = 8.0;
    let mut ratio = mag(y_max).max(mag(-y_max)) / peak;
    while ratio > ENDPOINT_DECAY && y_max < cap {
        y_max = (y_max + 4.0).min(cap);
        ratio = mag(y_max).max(mag(-y_max)) / peak;
    }
    if !ratio.is_finite() {
        return Err(Error::NonfiniteIntegrand { at: y_max });
    }
    let breaks: Vec<f64> = [-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0].iter().map(|s| s * y_max).collect();
    let opts = GkOptions { abs_tol: 1e-14 * peak.max(1e-300), rel_tol: 1e-11, max_intervals: 4000 };
    let r = integrate(parts, &breaks, &opts)?;
    let (m4, m5) = (r.value[0], r.value[1]);
    Ok(SecondOrder { t: t.as_f64(), c, value: sl * m4 + m5, m4, m5, y_max, endpoint_ratio: ratio })
}

/// Same integral in wealth coordinates,
/// `int w'(N(z)) N'(z) (g''(x) + g'(x)^2 z / sqrt(Lambda)) u'(x) dx` with
/// `z = (c - g(x)) / sqrt(Lambda)`.
pub fn second_order_wealth_form<T: Real>(
    maps: &TransformMaps<T>,
    weighting: &WeightingFamily<T>,
    t: T,
    big_lambda: f64,
    c: f64,
) -> Result<f64> {
    let sl = big_lambda.sqrt();
    let zmax = 12.0;
    let lo = maps.f(c - zmax * sl)?;
    let hi = maps.f(c + zmax * sl)?;
    let integrand = |x: f64| -> [f64; 1] {
        let z = (c - maps.g(x)) / sl;
        let (g1, g2) = maps.g_derivs(x);
        let u1 = maps.utility.u1(lit(x)).as_f64();
        [weighting.wp_z(t, lit(z)).as_f64() * norm_pdf(z) * (g2 + g1 * g1 * z / sl) * u1]
    };
    let mut breaks = vec![lo];
    for z in [-6.0, -3.0, 0.0, 3.0, 6.0] {
        breaks.push(maps.f(c + z * sl)?);
    }
    breaks.push(hi);
    let opts = GkOptions { abs_tol: 1e-15, rel_tol: 1e-11, max_intervals: 4000 };
    Ok(integrate(integrand, &breaks, &opts)?.value[0])
}

/// Largest `|z|` the RDU integrals are allowed to reach before giving up.
const RDU_Z_LIMIT: f64 = 36.0;

/// RDU value at `t` given the accumulated exposure `e`, through the
/// weighted tail probabilities
/// `int_0^inf w(P(u(X) > y)) dy + int_{-inf}^0 [w(P(u(X) > y)) - 1] dy`.
///
/// The level `y` is substituted by `y = u(f(e - sqrt(Lambda) z))`, so that
/// `P(u(X) > y) = N(z)`.
pub fn rdu_value<T: Real>(
    maps: &TransformMaps<T>,
    weighting: &WeightingFamily<T>,
    lam: &LambdaSolution<T>,
    t: T,
    e: f64,
) -> Result<f64> {
    if !(t < lam.horizon()) {
        return Err(Error::DomainError(format!("RDU value needs t < T, got {t}")));
    }
    let big = lam.big_lambda_at(t).as_f64();
    if big <= 1e-300 {
        return Ok(maps.utility.u(lit(maps.f(e)?)).as_f64());
    }
    let sl = big.sqrt();
    // Level z0 where u changes sign, if it does. Without a crossing, `u < 0`
    // everywhere and the slowly decaying `-dy` part of `w - 1` on `z < 0`
    // is integrated in closed form.
    let xz = maps.v(0.0);
    let z0 = if xz.is_finite() { (e - maps.g(xz)) / sl } else { f64::NEG_INFINITY };
    let split = !z0.is_finite();
    let integrand = |z: f64| -> [f64; 1] {
        let s = e - sl * z;
        let du = match maps.f_deriv(s) {
            Ok(d) => maps.marginal_at_f(s) * sl * d,
            Err(_) => return [f64::NAN],
        };
        let zt = lit::<T>(z);
        let v = if split && z < 0.0 || !split && z <= z0 {
            weighting.w_z(t, zt).map(|v| v.as_f64()).unwrap_or(f64::NAN)
        } else {
            -weighting.w_upper_z(t, zt).map(|v| v.as_f64()).unwrap_or(f64::NAN)
        };
        [v * du]
    };
    let mag = |z: f64| integrand(z)[0].abs();
    let peak = (-300..=300).map(|i| mag(i as f64 * 0.02)).fold(0.0, f64::max);
    let mut zm = 8.0;
    while mag(zm).max(mag(-zm)) > 1e-16 * peak.max(1e-300) {
        zm += 4.0;
        if zm > RDU_Z_LIMIT {
            return Err(Error::TailNonconvergence(format!("RDU integrand not negligible at |z| = {RDU_Z_LIMIT}")));
        }
    }
    let mut breaks = vec![-zm, -3.0, 0.0, 3.0, zm];
    if z0.is_finite() && z0.abs() < zm {
        breaks.push(z0);
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();
    let opts = GkOptions { abs_tol: 1e-14 * peak.max(1e-300), rel_tol: 1e-12, max_intervals: 4000 };
    let body = integrate(integrand, &breaks, &opts)?.value[0];
    if split {
        Ok(body + maps.utility.u(lit(maps.f(e)?)).as_f64() - utility_sup(&maps.utility))
    } else {
        Ok(body)
    }
}

/// `lim u(x)` as `x -> inf` for utilities bounded above by zero.
fn utility_sup<T: Real>(u: &UtilityModel<T>) -> f64 {
    match u.kind() {
        UtilityKind::Exponential { .. } => 0.0,
        _ => u.u(lit(1e6)).as_f64(),
    }
}

/// RDU value through the quantile representation
/// `int u(f(e + sqrt(Lambda) z)) w'(t, N(-z)) N'(z) dz`.
pub fn rdu_value_quantile<T: Real>(
    maps: &TransformMaps<T>,
    weighting: &WeightingFamily<T>,
    lam: &LambdaSolution<T>,
    t: T,
    e: f64,
) -> Result<f64> {
    let big = lam.big_lambda_at(t).as_f64();
    if big <= 1e-300 {
        return Ok(maps.utility.u(lit(maps.f(e)?)).as_f64());
    }
    let sl = big.sqrt();
    let integrand = |z: f64| -> [f64; 1] {
        let x = match maps.f(e + sl * z) {
            Ok(x) => x,
            Err(_) => return [f64::NAN],
        };
        [maps.utility.u(lit(x)).as_f64() * weighting.wp_z(t, lit(-z)).as_f64() * norm_pdf(z)]
    };
    let mag = |z: f64| integrand(z)[0].abs();
    let peak = (-300..=300).map(|i| mag(i as f64 * 0.02)).fold(0.0, f64::max);
    let mut zm = 8.0;
    while mag(zm).max(mag(-zm)) > 1e-16 * peak.max(1e-300) {
        zm += 4.0;
        if zm > RDU_Z_LIMIT {
            return Err(Error::TailNonconvergence(format!("quantile integrand not negligible at |z| = {RDU_Z_LIMIT}")));
        }
    }
    let opts = GkOptions { abs_tol: 1e-14 * peak.max(1e-300), rel_tol: 1e-12, max_intervals: 4000 };
    Ok(integrate(integrand, &[-zm, -3.0, 0.0, 3.0, zm], &opts)?.value[0])
}

/// Difference quotients of one spike variation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeResult {
    pub t: f64,
    pub k: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub quotients: Vec<f64>,
    /// `-|sigma^T k|^2 S2 / (2 sqrt Lambda) + theta^T sigma^T k kappa_tilde e^{-e} S1 / sqrt Lambda`.
    pub predicted_limit: f64,
    /// Intercept of the least-squares line through `(epsilon, quotient)`.
    pub intercept: f64,
}

/// Gauss-Hermite nodes used for the perturbation factor.
pub const SPIKE_NODES: usize = 64;

/// Spike variation `k` on `[t, t + epsilon)` at exposure `e`.
///
/// For each `epsilon` the quotient `[J(X(T) + k^T Delta) - J(X(T))] / epsilon`
/// is evaluated as `int [w(P'(x)) - w(P(x))] u'(x) dx`. The perturbed tail
/// `P'(x)` averages over the Gaussian pair formed by the revised exposure
/// on the spike and `int k^T sigma dW`; the exposure is integrated in closed
/// form conditional on the second factor, which takes Gauss-Hermite nodes.
#[allow(clippy::too_many_arguments)]
pub fn spike_test<T: Real>(
    maps: &TransformMaps<T>,
    kernel: &HKernel<T>,
    lam: &LambdaSolution<T>,
    market: &MarketModel<T>,
    t: T,
    k: &[f64],
    e: f64,
    epsilons: &[f64],
) -> Result<SpikeResult> {
    let horizon = lam.horizon().as_f64();
    let t0 = t.as_f64();
    if !(t0 < horizon) || epsilons.iter().any(|&eps| !(eps > 0.0 && eps < horizon - t0)) {
        return Err(Error::DomainError("spike needs 0 < epsilon < T - t".into()));
    }
    if k.len() != market.n_assets() {
        return Err(Error::DomainError(format!("k has {} entries for {} assets", k.len(), market.n_assets())));
    }
    let weighting = kernel.weighting();
    let (zs, ws) = normal_expectation_rule(SPIKE_NODES);
    let quotients = epsilons
        .par_iter()
        .map(|&eps| spike_quotient(maps, weighting, lam, market, t0, k, e, eps, &zs, &ws))
        .collect::<Result<Vec<f64>>>()?;

    let big = lam.big_lambda_at(t).as_f64();
    let sl = big.sqrt();
    let s1 = first_order_integral(kernel, lam, t)?;
    let s2 = second_order_integral(maps, weighting, lam, t, e)?.value;
    let (st_k, th) = coefficients(market, t0, k)?;
    let quad = st_k.iter().map(|v| v * v).sum::<f64>();
    let lin: f64 = th.iter().zip(&st_k).map(|(a, b)| a * b).sum();
    let predicted_limit = -quad * s2 / (2.0 * sl) + lin * maps.kappa_tilde * (-e).exp() * s1 / sl;

    let n = epsilons.len() as f64;
    let mx = epsilons.iter().sum::<f64>() / n;
    let my = quotients.iter().sum::<f64>() / n;
    let sxx: f64 = epsilons.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = epsilons.iter().zip(&quotients).map(|(x, y)| (x - mx) * (y - my)).sum();
    let intercept = if sxx > 0.0 { my - sxy / sxx * mx } else { my };
    Ok(SpikeResult {
        t: t0,
        k: k.to_vec(),
        epsilons: epsilons.to_vec(),
        quotients,
        predicted_limit,
        intercept,
    })
}

/// `(sigma(t)^T k, theta(t))` in `f64`.
fn coefficients<T: Real>(market: &MarketModel<T>, t: f64, k: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let tt = lit::<T>(t);
    let s = market.sigma(tt);
    let n = market.n_assets();
    let st_k = (0..n).map(|j| (0..n).map(|i| s.get(i, j).as_f64() * k[i]).sum()).collect();
    let th = market.theta_of(tt)?.iter().map(|v| v.as_f64()).collect();
    Ok((st_k, th))
}

#[allow(clippy::too_many_arguments)]
fn spike_quotient<T: Real>(
    maps: &TransformMaps<T>,
    weighting: &WeightingFamily<T>,
    lam: &LambdaSolution<T>,
    market: &MarketModel<T>,
    t: f64,
    k: &[f64],
    e: f64,
    eps: f64,
    zs: &[f64],
    ws: &[f64],
) -> Result<f64> {
    // Moments over the spike, split at market breakpoints.
    let mut cuts = vec![t];
    cuts.extend(market.breakpoints().iter().map(|b| b.as_f64()).filter(|&b| b > t && b < t + eps));
    cuts.push(t + eps);
    let (mut drift, mut var_b, mut cov, mut var_a) = (0.0, 0.0, 0.0, 0.0);
    for w in cuts.windows(2) {
        let (xs, wts) = legendre_rule(8, w[0], w[1]);
        for (s, wt) in xs.iter().zip(&wts) {
            let st = lit::<T>(*s);
            let (st_k, th) = coefficients(market, *s, k)?;
            let mu: f64 = market.mu(st).iter().zip(k).map(|(m, ki)| m.as_f64() * ki).sum();
            let l = lam.lambda_at(st).as_f64();
            drift += wt * mu;
            var_b += wt * st_k.iter().map(|v| v * v).sum::<f64>();
            cov += wt * l * th.iter().zip(&st_k).map(|(a, b)| a * b).sum::<f64>();
            var_a += wt * l * l * th.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let rest = lam.big_lambda_at(lit(t + eps)).as_f64().max(0.0);
    let sd0 = (rest + var_a).sqrt();
    let (beta, sd1, nodes): (f64, f64, Vec<(f64, f64)>) = if var_b > 0.0 {
        let sb = var_b.sqrt();
        let beta = cov / var_b;
        let v = (var_a - cov * cov / var_b).max(0.0);
        (beta, (rest + v).sqrt(), zs.iter().zip(ws).map(|(z, w)| (sb * z, *w)).collect())
    } else {
        (0.0, sd0, vec![(0.0, 1.0)])
    };
    let tt = lit::<T>(t);
    // w(P) - w(P') with both tails resolved from their smaller side.
    let weighted = |p: f64, q: f64| -> f64 {
        if p <= 0.5 {
            let z = norm_quantile(p);
            weighting.w_z(tt, lit(z)).map(|v| v.as_f64()).unwrap_or(f64::NAN)
        } else {
            let z = -norm_quantile(q);
            1.0 - weighting.w_upper_z(tt, lit(z)).map(|v| v.as_f64()).unwrap_or(f64::NAN)
        }
    };
    let upper = |p: f64, q: f64| -> f64 {
        if p <= 0.5 {
            1.0 - weighted(p, q)
        } else {
            let z = -norm_quantile(q);
            weighting.w_upper_z(tt, lit(z)).map(|v| v.as_f64()).unwrap_or(f64::NAN)
        }
    };
    let integrand = |x: f64| -> [f64; 1] {
        let z = (e - maps.g(x)) / sd0;
        let (p, q) = (norm_cdf(z), norm_cdf(-z));
        let (mut p1, mut q1) = (0.0, 0.0);
        for (b, w) in &nodes {
            let z1 = (e + beta * b - maps.g(x - drift - b)) / sd1;
            p1 += w * norm_cdf(z1);
            q1 += w * norm_cdf(-z1);
        }
        let du = maps.utility.u1(lit(x)).as_f64();
        let d = if p.min(p1) <= 0.5 { weighted(p1, q1) - weighted(p, q) } else { upper(p, q) - upper(p1, q1) };
        [d * du]
    };
    let zmax = 12.0;
    let spread = drift.abs() + 12.0 * var_b.sqrt();
    let mut breaks = vec![maps.f(e - zmax * sd0)? - spread];
    for zc in [-6.0, -3.0, 0.0, 3.0, 6.0] {
        breaks.push(maps.f(e + zc * sd0)?);
    }
    breaks.push(maps.f(e + zmax * sd0)? + spread);
    breaks.sort_by(|a, b| a.total_cmp(b));
    let opts = GkOptions { abs_tol: 1e-11 * eps, rel_tol: 1e-10, max_intervals: 4000 };
    Ok(integrate(integrand, &breaks, &opts)?.value[0] / eps)
}

/// Settings of the equilibrium certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertificateConfig {
    /// Exposure levels `c` of the second-order sweep.
    pub c_values: Vec<f64>,
    /// Sweep times as fractions of the horizon.
    pub t_fractions: Vec<f64>,
    /// Number of grid nodes at which the first-order identity is checked.
    pub s1_nodes: usize,
    pub s1_tol: f64,
    pub s2_tol: f64,
    /// Spike sizes along the direction `(sigma^T)^{-1} theta`.
    pub spike_sizes: Vec<f64>,
    pub spike_epsilons: Vec<f64>,
    pub spike_t_fraction: f64,
    pub spike_tol: f64,
    /// Exposure at which spikes are evaluated.
    pub spike_exposure: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        CertificateConfig {
            c_values: vec![-3.0, -1.0, 0.0, 1.0, 3.0],
            t_fractions: vec![0.0, 0.25, 0.5, 0.75, 0.95],
            s1_nodes: 20,
            s1_tol: 1e-7,
            s2_tol: 1e-8,
            spike_sizes: vec![-1.0, -0.25, 0.25, 1.0],
            spike_epsilons: vec![1e-2, 1e-3, 1e-4],
            spike_t_fraction: 0.5,
            spike_tol: 1e-3,
            spike_exposure: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstOrderRow {
    pub t: f64,
    pub s1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumCertificate {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub first_order: Vec<FirstOrderRow>,
    pub second_order: Vec<SecondOrder>,
    pub spikes: Vec<SpikeResult>,
}

impl EquilibriumCertificate {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, passed: bool, margin: f64, tolerance: f64, grid: String) -> Check {
    Check { name: name.into(), passed, margin, tolerance, grid, detail: None }
}

/// Unit direction `(sigma^T)^{-1} theta / |.|` at `t`.
pub fn spike_direction<T: Real>(market: &MarketModel<T>, t: T) -> Result<Vec<f64>> {
    let th = market.theta_of(t)?;
    let d: Vec<f64> = market.solve_sigma_transpose(t, &th)?.iter().map(|v| v.as_f64()).collect();
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(d.into_iter().map(|v| v / n).collect())
}

/// Runs the first-order, second-order, endpoint-decay and spike checks.
pub fn certify_equilibrium<T: Real>(
    maps: &TransformMaps<T>,
    kernel: &HKernel<T>,
    lam: &LambdaSolution<T>,
    market: &MarketModel<T>,
    cfg: &CertificateConfig,
) -> Result<EquilibriumCertificate> {
    let horizon = lam.horizon().as_f64();
    let nodes = lam.grid.nodes();
    let positive: Vec<usize> = (0..nodes.len()).filter(|&i| lam.big_lambda[i] > T::zero()).collect();
    let picks: Vec<usize> = if positive.len() <= cfg.s1_nodes {
        positive.clone()
    } else {
        let last = positive.len() - 1;
        let mut v: Vec<usize> = (0..cfg.s1_nodes).map(|j| positive[j * last / (cfg.s1_nodes - 1)]).collect();
        v.dedup();
        v
    };
    let first_order = picks
        .par_iter()
        .map(|&i| {
            let t = nodes[i];
            let s1 = first_order_at(kernel, t, lam.big_lambda[i].as_f64(), lam.lambda[i].as_f64())?;
            Ok(FirstOrderRow { t: t.as_f64(), s1 })
        })
        .collect::<Result<Vec<_>>>()?;
    let s1_worst = first_order.iter().map(|r| r.s1.abs()).fold(0.0, f64::max);

    let pairs: Vec<(f64, f64)> = cfg
        .t_fractions
        .iter()
        .flat_map(|f| cfg.c_values.iter().map(move |c| (f * horizon, *c)))
        .collect();
    let second_order = pairs
        .par_iter()
        .map(|&(t, c)| second_order_integral(maps, kernel.weighting(), lam, lit(t), c))
        .collect::<Result<Vec<_>>>()?;
    let s2_min = second_order.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let decay = second_order.iter().map(|r| r.endpoint_ratio).fold(0.0, f64::max);

    let ts = lit::<T>(cfg.spike_t_fraction * horizon);
    let dir = spike_direction(market, ts)?;
    let spikes = cfg
        .spike_sizes
        .iter()
        .map(|s| {
            let k: Vec<f64> = dir.iter().map(|d| d * s).collect();
            spike_test(maps, kernel, lam, market, ts, &k, cfg.spike_exposure, &cfg.spike_epsilons)
        })
        .collect::<Result<Vec<_>>>()?;
    let spike_worst = spikes
        .iter()
        .map(|r| {
            let k2 = r.k.iter().map(|v| v * v).sum::<f64>();
            let last = *r.quotients.last().unwrap_or(&0.0);
            (last / (1.0 + k2)).max(r.intercept / (1.0 + k2))
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let checks = vec![
        check("first_order", s1_worst <= cfg.s1_tol, s1_worst, cfg.s1_tol, format!("{} grid nodes", first_order.len())),
        check(
            "second_order",
            s2_min >= -cfg.s2_tol,
            s2_min,
            cfg.s2_tol,
            format!("{} times x {} exposures", cfg.t_fractions.len(), cfg.c_values.len()),
        ),
        check("endpoint_decay", decay <= ENDPOINT_DECAY, decay, ENDPOINT_DECAY, "second-order sweep".into()),
        check(
            "spike",
            spike_worst <= cfg.spike_tol,
            spike_worst,
            cfg.spike_tol,
            format!("{} sizes, epsilon down to {:e}", spikes.len(), cfg.spike_epsilons.iter().fold(1.0, |a: f64, b| a.min(*b))),
        ),
    ];
    Ok(EquilibriumCertificate {
        passed: checks.iter().all(|c| c.passed),
        checks,
        first_order,
        second_order,
        spikes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::TimeGrid;
    use std::sync::Arc;

    fn half() -> (MarketModel<f64>, LambdaSolution<f64>, HKernel<f64>) {
        let m = MarketModel::scalar(0.08, 0.2, 1.0).unwrap();
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let s = LambdaSolution::from_curves(&m, &g, &|t| 0.04 * (1.0 - t), &|_| 0.5).unwrap();
        (m, s, HKernel::with_defaults(WeightingFamily::gaussian_half()))
    }

    fn maps(s: &LambdaSolution<f64>) -> TransformMaps<f64> {
        TransformMaps::new(UtilityModel::exponential(1.0).unwrap(), 0.9, s.big_lambda[0]).unwrap()
    }

    #[test]
    fn maps_invert() {
        let (_, s, _) = half();
        let m = maps(&s);
        let xs: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.5).collect();
        assert!(m.round_trip_error(&xs).unwrap() < 1e-12);
        assert!((m.v(m.utility().u(1.3)) - 1.3).abs() < 1e-12);
        assert_eq!(m.v(0.5), f64::INFINITY);
    }

    #[test]
    fn first_order_closed_form() {
        let (_, s, k) = half();
        assert!(first_order_integral(&k, &s, 0.5).unwrap().abs() < 1e-12);
        let big = s.big_lambda_at(0.5);
        let off = first_order_at(&k, 0.5, big, 0.525).unwrap();
        assert!(off.abs() >= 0.04 * big.sqrt() * big.exp());
    }

    #[test]
    fn second_order_exponential_closed_form() {
        let (_, s, k) = half();
        let m = maps(&s);
        for c in [-2.0, 0.0, 2.0] {
            let r = second_order_integral(&m, k.weighting(), &s, 0.5, c).unwrap();
            let x = s.big_lambda_at(0.5).sqrt();
            let expect = m.kappa_tilde() * (-c).exp() * 2.0 * x * (x * x).exp();
            assert!(((r.value - expect) / expect).abs() < 1e-9, "{} {}", r.value, expect);
            assert!(r.endpoint_ratio <= ENDPOINT_DECAY);
            let wf = second_order_wealth_form(&m, k.weighting(), 0.5, x * x, c).unwrap();
            assert!(((wf - expect) / expect).abs() < 1e-8, "{wf} {expect}");
        }
    }

    #[test]
    fn identity_second_order_has_no_shape_term() {
        let m = MarketModel::scalar(0.08, 0.2, 1.0).unwrap();
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let s = LambdaSolution::from_curves(&m, &g, &|t| 0.16 * (1.0 - t), &|_| 1.0).unwrap();
        let tm = maps(&s);
        let r = second_order_integral(&tm, &WeightingFamily::identity(), &s, 0.3, 1.0).unwrap();
        assert_eq!(r.m5, 0.0);
        assert!(r.m4 > 0.0 && (r.value - s.big_lambda_at(0.3).sqrt() * r.m4).abs() < 1e-15);
    }

    #[test]
    fn rdu_routes_agree() {
        let (_, s, k) = half();
        let m = maps(&s);
        for e in [-1.0, 0.0, 0.7] {
            let a = rdu_value(&m, k.weighting(), &s, 0.0, e).unwrap();
            let b = rdu_value_quantile(&m, k.weighting(), &s, 0.0, e).unwrap();
            assert!(((a - b) / b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn rdu_identity_is_expected_utility() {
        let m = MarketModel::scalar(0.08, 0.2, 1.0).unwrap();
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let s = LambdaSolution::from_curves(&m, &g, &|t| 0.16 * (1.0 - t), &|_| 1.0).unwrap();
        let tm = maps(&s);
        let j = rdu_value(&tm, &WeightingFamily::identity(), &s, 0.25, 0.3).unwrap();
        // u(f(e + sqrt(L) Z)) = -kappa_tilde e^{-e - sqrt(L) Z} for alpha = 1.
        let big = s.big_lambda_at(0.25);
        let eu = -tm.kappa_tilde() * (-0.3 + 0.5 * big).exp();
        assert!(((j - eu) / eu).abs() < 1e-9);
    }

    #[test]
    fn spike_zero_and_sign() {
        let (mk, s, k) = half();
        let m = maps(&s);
        let z = spike_test(&m, &k, &s, &mk, 0.5, &[0.0], 0.0, &[1e-2, 1e-3]).unwrap();
        assert!(z.quotients.iter().all(|q| *q == 0.0));
        let r = spike_test(&m, &k, &s, &mk, 0.5, &[0.5], 0.0, &[1e-2, 1e-3, 1e-4]).unwrap();
        assert!(r.quotients.iter().all(|q| *q <= 1e-3), "{:?}", r.quotients);
        assert!((r.intercept - r.predicted_limit).abs() < 1e-3 * r.predicted_limit.abs().max(1e-3));
    }

    #[test]
    fn spike_detects_wrong_lambda() {
        let mk = MarketModel::scalar(0.08, 0.2, 1.0).unwrap();
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let s = LambdaSolution::from_curves(&mk, &g, &|t| 0.16 * (1.0 - t), &|_| 1.0).unwrap();
        let k = HKernel::new(Arc::new(WeightingFamily::gaussian_half()), Default::default());
        let m = maps(&s);
        let r = spike_test(&m, &k, &s, &mk, 0.5, &[1.0], 0.0, &[1e-2, 1e-3, 1e-4]).unwrap();
        let l = spike_test(&m, &k, &s, &mk, 0.5, &[-1.0], 0.0, &[1e-2, 1e-3, 1e-4]).unwrap();
        let best = r.quotients.iter().chain(&l.quotients).fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        assert!(best > 1e-3, "{:?} {:?}", r.quotients, l.quotients);
    }
}
