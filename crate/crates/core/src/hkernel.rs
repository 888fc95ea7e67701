//! The weighting kernel `h(t, x) = E[w'_p(t, N(xi)) e^{x xi}]` and its shifted
//! form `H(t, x) = E[w'_p(t, N(xi + x))]`, by adaptive quadrature.

use crate::error::{Error, Result};
use crate::quadrature::{integrate, GkOptions};
use crate::scalar::{lit, Real};
use crate::weighting::{z_cap, WeightingFamily};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Highest x-derivative the kernel evaluates.
pub const MAX_ORDER: usize = 4;

/// Quadrature settings for kernel integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadConfig {
    /// Initial truncation `|y| <= y_max`; extended while the tail is not negligible.
    pub y_max: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig { y_max: 12.0, abs_tol: 1e-11, rel_tol: 1e-9, max_subdivisions: 4000 }
    }
}

impl QuadConfig {
    /// Tolerances are floored at what `T` can resolve.
    pub fn gk_options<T: Real>(&self) -> GkOptions<T> {
        let floor = T::epsilon() * lit(64.0);
        GkOptions {
            abs_tol: lit::<T>(self.abs_tol).max(floor),
            rel_tol: lit::<T>(self.rel_tol).max(floor),
            max_intervals: self.max_subdivisions,
        }
    }
}

/// Relative size below which the truncated tail is ignored.
const TAIL_REL: f64 = 1e-17;

type Moments<T> = [T; MAX_ORDER + 1];

/// Memoized evaluator of `h` and its x-derivatives.
pub struct HKernel<T: Real> {
    weighting: Arc<WeightingFamily<T>>,
    quad: QuadConfig,
    cache: Mutex<HashMap<(u64, u64), Moments<T>>>,
}

impl<T: Real> std::fmt::Debug for HKernel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HKernel").field("weighting", &self.weighting).field("quad", &self.quad).finish()
    }
}

impl<T: Real> HKernel<T> {
    pub fn new(weighting: Arc<WeightingFamily<T>>, quad: QuadConfig) -> Self {
        HKernel { weighting, quad, cache: Mutex::new(HashMap::new()) }
    }

    pub fn with_defaults(weighting: WeightingFamily<T>) -> Self {
        Self::new(Arc::new(weighting), QuadConfig::default())
    }

    pub fn weighting(&self) -> &WeightingFamily<T> {
        &self.weighting
    }

    pub fn weighting_arc(&self) -> Arc<WeightingFamily<T>> {
        self.weighting.clone()
    }

    pub fn quad(&self) -> &QuadConfig {
        &self.quad
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }

    pub fn clear_cache(&self) {
        if let Ok(mut c) = self.cache.lock() {
            c.clear();
        }
    }

    /// Integration range `[lo, hi]` in y such that the weighted integrand
    /// `w'(N(y)) e^{xy} N'(y) |y|^order` is below `TAIL_REL` of its peak
    /// outside it.
    pub fn truncation(&self, t: T, x: T, order: usize) -> (T, T) {
        let cap = z_cap::<T>();
        let y_max = lit::<T>(self.quad.y_max).min(cap);
        let mag = |y: T| -> T {
            let base = (x * y - y * y * lit(0.5)).exp() * self.weighting.wp_z(t, y);
            base * y.abs().powi(order as i32).max(T::one())
        };
        let mut peak = T::zero();
        let step = lit::<T>(0.25);
        let mut y = -y_max;
        while y <= y_max {
            peak = peak.max(mag(y));
            y = y + step;
        }
        let tiny = peak * lit(TAIL_REL);
        let mut hi = y_max;
        while hi < cap && mag(hi) > tiny {
            hi = (hi + T::one()).min(cap);
        }
        let mut lo = -y_max;
        while lo > -cap && mag(lo) > tiny {
            lo = (lo - T::one()).max(-cap);
        }
        (lo, hi)
    }

    /// Panel boundaries: the range ends, +-6 and 0, plus unit-width panels.
    fn breaks(lo: T, hi: T) -> Vec<T> {
        let mut b = vec![lo];
        let mut y = lo.ceil();
        if y - lo < lit(0.5) {
            y = y + T::one();
        }
        while y < hi - lit(0.5) {
            b.push(y);
            y = y + lit(1.5);
        }
        for forced in [-6.0, 0.0, 6.0] {
            let f = lit::<T>(forced);
            if f > lo && f < hi && !b.contains(&f) {
                b.push(f);
            }
        }
        b.push(hi);
        b.sort_by(|a, c| a.partial_cmp(c).unwrap());
        b.dedup();
        b
    }

    /// `E[w'_p(t, N(xi)) e^{x xi} g(xi)]` for a vector-valued `g`.
    pub fn expectation<const K: usize, G: Fn(T) -> [T; K]>(
        &self,
        t: T,
        x: T,
        order_hint: usize,
        g: G,
    ) -> Result<[T; K]> {
        if !x.is_finite() {
            return Err(Error::DomainError(format!("kernel argument x = {x} is not finite")));
        }
        let (lo, hi) = self.truncation(t, x, order_hint);
        let inv_sqrt_2pi = lit::<T>(0.398_942_280_401_432_7);
        let w = &self.weighting;
        let r = integrate(
            |y: T| {
                let base = w.wp_z(t, y) * (x * y - y * y * lit(0.5)).exp() * inv_sqrt_2pi;
                let gv = g(y);
                let mut out = [T::zero(); K];
                for k in 0..K {
                    out[k] = base * gv[k];
                }
                out
            },
            &Self::breaks(lo, hi),
            &self.quad.gk_options(),
        )?;
        Ok(r.value)
    }

    /// `h, h', ..., h''''` at `(t, x)`, memoized on `t` and `x` rounded to a
    /// relative `2^-40`.
    pub fn moments(&self, t: T, x: T) -> Result<Moments<T>> {
        if !x.is_finite() {
            return Err(Error::DomainError(format!("kernel argument x = {x} is not finite")));
        }
        let bits = x.as_f64().to_bits();
        let rounded = bits.wrapping_add(1 << 11) & !((1u64 << 12) - 1);
        let key = (t.as_f64().to_bits(), rounded);
        if let Some(m) = self.cache.lock().ok().and_then(|c| c.get(&key).copied()) {
            return Ok(m);
        }
        let xr = lit::<T>(f64::from_bits(rounded));
        let m = self.expectation(t, xr, MAX_ORDER, |y| {
            let y2 = y * y;
            [T::one(), y, y2, y2 * y, y2 * y2]
        })?;
        if let Ok(mut c) = self.cache.lock() {
            if c.len() > 1_000_000 {
                c.clear();
            }
            c.insert(key, m);
        }
        Ok(m)
    }

    pub fn h(&self, t: T, x: T) -> Result<T> {
        Ok(self.moments(t, x)?[0])
    }

    /// `d^n h / dx^n` for `n <= 4`.
    pub fn h_deriv(&self, t: T, x: T, n: usize) -> Result<T> {
        if n > MAX_ORDER {
            return Err(Error::DomainError(format!("derivative order {n} exceeds {MAX_ORDER}")));
        }
        Ok(self.moments(t, x)?[n])
    }

    /// `h / h'` at `(t, x)`.
    pub fn ratio(&self, t: T, x: T) -> Result<T> {
        let m = self.moments(t, x)?;
        Ok(m[0] / m[1])
    }

    pub fn shifted(&self) -> HShifted<'_, T> {
        HShifted { kernel: self }
    }
}

/// View of a kernel as `H(t, x) = E[w'_p(t, N(xi + x))]`.
#[derive(Debug, Clone, Copy)]
pub struct HShifted<'a, T: Real> {
    kernel: &'a HKernel<T>,
}

impl<'a, T: Real> HShifted<'a, T> {
    pub fn kernel(&self) -> &'a HKernel<T> {
        self.kernel
    }

    /// `H` and `H'_x` by direct quadrature of the shifted integrand.
    pub fn direct(&self, t: T, x: T) -> Result<(T, T)> {
        let w = &self.kernel.weighting;
        let inv_sqrt_2pi = lit::<T>(0.398_942_280_401_432_7);
        let (lo_z, hi_z) = self.kernel.truncation(t, x, 1);
        let (lo, hi) = (lo_z - x, hi_z - x);
        let r = integrate(
            |y: T| {
                let phi = (-(y * y) * lit(0.5)).exp() * inv_sqrt_2pi;
                [w.wp_z(t, y + x) * phi, w.dwp_z(t, y + x) * phi]
            },
            &HKernel::<T>::breaks(lo, hi),
            &self.kernel.quad.gk_options(),
        )?;
        Ok((r.value[0], r.value[1]))
    }

    /// `H = e^{-x^2/2} h` and `H' = e^{-x^2/2} (h' - x h)`.
    pub fn via_identity(&self, t: T, x: T) -> Result<(T, T)> {
        let m = self.kernel.moments(t, x)?;
        let e = (-(x * x) * lit(0.5)).exp();
        Ok((e * m[0], e * (m[1] - x * m[0])))
    }

    /// `H(t, x)`; requires `x >= 0`.
    #[allow(non_snake_case)]
    pub fn H(&self, t: T, x: T) -> Result<T> {
        check_nonneg(x)?;
        Ok(self.direct(t, x)?.0)
    }

    /// `H'_x(t, x)`; requires `x >= 0`.
    #[allow(non_snake_case)]
    pub fn H_deriv(&self, t: T, x: T) -> Result<T> {
        check_nonneg(x)?;
        Ok(self.direct(t, x)?.1)
    }

    /// Largest relative disagreement between the two routes for `H` and `H'`.
    pub fn cross_check(&self, t: T, x: T) -> Result<T> {
        let (a, da) = self.direct(t, x)?;
        let (b, db) = self.via_identity(t, x)?;
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(T::min_positive_value());
        let drel = (da - db).abs() / da.abs().max(db.abs()).max(a.abs());
        Ok(rel.max(drel))
    }
}

fn check_nonneg<T: Real>(x: T) -> Result<()> {
    if !(x >= T::zero()) {
        return Err(Error::DomainError(format!("shifted kernel needs x >= 0, got {x}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::TimeCurve;

    fn kern(w: WeightingFamily<f64>) -> HKernel<f64> {
        HKernel::with_defaults(w)
    }

    #[test]
    fn identity_is_gaussian_mgf() {
        let k = kern(WeightingFamily::identity());
        let m = k.moments(0.0, 1.0).unwrap();
        let e = 0.5f64.exp();
        assert!((m[0] - e).abs() < 1e-9 * e);
        assert!((m[1] - e).abs() < 1e-9 * e);
        assert!(k.h_deriv(0.0, 0.0, 1).unwrap().abs() < 1e-11);
    }

    #[test]
    fn gaussian_half_closed_form() {
        let k = kern(WeightingFamily::gaussian_half());
        let e = 1f64.exp();
        assert!((k.h(0.3, 1.0).unwrap() - e).abs() < 1e-8 * e);
        assert!((k.h_deriv(0.3, 1.0, 1).unwrap() - 2.0 * e).abs() < 1e-8 * e);
        let (hh, dh) = k.shifted().direct(0.3, 1.0).unwrap();
        assert!((hh - 0.5f64.exp()).abs() < 1e-8 && (dh - 0.5f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn unit_at_origin_for_tk() {
        for &d in &[0.3, 0.5, 0.65, 0.8, 1.0] {
            let k = kern(WeightingFamily::tk(TimeCurve::Constant(d)));
            assert!((k.h(0.0, 0.0).unwrap() - 1.0).abs() < 1e-9, "delta {d}");
        }
    }

    #[test]
    fn shifted_routes_agree() {
        let k = kern(WeightingFamily::tk(TimeCurve::Constant(0.65)));
        for &x in &[0.0, 0.3, 1.0, 2.5] {
            assert!(k.shifted().cross_check(0.0, x).unwrap() < 1e-8, "x {x}");
        }
        assert!(k.shifted().H(0.0, -0.1).is_err());
        assert!(k.h_deriv(0.0, 0.1, 5).is_err());
    }
}
