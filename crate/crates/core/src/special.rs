//! Standard normal density, distribution and quantile functions.

use crate::scalar::{lit, Real};

/// Standard normal density.
#[inline]
pub fn norm_pdf<T: Real>(x: T) -> T {
    let inv_sqrt_2pi = lit::<T>(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(x * x) * lit(0.5)).exp()
}

/// Standard normal distribution function, accurate in the lower tail.
#[inline]
pub fn norm_cdf<T: Real>(x: T) -> T {
    lit::<T>(0.5) * (-x * T::FRAC_1_SQRT_2()).erfc()
}

/// Upper tail `1 - N(x)` without cancellation.
#[inline]
pub fn norm_sf<T: Real>(x: T) -> T {
    norm_cdf(-x)
}

const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

/// Rational approximation of the normal quantile, relative error about 1e-9.
pub fn norm_quantile_fast(p: f64) -> f64 {
    const P_LOW: f64 = 0.024_25;
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -norm_quantile_fast(1.0 - p)
    }
}

/// Normal quantile `N^{-1}(p)` refined by one Halley step against `norm_cdf`.
///
/// For `p > 1/2` the refinement works on the upper tail so precision is not
/// lost to `1 - p` rounding; callers holding `1 - p` directly should use
/// [`norm_quantile_upper`].
pub fn norm_quantile<T: Real>(p: T) -> T {
    let half = lit::<T>(0.5);
    if p > half {
        return norm_quantile_upper(T::one() - p);
    }
    if p <= T::zero() {
        return T::neg_infinity();
    }
    let mut x = lit::<T>(norm_quantile_fast(p.as_f64()));
    for _ in 0..2 {
        let e = norm_cdf(x) - p;
        let d = norm_pdf(x);
        if d <= T::zero() || !x.is_finite() {
            break;
        }
        let u = e / d;
        x = x - u / (T::one() + x * u * half);
    }
    x
}

/// Returns `x` with `1 - N(x) = q`.
pub fn norm_quantile_upper<T: Real>(q: T) -> T {
    -norm_quantile(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((norm_cdf(0.0f64) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_cdf(-5.0f64) - 2.866_515_718_791_939e-7).abs() < 1e-20);
        let far = norm_cdf(-30.0f64);
        assert!((far / 4.906_713_927_148_187e-198 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-300f64, 1e-100, 1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-9] {
            let x = norm_quantile(p);
            let back = norm_cdf(x);
            assert!(((back - p) / p).abs() < 1e-13, "p={p} x={x} back={back}");
        }
        let x = norm_quantile_upper(1e-40f64);
        assert!((norm_sf(x) / 1e-40 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_precision() {
        let x = norm_quantile(0.975f32);
        assert!((x - 1.959_964).abs() < 1e-5);
    }
}
