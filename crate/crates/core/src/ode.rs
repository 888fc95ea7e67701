//! Scalar initial-value integration: Dormand-Prince 5(4) with an implicit
//! midpoint fallback for stiff stretches.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions<T> {
    pub rtol: T,
    pub atol: T,
    /// Initial step as a fraction of the first segment.
    pub first_step_frac: T,
    pub max_steps: usize,
    /// Skip the explicit pair and use the implicit rule throughout.
    pub force_implicit: bool,
}

impl<T: Real> Default for OdeOptions<T> {
    fn default() -> Self {
        OdeOptions {
            rtol: lit(1e-10),
            atol: lit(1e-14),
            first_step_frac: lit(0.1),
            max_steps: 2_000_000,
            force_implicit: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub implicit_steps: usize,
    pub rhs_evals: usize,
    /// Whether the implicit rule took over from the explicit pair.
    pub fallback: bool,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(s, y)` from `(s0, y0)` through the increasing `stops`,
/// returning `y` at each stop. The solution must stay positive.
///
/// Steps never cross a stop, and `f` is only evaluated strictly inside the
/// current segment (ends are nudged inward by a relative `1e-12`), so
/// coefficients may jump at stops.
pub fn integrate_positive<T: Real, F: FnMut(T, T) -> Result<T>>(
    mut f: F,
    s0: T,
    y0: T,
    stops: &[T],
    opts: &OdeOptions<T>,
) -> Result<(Vec<T>, OdeStats)> {
    let mut stats = OdeStats::default();
    let mut out = Vec::with_capacity(stops.len());
    let mut s = s0;
    let mut y = y0;
    let mut h = T::zero();
    let mut implicit = opts.force_implicit;
    stats.fallback = opts.force_implicit;
    let mut total_steps = 0usize;
    for &b in stops {
        if b <= s {
            if b == s {
                out.push(y);
                continue;
            }
            return Err(Error::IntegrationFailure("stops must increase".into()));
        }
        let a = s;
        let eta = (b - a) * lit(1e-12);
        let mut rhs = |t: T, v: T, st: &mut OdeStats| -> Result<T> {
            st.rhs_evals += 1;
            let d = f(t.max(a + eta).min(b - eta), v)?;
            if !d.is_finite() {
                return Err(Error::IntegrationFailure(format!("non-finite slope at s = {t}")));
            }
            Ok(d)
        };
        if h <= T::zero() {
            h = (b - a) * opts.first_step_frac;
        }
        let mut window_attempts = 0usize;
        let mut window_rejects = 0usize;
        while s < b {
            total_steps += 1;
            if total_steps > opts.max_steps {
                return Err(Error::IntegrationFailure("step budget exhausted".into()));
            }
            let last = s + h >= b || (b - s - h) < (b - a) * lit(1e-10);
            let step = if last { b - s } else { h };
            let (y_new, err, order) = if implicit {
                stats.implicit_steps += 1;
                midpoint_doubled(&mut rhs, s, y, step, &mut stats)?
            } else {
                dp45(&mut rhs, s, y, step, &mut stats)?
            };
            let scale = opts.atol + opts.rtol.max(T::epsilon() * lit(64.0)) * y.abs().max(y_new.abs());
            let ratio = err / scale;
            window_attempts += 1;
            if ratio <= T::one() && y_new.is_finite() {
                if y_new <= T::zero() {
                    return Err(Error::NonpositiveSolution { t: (s + step).as_f64() });
                }
                s = if last { b } else { s + step };
                y = y_new;
                stats.accepted += 1;
            } else {
                stats.rejected += 1;
                window_rejects += 1;
            }
            let expo = -T::one() / lit::<T>(order as f64 + 1.0);
            let fac = if ratio > T::zero() {
                (lit::<T>(0.9) * ratio.powf(expo)).max(lit(0.2)).min(lit(5.0))
            } else {
                lit(5.0)
            };
            h = step * fac;
            if h < (b - a) * lit(1e-14) && s < b {
                return Err(Error::IntegrationFailure(format!("step size underflow at s = {s}")));
            }
            if !implicit && window_attempts >= 20 {
                if window_rejects * 2 > window_attempts {
                    implicit = true;
                    stats.fallback = true;
                }
                window_attempts = 0;
                window_rejects = 0;
            }
        }
        out.push(y);
    }
    Ok((out, stats))
}

fn dp45<T: Real, R: FnMut(T, T, &mut OdeStats) -> Result<T>>(
    rhs: &mut R,
    s: T,
    y: T,
    h: T,
    st: &mut OdeStats,
) -> Result<(T, T, usize)> {
    let mut k = [T::zero(); 7];
    for i in 0..7 {
        let mut yi = y;
        for j in 0..i {
            yi = yi + h * lit::<T>(A[i][j]) * k[j];
        }
        k[i] = rhs(s + h * lit::<T>(C[i]), yi, st)?;
    }
    let mut y5 = y;
    let mut e = T::zero();
    for i in 0..7 {
        if i < 6 {
            y5 = y5 + h * lit::<T>(A[6][i]) * k[i];
        }
        e = e + h * lit::<T>(E[i]) * k[i];
    }
    Ok((y5, e.abs(), 4))
}

/// One implicit midpoint step solved by secant iteration.
fn midpoint<T: Real, R: FnMut(T, T, &mut OdeStats) -> Result<T>>(
    rhs: &mut R,
    s: T,
    y: T,
    h: T,
    st: &mut OdeStats,
) -> Result<T> {
    let half = lit::<T>(0.5);
    let sm = s + h * half;
    let g = |z: T, rhs: &mut R, st: &mut OdeStats| -> Result<T> {
        Ok(z - y - h * rhs(sm, (y + z) * half, st)?)
    };
    let f0 = rhs(s, y, st)?;
    let mut z0 = y;
    let mut z1 = y + h * f0;
    let mut g0 = g(z0, rhs, st)?;
    let mut g1 = g(z1, rhs, st)?;
    for _ in 0..60 {
        if g1 == T::zero() {
            return Ok(z1);
        }
        let denom = g1 - g0;
        let z2 = if denom == T::zero() { z1 - g1 } else { z1 - g1 * (z1 - z0) / denom };
        let conv = (z2 - z1).abs() <= T::epsilon() * lit(4.0) * z2.abs().max(T::min_positive_value());
        z0 = z1;
        g0 = g1;
        z1 = z2;
        if conv {
            return Ok(z1);
        }
        g1 = g(z1, rhs, st)?;
    }
    Err(Error::IntegrationFailure(format!("implicit midpoint did not converge at s = {s}")))
}

/// Implicit midpoint with step doubling; returns the Richardson-extrapolated
/// value and the doubling error estimate.
fn midpoint_doubled<T: Real, R: FnMut(T, T, &mut OdeStats) -> Result<T>>(
    rhs: &mut R,
    s: T,
    y: T,
    h: T,
    st: &mut OdeStats,
) -> Result<(T, T, usize)> {
    let half = lit::<T>(0.5);
    let big = midpoint(rhs, s, y, h, st)?;
    let mid = midpoint(rhs, s, y, h * half, st)?;
    let fine = midpoint(rhs, s + h * half, mid, h * half, st)?;
    let diff = (fine - big) / lit(3.0);
    Ok((fine + diff, diff.abs(), 2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let stops: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let (ys, st) =
            integrate_positive(|_, y| Ok(y), 0.0, 1.0, &stops, &OdeOptions::default()).unwrap();
        assert!((ys[9] - 1f64.exp()).abs() < 1e-9);
        assert!(!st.fallback);
    }

    #[test]
    fn implicit_path_matches() {
        let opts = OdeOptions { force_implicit: true, ..OdeOptions::default() };
        let (ys, st) = integrate_positive(|s, y| Ok(-2.0 * s * y), 0.0, 1.0, &[1.0], &opts).unwrap();
        assert!((ys[0] - (-1f64).exp()).abs() < 1e-9, "{}", ys[0]);
        assert!(st.implicit_steps > 0);
    }

    #[test]
    fn jump_in_coefficient() {
        let f = |s: f64, _y: f64| Ok(if s < 0.5 { 1.0 } else { 3.0 });
        let (ys, _) = integrate_positive(f, 0.0, 1.0, &[0.5, 1.0], &OdeOptions::default()).unwrap();
        assert!((ys[0] - 1.5).abs() < 1e-12 && (ys[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn positivity_violation_is_reported() {
        let e = integrate_positive(|_, _| Ok(-1.0), 0.0, 0.5, &[1.0], &OdeOptions::default());
        assert!(matches!(e, Err(Error::NonpositiveSolution { .. })));
    }
}
