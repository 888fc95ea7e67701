//! Scalar functions of time used as weighting parameters.

use crate::scalar::Real;
use std::fmt;
use std::sync::Arc;

/// A real-valued parameter curve on `[0, T]`.
#[derive(Clone)]
pub enum TimeCurve<T> {
    Constant(T),
    /// Right-continuous step function: `values[i]` holds on `[times[i], times[i+1])`.
    Piecewise { times: Vec<T>, values: Vec<T> },
    /// `1 + sign(far - 1) * min(|far - 1|, coeff * (T - t)^exponent)`.
    ///
    /// Equals 1 at the horizon and saturates at `far` away from it, e.g.
    /// `max(0.3, 1 - (T - t)^0.75)` for `far = 0.3, coeff = 1, exponent = 0.75`.
    Terminal { horizon: T, far: T, coeff: T, exponent: T },
    Custom(Arc<dyn Fn(T) -> T + Send + Sync>),
}

impl<T: Real> TimeCurve<T> {
    pub fn eval(&self, t: T) -> T {
        match self {
            TimeCurve::Constant(v) => *v,
            TimeCurve::Piecewise { times, values } => {
                let idx = times.iter().rposition(|&s| s <= t).unwrap_or(0);
                values[idx]
            }
            TimeCurve::Terminal { horizon, far, coeff, exponent } => {
                let gap = (*far - T::one()).abs();
                let tau = (*horizon - t).max(T::zero());
                let dev = (*coeff * tau.powf(*exponent)).min(gap);
                if *far >= T::one() {
                    T::one() + dev
                } else {
                    T::one() - dev
                }
            }
            TimeCurve::Custom(f) => f(t),
        }
    }

    /// Interior times where the curve jumps or has a kink.
    pub fn breakpoints(&self) -> Vec<T> {
        match self {
            TimeCurve::Piecewise { times, .. } => {
                times.iter().copied().filter(|&s| s > T::zero()).collect()
            }
            TimeCurve::Terminal { horizon, far, coeff, exponent } => {
                let gap = (*far - T::one()).abs();
                let t = *horizon - (gap / *coeff).powf(exponent.recip());
                if t > T::zero() && t < *horizon {
                    vec![t]
                } else {
                    Vec::new()
                }
            }
            _ => Vec::new(),
        }
    }
}

impl<T: Real> fmt::Debug for TimeCurve<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeCurve::Constant(v) => write!(f, "Constant({v})"),
            TimeCurve::Piecewise { times, values } => {
                write!(f, "Piecewise({times:?}, {values:?})")
            }
            TimeCurve::Terminal { horizon, far, coeff, exponent } => write!(
                f,
                "Terminal(T={horizon}, far={far}, coeff={coeff}, exponent={exponent})"
            ),
            TimeCurve::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_curve_shapes() {
        let d = TimeCurve::<f64>::Terminal { horizon: 1.0, far: 0.3, coeff: 1.0, exponent: 0.75 };
        assert_eq!(d.eval(1.0), 1.0);
        assert!((d.eval(0.0) - 0.3).abs() < 1e-15);
        let t = 1.0 - 0.01f64;
        assert!((d.eval(t) - (1.0 - 0.01f64.powf(0.75))).abs() < 1e-15);
        let g = TimeCurve::Terminal { horizon: 1.0, far: 2.0, coeff: 4.0, exponent: 0.75 };
        assert_eq!(g.eval(0.0), 2.0);
        assert_eq!(g.eval(1.0), 1.0);
        let kink = d.breakpoints()[0];
        assert!((kink - (1.0 - 0.7f64.powf(1.0 / 0.75))).abs() < 1e-15);
        assert!(g.breakpoints().len() == 1);
        let flat = TimeCurve::Terminal { horizon: 1.0, far: 2.0, coeff: 1.0, exponent: 0.75 };
        assert!(flat.breakpoints().is_empty());
    }

    #[test]
    fn piecewise_is_right_continuous() {
        let c = TimeCurve::Piecewise { times: vec![0.0, 0.5], values: vec![1.0, 2.0] };
        assert_eq!(c.eval(0.4999), 1.0);
        assert_eq!(c.eval(0.5), 2.0);
        assert_eq!(c.breakpoints(), vec![0.5]);
    }
}
