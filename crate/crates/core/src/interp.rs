//! Piecewise cubic Hermite interpolation.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Value, first and second derivative of the cubic Hermite segment on
/// `[x0, x1]` at `x`.
pub fn hermite<T: Real>(x0: T, x1: T, y0: T, y1: T, d0: T, d1: T, x: T) -> (T, T, T) {
    let h = x1 - x0;
    let s = (x - x0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let two = lit::<T>(2.0);
    let three = lit::<T>(3.0);
    let six = lit::<T>(6.0);
    let h00 = two * s3 - three * s2 + T::one();
    let h10 = s3 - two * s2 + s;
    let h01 = -two * s3 + three * s2;
    let h11 = s3 - s2;
    let v = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
    let dh00 = six * s2 - six * s;
    let dh10 = three * s2 - lit::<T>(4.0) * s + T::one();
    let dh01 = -six * s2 + six * s;
    let dh11 = three * s2 - two * s;
    let dv = (dh00 * y0 + dh01 * y1) / h + dh10 * d0 + dh11 * d1;
    let ddh00 = lit::<T>(12.0) * s - six;
    let ddh10 = six * s - lit::<T>(4.0);
    let ddh01 = -lit::<T>(12.0) * s + six;
    let ddh11 = six * s - two;
    let ddv = (ddh00 * y0 + ddh01 * y1) / (h * h) + (ddh10 * d0 + ddh11 * d1) / h;
    (v, dv, ddv)
}

/// Locates the segment of the sorted abscissae `xs` containing `x` (clamped).
pub fn segment<T: Real>(xs: &[T], x: T) -> usize {
    let n = xs.len();
    if x <= xs[0] {
        return 0;
    }
    if x >= xs[n - 1] {
        return n - 2;
    }
    match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(i) => i - 1,
    }
}

/// Cubic Hermite interpolant with prescribed node slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteTable<T> {
    pub xs: Vec<T>,
    pub ys: Vec<T>,
    pub ds: Vec<T>,
}

impl<T: Real> HermiteTable<T> {
    pub fn new(xs: Vec<T>, ys: Vec<T>, ds: Vec<T>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() || xs.len() != ds.len() {
            return Err(Error::DomainError("table needs at least two rows of equal length".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::DomainError("table abscissae must increase strictly".into()));
        }
        Ok(HermiteTable { xs, ys, ds })
    }

    /// Fritsch-Carlson monotone slopes for increasing data.
    pub fn monotone(xs: Vec<T>, ys: Vec<T>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::DomainError("table needs at least two rows of equal length".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || ys.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::DomainError("monotone table requires strictly increasing data".into()));
        }
        let delta: Vec<T> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let mut ds = vec![T::zero(); n];
        ds[0] = delta[0];
        ds[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            ds[i] = (delta[i - 1] + delta[i]) * lit(0.5);
        }
        let three = lit::<T>(3.0);
        for i in 0..n - 1 {
            let a = ds[i] / delta[i];
            let b = ds[i + 1] / delta[i];
            let r = a * a + b * b;
            if r > three * three {
                let tau = three / r.sqrt();
                ds[i] = tau * a * delta[i];
                ds[i + 1] = tau * b * delta[i];
            }
        }
        Self::new(xs, ys, ds)
    }

    /// Value and first two derivatives at `x`, clamped to the table range.
    pub fn eval(&self, x: T) -> (T, T, T) {
        let i = segment(&self.xs, x);
        let x = x.max(self.xs[0]).min(self.xs[self.xs.len() - 1]);
        hermite(self.xs[i], self.xs[i + 1], self.ys[i], self.ys[i + 1], self.ds[i], self.ds[i + 1], x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubic() {
        let f = |x: f64| x * x * x - 2.0 * x;
        let df = |x: f64| 3.0 * x * x - 2.0;
        let xs = vec![0.0, 0.7, 1.5];
        let t = HermiteTable::new(xs.clone(), xs.iter().map(|&x| f(x)).collect(), xs.iter().map(|&x| df(x)).collect()).unwrap();
        let (v, d, dd) = t.eval(1.1);
        assert!((v - f(1.1)).abs() < 1e-13 && (d - df(1.1)).abs() < 1e-12 && (dd - 6.6).abs() < 1e-11);
    }

    #[test]
    fn monotone_stays_monotone() {
        let t = HermiteTable::monotone(vec![0.0, 0.1, 0.2, 1.0], vec![0.0, 0.5, 0.51, 1.0]).unwrap();
        let mut prev = -1.0;
        for i in 0..=1000 {
            let (v, d, _) = t.eval(i as f64 / 1000.0);
            assert!(v >= prev && d >= -1e-15);
            prev = v;
        }
    }
}
