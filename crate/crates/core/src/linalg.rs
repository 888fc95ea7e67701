//! Small dense matrices and LU solves for the volatility matrix.

use crate::scalar::{lit, Real};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn from_rows(rows: &[Vec<T>]) -> Option<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(Matrix { n, data: rows.iter().flatten().copied().collect() })
    }

    pub fn diagonal(d: &[T]) -> Self {
        let n = d.len();
        let mut data = vec![T::zero(); n * n];
        for (i, &v) in d.iter().enumerate() {
            data[i * n + i] = v;
        }
        Matrix { n, data }
    }

    pub fn scalar(v: T) -> Self {
        Matrix { n: 1, data: vec![v] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j];
            }
        }
        Matrix { n, data }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Solves `self * x = b` by LU with partial pivoting.
    ///
    /// Fails with the smallest pivot ratio when the matrix is numerically
    /// singular relative to `cond_tol`.
    pub fn solve(&self, b: &[T], cond_tol: T) -> Result<Vec<T>, T> {
        let n = self.n;
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if scale == T::zero() {
            return Err(T::zero());
        }
        let mut min_ratio = T::infinity();
        for k in 0..n {
            let mut piv = k;
            for i in k + 1..n {
                if a[i * n + k].abs() > a[piv * n + k].abs() {
                    piv = i;
                }
            }
            let ratio = a[piv * n + k].abs() / scale;
            min_ratio = min_ratio.min(ratio);
            if ratio < cond_tol {
                return Err(ratio);
            }
            if piv != k {
                for j in 0..n {
                    a.swap(k * n + j, piv * n + j);
                }
                x.swap(k, piv);
            }
            for i in k + 1..n {
                let f = a[i * n + k] / a[k * n + k];
                for j in k..n {
                    a[i * n + j] = a[i * n + j] - f * a[k * n + j];
                }
                x[i] = x[i] - f * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..n {
                s = s - a[k * n + j] * x[j];
            }
            x[k] = s / a[k * n + k];
        }
        Ok(x)
    }

    /// Default singularity threshold for [`Matrix::solve`].
    pub fn default_cond_tol() -> T {
        T::epsilon() * lit(1e3)
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm_sq<T: Real>(a: &[T]) -> T {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_triangular_solve() {
        let m = Matrix::<f64>::from_rows(&[vec![0.2, 0.0], vec![0.1, 0.3]]).unwrap();
        let x = m.solve(&[0.04, 0.05], 1e-13).unwrap();
        let r = m.mul_vec(&x);
        assert!((r[0] - 0.04).abs() < 1e-16 && (r[1] - 0.05).abs() < 1e-16);
    }

    #[test]
    fn singular_is_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(m.solve(&[1.0, 1.0], 1e-13).is_err());
    }
}
