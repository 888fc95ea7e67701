//! Adaptive Gauss-Kronrod integration and fixed Gaussian rules.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use std::num::NonZeroUsize;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct GkOptions<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_intervals: usize,
}

impl<T: Real> Default for GkOptions<T> {
    fn default() -> Self {
        GkOptions { abs_tol: lit(1e-11), rel_tol: lit(1e-9), max_intervals: 2000 }
    }
}

/// Value and error estimate of a vector integral.
#[derive(Debug, Clone, Copy)]
pub struct Integral<T, const K: usize> {
    pub value: [T; K],
    pub error: [T; K],
    pub evaluations: usize,
}

struct Panel<T, const K: usize> {
    a: T,
    b: T,
    value: [T; K],
    error: [T; K],
}

fn gk15<T: Real, const K: usize, F: Fn(T) -> [T; K]>(
    f: &F,
    a: T,
    b: T,
) -> Result<Panel<T, K>> {
    let half = lit::<T>(0.5);
    let c = (a + b) * half;
    let hl = (b - a) * half;
    let mut kr = [T::zero(); K];
    let mut ga = [T::zero(); K];
    let eval = |x: T| -> Result<[T; K]> {
        let v = f(x);
        if v.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonfiniteIntegrand { at: x.as_f64() });
        }
        Ok(v)
    };
    let fc = eval(c)?;
    for k in 0..K {
        kr[k] = fc[k] * lit(WGK[7]);
        ga[k] = fc[k] * lit(WG[3]);
    }
    for j in 0..7 {
        let dx = hl * lit(XGK[j]);
        let f1 = eval(c - dx)?;
        let f2 = eval(c + dx)?;
        for k in 0..K {
            let s = f1[k] + f2[k];
            kr[k] = kr[k] + s * lit(WGK[j]);
            if j % 2 == 1 {
                ga[k] = ga[k] + s * lit(WG[j / 2]);
            }
        }
    }
    let mut value = [T::zero(); K];
    let mut error = [T::zero(); K];
    for k in 0..K {
        value[k] = kr[k] * hl;
        error[k] = ((kr[k] - ga[k]) * hl).abs();
    }
    Ok(Panel { a, b, value, error })
}

/// Integrates a vector-valued `f` over `[breaks[0], breaks[last]]`.
///
/// Every entry of `breaks` is a forced panel boundary. The worst panel is
/// bisected until each component meets `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<T: Real, const K: usize, F: Fn(T) -> [T; K]>(
    f: F,
    breaks: &[T],
    opts: &GkOptions<T>,
) -> Result<Integral<T, K>> {
    if breaks.len() < 2 {
        return Ok(Integral { value: [T::zero(); K], error: [T::zero(); K], evaluations: 0 });
    }
    let mut panels: Vec<Panel<T, K>> = Vec::with_capacity(breaks.len() * 4);
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            panels.push(gk15(&f, w[0], w[1])?);
        }
    }
    let mut evaluations = 15 * panels.len();
    loop {
        let mut value = [T::zero(); K];
        let mut error = [T::zero(); K];
        for p in &panels {
            for k in 0..K {
                value[k] = value[k] + p.value[k];
                error[k] = error[k] + p.error[k];
            }
        }
        let tol: Vec<T> =
            (0..K).map(|k| opts.abs_tol.max(opts.rel_tol * value[k].abs())).collect();
        let worst_ratio = (0..K).map(|k| error[k] / tol[k]).fold(T::zero(), T::max);
        if worst_ratio <= T::one() {
            return Ok(Integral { value, error, evaluations });
        }
        let mut worst = 0;
        let mut worst_score = T::neg_infinity();
        for (i, p) in panels.iter().enumerate() {
            let s = (0..K).map(|k| p.error[k] / tol[k]).fold(T::zero(), T::max);
            if s > worst_score {
                worst_score = s;
                worst = i;
            }
        }
        let p = &panels[worst];
        let mid = (p.a + p.b) * lit(0.5);
        let too_narrow = mid <= p.a || mid >= p.b;
        if panels.len() >= opts.max_intervals || too_narrow {
            let (k, _) = (0..K)
                .map(|k| (k, error[k] / tol[k]))
                .fold((0, T::neg_infinity()), |m, c| if c.1 > m.1 { c } else { m });
            return Err(Error::QuadratureNonconvergence {
                achieved: error[k].as_f64(),
                requested: tol[k].as_f64(),
            });
        }
        let (a, b) = (p.a, p.b);
        let left = gk15(&f, a, mid)?;
        let right = gk15(&f, mid, b)?;
        evaluations += 30;
        panels[worst] = left;
        panels.insert(worst + 1, right);
    }
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<T: Real, F: Fn(T) -> T>(
    f: F,
    breaks: &[T],
    opts: &GkOptions<T>,
) -> Result<(T, T)> {
    let r = integrate(|x| [f(x)], breaks, opts)?;
    Ok((r.value[0], r.error[0]))
}

/// Gauss-Hermite rule for expectations over a standard normal variable:
/// `E[f(Z)] ~ sum w_i f(z_i)`.
pub fn normal_expectation_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let gh = gauss_quad::GaussHermite::new(NonZeroUsize::new(n.max(1)).unwrap());
    let s2 = std::f64::consts::SQRT_2;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    gh.iter().map(|(x, w)| (x * s2, w * inv_sqrt_pi)).unzip()
}

/// Gauss-Legendre nodes and weights mapped to `[a, b]`.
pub fn legendre_rule(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let gl = gauss_quad::GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    gl.iter().map(|(x, w)| (c + h * x, h * w)).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_moments() {
        let opts = GkOptions::<f64>::default();
        let r = integrate(
            |y| {
                let d = (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt();
                [d, y * y * d]
            },
            &[-12.0, -6.0, 0.0, 6.0, 12.0],
            &opts,
        )
        .unwrap();
        assert!((r.value[0] - 1.0).abs() < 1e-12);
        assert!((r.value[1] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn endpoint_singularity_refines() {
        let opts = GkOptions { abs_tol: 1e-10, rel_tol: 1e-10, max_intervals: 4000 };
        let (v, _) = integrate_scalar(|x: f64| x.powf(-0.5), &[0.0, 1.0], &opts).unwrap();
        assert!((v - 2.0).abs() < 1e-8);
    }

    #[test]
    fn nan_is_reported() {
        let opts = GkOptions::<f64>::default();
        let e = integrate_scalar(|x: f64| (x - 0.5).ln(), &[0.0, 1.0], &opts).unwrap_err();
        assert!(matches!(e, Error::NonfiniteIntegrand { .. }));
    }

    #[test]
    fn hermite_rule_moments() {
        let (x, w) = normal_expectation_rule(32);
        let m2: f64 = x.iter().zip(&w).map(|(a, b)| a * a * b).sum();
        let m4: f64 = x.iter().zip(&w).map(|(a, b)| a.powi(4) * b).sum();
        assert!((m2 - 1.0).abs() < 1e-13 && (m4 - 3.0).abs() < 1e-12);
    }
}
