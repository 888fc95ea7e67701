//! Model outputs against closed forms computed independently in this file.

use rdu_equilibrium::equilibrium::{kappa_bar_of, lambda_integrals, solve_kappa, PricingMethod};
use rdu_equilibrium::hkernel::HKernel;
use rdu_equilibrium::lambda_solver::{solve, SolverConfig};
use rdu_equilibrium::linalg::Matrix;
use rdu_equilibrium::market::{MarketModel, TimeGrid};
use rdu_equilibrium::preferences::UtilityModel;
use rdu_equilibrium::weighting::{tk_weight, WeightingFamily};
use rdu_equilibrium::curve::TimeCurve;

/// Standard normal CDF by composite Simpson on `[0, |x|]`.
fn normal_cdf(x: f64) -> f64 {
    let n = 2000;
    let h = x.abs() / n as f64;
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = phi(0.0) + phi(x.abs());
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * phi(i as f64 * h);
    }
    let half = s * h / 3.0;
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

#[test]
fn gaussian_half_kernel_is_gaussian_mgf() {
    let k = HKernel::with_defaults(WeightingFamily::gaussian_half());
    for x in [0.0f64, 0.3, 1.0, 2.5] {
        let h = k.h(0.4, x).unwrap();
        assert!((h / (x * x).exp() - 1.0).abs() < 1e-9, "x={x} h={h}");
    }
}

#[test]
fn squared_power_kernel() {
    // w'(p) = 2p, so h(x) = 2 e^{x^2/2} N(x / sqrt 2).
    let k = HKernel::with_defaults(WeightingFamily::power(TimeCurve::Constant(2.0)));
    for x in [0.0f64, 0.5, 1.5, 3.0] {
        let want = 2.0 * (0.5 * x * x).exp() * normal_cdf(x / 2f64.sqrt());
        let got = k.h(0.0, x).unwrap();
        assert!((got / want - 1.0).abs() < 1e-9, "x={x}: {got} vs {want}");
        let d = 1e-5;
        let fd = (2.0 * (0.5 * (x + d) * (x + d)).exp() * normal_cdf((x + d) / 2f64.sqrt())
            - 2.0 * (0.5 * (x - d) * (x - d)).exp() * normal_cdf((x - d) / 2f64.sqrt()))
            / (2.0 * d);
        assert!((k.h_deriv(0.0, x, 1).unwrap() / fd - 1.0).abs() < 1e-6);
    }
}

#[test]
fn tk_weight_direct_formula() {
    for (p, d) in [(0.1, 0.65), (0.5, 0.65), (0.9, 0.5), (0.3, 1.0)] {
        let want = f64::powf(p, d) / (f64::powf(p, d) + f64::powf(1.0 - p, d)).powf(1.0 / d);
        assert!((tk_weight(p, d).unwrap() - want).abs() < 1e-15);
    }
    assert_eq!(tk_weight(0.0, 0.65).unwrap(), 0.0);
    assert_eq!(tk_weight(1.0, 0.65).unwrap(), 1.0);
    assert!(tk_weight(1.2, 0.65).is_err());
}

#[test]
fn two_asset_market_price_of_risk() {
    let sigma = Matrix::from_rows(&[vec![0.2, 0.0], vec![0.1, 0.3]]).unwrap();
    let m = MarketModel::constant(vec![0.05, 0.07], sigma, 1.0).unwrap();
    // Lower-triangular: theta1 = 0.05/0.2, theta2 = (0.07 - 0.1 theta1)/0.3.
    let t1: f64 = 0.25;
    let t2: f64 = (0.07 - 0.1 * t1) / 0.3;
    let th = m.theta_of(0.5).unwrap();
    assert!((th[0] - t1).abs() < 1e-15 && (th[1] - t2).abs() < 1e-15);
    assert!((m.theta_norm_sq(0.5).unwrap() - (t1 * t1 + t2 * t2)).abs() < 1e-15);
}

#[test]
fn exponential_utility_inverse_marginal() {
    let alpha: f64 = 1.7;
    let u = UtilityModel::exponential(alpha).unwrap();
    for x in [-2.0f64, 0.0, 0.8] {
        let y = alpha * (-alpha * x).exp();
        assert!((u.u1(x) - y).abs() < 1e-14 * y);
        assert!((u.inverse_marginal(y).unwrap() - (alpha.ln() - y.ln()) / alpha).abs() < 1e-13);
        assert!((u.l(x) - (alpha * x - alpha.ln())).abs() < 1e-13);
    }
}

#[test]
fn budget_multiplier_closed_form_and_quadrature_agree() {
    let m = MarketModel::scalar(0.08, 0.2, 1.0).unwrap();
    let k = HKernel::with_defaults(WeightingFamily::gaussian_half());
    let s = solve(&m, &k, &TimeGrid::uniform(1.0, 100).unwrap(), &SolverConfig::default()).unwrap();
    let i = lambda_integrals(&s, &m).unwrap();
    // lambda = 1/2, theta^2 = 0.16.
    assert!((i.a - 0.04).abs() < 1e-10 && (i.b - 0.08).abs() < 1e-10 && (i.c - 0.16).abs() < 1e-12);
    let u = UtilityModel::exponential(1.0).unwrap();
    let x0 = 0.3;
    let want = (-x0 + 0.02 - 0.08f64).exp();
    let cf = solve_kappa(&m, &u, &s, x0, PricingMethod::ClosedForm).unwrap().kappa;
    let q = solve_kappa(&m, &u, &s, x0, PricingMethod::Quadrature { nodes: 96 }).unwrap().kappa;
    assert!((cf / want - 1.0).abs() < 1e-9, "{cf} vs {want}");
    assert!((q / want - 1.0).abs() < 1e-8, "{q} vs {want}");
    let bar = kappa_bar_of(cf, &s, &m).unwrap();
    assert!((bar / (-x0 - 0.02f64).exp() - 1.0).abs() < 1e-9);
}

#[test]
fn single_precision_solve() {
    let m = MarketModel::<f32>::scalar(0.08, 0.2, 1.0).unwrap();
    let k = HKernel::<f32>::with_defaults(WeightingFamily::gaussian_half());
    let cfg = SolverConfig { tol: 1e-5, residual_tol: 1e-3, ..SolverConfig::default() };
    let s = solve(&m, &k, &TimeGrid::uniform(1.0f32, 50).unwrap(), &cfg).unwrap();
    for (t, (l, b)) in s.grid.nodes().iter().zip(s.lambda.iter().zip(&s.big_lambda)) {
        assert!((l - 0.5).abs() < 1e-3, "t={t} lambda={l}");
        assert!((b - 0.04 * (1.0 - t)).abs() < 1e-5);
    }
}
