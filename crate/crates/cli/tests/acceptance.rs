//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use rdu_equilibrium::curve::TimeCurve;
use rdu_equilibrium::equilibrium::{
    kappa_bar_of, merton_portfolio, portfolio_exponential, replication_study, risk_premium_table, solve_budget,
    solve_kappa, Budget, PricingMethod,
};
use rdu_equilibrium::hkernel::{HKernel, QuadConfig};
use rdu_equilibrium::lambda_solver::{solve, LambdaSolution, SolverConfig};
use rdu_equilibrium::linalg::Matrix;
use rdu_equilibrium::market::{MarketModel, TimeGrid};
use rdu_equilibrium::preferences::UtilityModel;
use rdu_equilibrium::verifier::{certify_equilibrium, spike_direction, spike_test, CertificateConfig, TransformMaps};
use rdu_equilibrium::weighting::WeightingFamily;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

fn scalar_market() -> MarketModel<f64> {
    MarketModel::scalar(0.08, 0.2, 1.0).unwrap()
}

/// Solver settings for weightings with a kink or a terminal singularity.
fn loose() -> SolverConfig {
    SolverConfig { residual_tol: 1e-2, ..SolverConfig::default() }
}

fn tk_surrogate() -> WeightingFamily<f64> {
    WeightingFamily::tk(TimeCurve::Terminal { horizon: 1.0, far: 0.65, coeff: 1.0, exponent: 0.75 })
}

fn power_surrogate() -> WeightingFamily<f64> {
    WeightingFamily::power(TimeCurve::Terminal { horizon: 1.0, far: 2.0, coeff: 1.0, exponent: 0.75 })
}

fn graded(w: &WeightingFamily<f64>) -> TimeGrid<f64> {
    TimeGrid::graded(1.0, 400, 3.0).unwrap().with_breakpoints(&w.time_breakpoints())
}

fn c1_gaussian_half() -> Outcome {
    let start = Instant::now();
    let m = scalar_market();
    let k = HKernel::with_defaults(WeightingFamily::gaussian_half());
    let g = TimeGrid::uniform(1.0, 200).unwrap();
    let s = solve(&m, &k, &g, &SolverConfig::default()).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let dl = s.lambda.iter().map(|l: &f64| (l - 0.5).abs()).fold(0.0, f64::max);
    let db = g.nodes().iter().zip(&s.big_lambda).map(|(t, b)| (b - 0.04 * (1.0 - t)).abs()).fold(0.0, f64::max);
    ensure(
        dl <= 1e-4 && db <= 1e-6 && secs < 30.0,
        format!("max|lambda-0.5| = {dl:.2e}, max|Lambda-0.04(1-t)| = {db:.2e}, {secs:.2} s"),
    )
}

fn c2_merton() -> Outcome {
    // Piecewise-constant theta so that the integral is not a single line.
    let times = vec![0.0, 0.3, 0.7];
    let mus = vec![vec![0.08], vec![0.02], vec![0.12]];
    let sigmas = vec![Matrix::scalar(0.2), Matrix::scalar(0.25), Matrix::scalar(0.3)];
    let m = MarketModel::piecewise_constant(times.clone(), mus, sigmas, 1.0).unwrap();
    let k = HKernel::with_defaults(WeightingFamily::identity());
    let g = TimeGrid::uniform(1.0, 100).unwrap().with_breakpoints(&times);
    let s = solve(&m, &k, &g, &SolverConfig::default()).map_err(err)?;
    let dl = s.lambda.iter().map(|l: &f64| (l - 1.0).abs()).fold(0.0, f64::max);
    let exact = |t: f64| -> f64 {
        let seg = [(0.0, 0.3, 0.16), (0.3, 0.7, 0.0064), (0.7, 1.0, 0.16)];
        seg.iter().map(|&(a, b, th2)| th2 * (b - t.max(a)).max(0.0)).sum()
    };
    let mut rel = 0.0f64;
    for (t, b) in g.nodes().iter().zip(&s.big_lambda) {
        if *t < 1.0 {
            rel = rel.max(((b - exact(*t)) / exact(*t)).abs());
        }
    }
    let mut pdev = 0.0f64;
    for &t in g.nodes().iter().filter(|t| **t < 1.0) {
        let p = portfolio_exponential(1.0, &s, &m, t).map_err(err)?;
        let q = merton_portfolio(1.0, &m, t).map_err(err)?;
        pdev = pdev.max(((p[0] - q[0]) / q[0]).abs());
    }
    ensure(
        dl <= 1e-4 && rel <= 1e-6 && pdev <= 1e-12,
        format!("max|lambda-1| = {dl:.2e}, Lambda rel err = {rel:.2e}, portfolio rel gap = {pdev:.2e}"),
    )
}

fn c3_kernel() -> Outcome {
    let quad = QuadConfig { abs_tol: 1e-15, rel_tol: 1e-13, ..QuadConfig::default() };
    let mut worst = [0.0, 0.0, f64::INFINITY];
    let mut slack = f64::INFINITY;
    for delta in [0.5, 0.65, 0.8, 1.0] {
        let k = HKernel::new(Arc::new(WeightingFamily::tk_constant(delta).map_err(err)?), quad);
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            worst[0] = worst[0].max((k.h(t, 0.0).map_err(err)? - 1.0f64).abs());
            let h0 = k.moments(t, 0.0).map_err(err)?;
            for i in 0..=30 {
                let x = 0.1 * i as f64;
                let m = k.moments(t, x).map_err(err)?;
                let d = 1e-4;
                let fd = (k.h(t, x + d).map_err(err)? - k.h(t, x - d).map_err(err)?) / (2.0 * d);
                worst[1] = worst[1].max((m[1] - fd).abs() / m[1].abs().max(1.0));
                let e = 1e-2;
                let lh = |y: f64| k.h(t, y).map(|v| v.ln());
                let c2 = (lh(x + e).map_err(err)? - 2.0 * lh(x).map_err(err)? + lh(x - e).map_err(err)?) / (e * e);
                worst[2] = worst[2].min(c2);
                slack = slack.min(m[1] - x * h0[2]).min(h0[1] + x * m[2] - m[1]);
            }
        }
    }
    ensure(
        worst[0] <= 1e-9 && worst[1] <= 1e-6 && worst[2] >= -1e-8 && slack >= -1e-9,
        format!(
            "|h(t,0)-1| <= {:.1e}, h' vs FD {:.1e}, min (ln h)'' = {:.3e}, bracket slack = {:.2e}",
            worst[0], worst[1], worst[2], slack
        ),
    )
}

fn c4_budget() -> Outcome {
    let start = Instant::now();
    let m = scalar_market();
    let k = HKernel::with_defaults(WeightingFamily::gaussian_half());
    let s = solve(&m, &k, &TimeGrid::uniform(1.0, 100).unwrap(), &SolverConfig::default()).map_err(err)?;
    let u = UtilityModel::exponential(1.0).map_err(err)?;
    let cf = solve_kappa(&m, &u, &s, 0.0, PricingMethod::ClosedForm).map_err(err)?.kappa;
    let mc_method = PricingMethod::MonteCarlo { n_paths: 1_000_000, seed: 20240611, steps: 10 };
    let mc = solve_kappa(&m, &u, &s, 0.0, mc_method).map_err(err)?;
    let z1 = (mc.kappa.ln() - cf.ln()).abs() / mc.ln_kappa_se;
    let bar = kappa_bar_of(cf, &s, &m).map_err(err)?;
    let mcb = solve_budget(&m, &u, &s, 0.0, mc_method, Budget::Revised, f64::INFINITY).map_err(err)?;
    let z2 = (mcb.kappa.ln() - bar.ln()).abs() / mcb.ln_kappa_se;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        z1 <= 3.0 && z2 <= 3.0 && secs < 60.0,
        format!(
            "kappa {cf:.8} vs MC {:.8} ({z1:.2} SE); kappa_bar {bar:.8} vs MC {:.8} ({z2:.2} SE); {secs:.1} s",
            mc.kappa, mcb.kappa
        ),
    )
}

fn certificate_for(w: WeightingFamily<f64>, grid: TimeGrid<f64>, cfg: &SolverConfig) -> Result<(bool, String), String> {
    let m = scalar_market();
    let k = HKernel::with_defaults(w);
    let s = solve(&m, &k, &grid, cfg).map_err(err)?;
    let u = UtilityModel::exponential(1.0).map_err(err)?;
    let kappa = solve_kappa(&m, &u, &s, 0.0, PricingMethod::ClosedForm).map_err(err)?.kappa;
    let maps = TransformMaps::new(u, kappa, s.big_lambda[0]).map_err(err)?;
    let c = certify_equilibrium(&maps, &k, &s, &m, &CertificateConfig::default()).map_err(err)?;
    let margins: Vec<String> = c.checks.iter().map(|c| format!("{}={:.1e}", c.name, c.margin)).collect();
    Ok((c.passed, margins.join(" ")))
}

fn c5_certificate() -> Outcome {
    let (ok1, d1) = certificate_for(
        WeightingFamily::gaussian_half(),
        TimeGrid::uniform(1.0, 200).unwrap(),
        &SolverConfig::default(),
    )?;
    let tk = tk_surrogate();
    let (ok2, d2) = certificate_for(tk.clone(), graded(&tk), &loose())?;
    // Negative control: the expected-utility scaling paired with Gaussian-half weighting.
    let m = scalar_market();
    let g = TimeGrid::uniform(1.0, 100).unwrap();
    let wrong = LambdaSolution::from_curves(&m, &g, &|t| 0.16 * (1.0 - t), &|_| 1.0).map_err(err)?;
    let k = HKernel::with_defaults(WeightingFamily::gaussian_half());
    let u = UtilityModel::exponential(1.0).map_err(err)?;
    let kappa = solve_kappa(&m, &u, &wrong, 0.0, PricingMethod::ClosedForm).map_err(err)?.kappa;
    let maps = TransformMaps::new(u, kappa, wrong.big_lambda[0]).map_err(err)?;
    let dir = spike_direction(&m, 0.5).map_err(err)?;
    let mut best = f64::NEG_INFINITY;
    for size in [-1.0, -0.25, 0.25, 1.0] {
        let kv: Vec<f64> = dir.iter().map(|d| d * size).collect();
        let r = spike_test(&maps, &k, &wrong, &m, 0.5, &kv, 0.0, &[1e-2, 1e-3, 1e-4]).map_err(err)?;
        best = r.quotients.iter().fold(best, |a, b| a.max(*b));
    }
    ensure(
        ok1 && ok2 && best > 1e-3,
        format!("gaussian-half [{d1}]; tk [{d2}]; negative control max quotient {best:.3e}"),
    )
}

fn c6_risk_premium() -> Outcome {
    let m = scalar_market();
    let mut parts = Vec::new();
    let mut total = 0;
    let cases: Vec<(&str, WeightingFamily<f64>, TimeGrid<f64>, SolverConfig)> = vec![
        ("gaussian-half", WeightingFamily::gaussian_half(), TimeGrid::uniform(1.0, 200).unwrap(), SolverConfig::default()),
        ("identity", WeightingFamily::identity(), TimeGrid::uniform(1.0, 200).unwrap(), SolverConfig::default()),
        ("convex power", power_surrogate(), graded(&power_surrogate()), loose()),
    ];
    let mut shape_ok = true;
    for (name, w, g, cfg) in cases {
        let k = HKernel::with_defaults(w);
        let s = solve(&m, &k, &g, &cfg).map_err(err)?;
        let r = risk_premium_table(&k, &s).map_err(err)?;
        total += r.disagreements;
        let reductions = r.rows.iter().filter(|row| row.reduction).count();
        shape_ok &= match name {
            "identity" => reductions == 0,
            _ => reductions == r.rows.len(),
        };
        parts.push(format!("{name}: {} nodes, {reductions} reductions, {} disagreements", r.rows.len(), r.disagreements));
    }
    ensure(total == 0 && shape_ok, parts.join("; "))
}

fn c7_appendix() -> Outcome {
    let m = scalar_market();
    let varying = WeightingFamily::tk(TimeCurve::Terminal { horizon: 1.0, far: 0.3, coeff: 1.0, exponent: 0.75 });
    let g = TimeGrid::uniform(1.0, 20).unwrap().with_breakpoints(&varying.time_breakpoints());
    let a = varying.certify(&m, &g);
    let constant = WeightingFamily::tk_constant(0.5).map_err(err)?;
    let b = constant.certify(&m, &g);
    let ratio_failed = b.check("terminal_ratio").map(|c| !c.passed).unwrap_or(false);
    let failed: Vec<&str> = a.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    ensure(
        a.passed && ratio_failed,
        format!("time-varying delta passed = {} {failed:?}; constant 0.5 terminal_ratio failed = {ratio_failed}", a.passed),
    )
}

fn c8_replication() -> Outcome {
    let start = Instant::now();
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut breaks: Vec<f64> = (1..=40).map(|i| (i as f64 * phi).fract()).collect();
    breaks.sort_by(|a, b| a.total_cmp(b));
    let mut times = vec![0.0];
    times.extend(&breaks);
    let sigma = 0.2;
    let mus: Vec<Vec<f64>> = (0..times.len()).map(|i| vec![if i % 2 == 0 { 0.2 } else { 0.6 } * sigma]).collect();
    let sigmas = vec![Matrix::scalar(sigma); times.len()];
    let m = MarketModel::piecewise_constant(times.clone(), mus, sigmas, 1.0).map_err(err)?;
    let k = HKernel::with_defaults(WeightingFamily::gaussian_half());
    let g = TimeGrid::uniform(1.0, 200).unwrap().with_breakpoints(&times);
    let s = solve(&m, &k, &g, &SolverConfig::default()).map_err(err)?;
    let u = UtilityModel::exponential(1.0).map_err(err)?;
    let kappa = solve_kappa(&m, &u, &s, 0.0, PricingMethod::ClosedForm).map_err(err)?.kappa;
    let r = replication_study(&m, &s, 1.0, kappa, 0.0, &[64, 128, 256, 512], 2, 10_000, 7).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let ok = r.ratios.iter().all(|q| (0.6..=0.85).contains(q)) && secs < 60.0;
    let ratios: Vec<String> = r.ratios.iter().map(|q| format!("{q:.3}")).collect();
    ensure(ok, format!("RMS {:?}, ratios [{}], {secs:.1} s", r.rms.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(), ratios.join(", ")))
}

fn run_cli(args: &[&str], threads: &str) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rdu-eq"))
        .args(args)
        .env("RDU_EQ_THREADS", threads)
        .output()
        .map_err(err)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn scratch_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("rdu-eq-acceptance-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn c9_determinism() -> Outcome {
    let dir = scratch_dir("determinism");
    let cfg = dir.join("run.json");
    std::fs::write(
        &cfg,
        r#"{
  "market": {"horizon": 1.0, "mu": [[0.08]], "sigma": [[[0.2]]]},
  "weighting": {"kind": "gaussian_half"},
  "utility": {"kind": "exponential", "alpha": 1.0},
  "grid": {"steps": 100},
  "equilibrium": {"x0": 0.0, "pricing": {"kind": "monte_carlo", "n_paths": 20000, "steps": 20}},
  "simulate": {"n_paths": 20000, "steps": 20},
  "seed": 99
}"#,
    )
    .map_err(err)?;
    let cfg = cfg.to_string_lossy().into_owned();
    let mut runs = Vec::new();
    for (i, threads) in ["1", "4", "4"].iter().enumerate() {
        let out = dir.join(format!("out{i}"));
        let o = out.to_string_lossy().into_owned();
        for cmd in ["solve", "simulate", "risk-premium", "verify", "certify"] {
            run_cli(&[cmd, "--config", &cfg, "--out", &o], threads)?;
        }
        runs.push(read_all(&out));
    }
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    let _ = std::fs::remove_dir_all(&dir);
    ensure(same && names.len() == 6, format!("{} artifacts identical across 3 runs (1 and 4 threads): {names:?}", names.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gaussian-half closed form", c1_gaussian_half),
        ("expected-utility recovery", c2_merton),
        ("kernel properties", c3_kernel),
        ("budget duality", c4_budget),
        ("equilibrium certificate", c5_certificate),
        ("risk-premium classifier", c6_risk_premium),
        ("time-varying weighting certification", c7_appendix),
        ("replication convergence", c8_replication),
        ("determinism", c9_determinism),
    ];
    let mut failed = 0;
    let mut out = std::io::stdout();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let r = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if r.is_err() {
            failed += 1;
        }
        writeln!(out, "criterion {}: {tag} {name} ({secs:.1} s): {detail}", i + 1).unwrap();
    }
    writeln!(out, "acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len()).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
