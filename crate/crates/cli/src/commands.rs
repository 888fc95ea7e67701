use crate::output::{self, csv, num};
use crate::{Command, Common, Failure};
use rdu_equilibrium::config::{RunConfig, UtilitySpec, WeightingSpec};
use rdu_equilibrium::equilibrium::{
    merton_portfolio, portfolio_exponential, risk_premium_table, solve_equilibrium, EquilibriumSolution,
};
use rdu_equilibrium::lambda_solver::solve;
use rdu_equilibrium::market::{mean_and_se, simulate, TimeGrid};
use rdu_equilibrium::preferences::certify_utility;
use rdu_equilibrium::verifier::{certify_equilibrium, TransformMaps};
use rdu_equilibrium::{Grid, Kernel, Market, Solution, Utility};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::time::Instant;

/// Configuration used by `reproduce-example5` when none is given.
const EXAMPLE5: &str = r#"{
  "market": {"horizon": 1.0, "mu": [[0.08]], "sigma": [[[0.2]]]},
  "weighting": {"kind": "gaussian_half"},
  "utility": {"kind": "exponential", "alpha": 1.0},
  "grid": {"kind": "uniform", "steps": 200}
}"#;

struct Context {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
    hash: String,
}

struct Solved {
    market: Market,
    kernel: Kernel,
    grid: Grid,
    utility: Utility,
    sol: Solution,
}

fn load(command: Command, common: &Common) -> Result<Context, Failure> {
    let (text, base) = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
            let base = p.parent().map(|d| d.to_path_buf()).unwrap_or_default();
            (text, base)
        }
        None if command == Command::ReproduceExample5 => (EXAMPLE5.to_string(), PathBuf::new()),
        None => return Err(Failure::Config("--config is required".into())),
    };
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Config(format!("--tol must be positive, got {t}")));
        }
        cfg.solver.tol = t;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("."));
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update(format!("\nseed={}\ntol={:e}\n", cfg.seed, cfg.solver.tol).as_bytes());
    let hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(Context { cfg, base, out, hash })
}

fn timed<R>(label: &str, f: impl FnOnce() -> R) -> R {
    let start = Instant::now();
    let r = f();
    eprintln!("{label}: {:.3} s", start.elapsed().as_secs_f64());
    r
}

fn solve_lambda(ctx: &Context) -> Result<Solved, Failure> {
    let market = ctx.cfg.market()?;
    let kernel = ctx.cfg.kernel()?;
    let grid = ctx.cfg.grid()?;
    let utility = ctx.cfg.utility(&ctx.base)?;
    let sol = timed("lambda solve", || solve(&market, &kernel, &grid, &ctx.cfg.solver))?;
    Ok(Solved { market, kernel, grid, utility, sol })
}

fn equilibrium(ctx: &Context, s: &Solved) -> Result<EquilibriumSolution, Failure> {
    let pricing = ctx.cfg.pricing();
    Ok(timed("budget", || solve_equilibrium(&s.market, &s.utility, &s.sol, ctx.cfg.equilibrium.x0, pricing))?)
}

pub fn run(command: Command, common: &Common) -> Result<(), Failure> {
    let ctx = load(command, common)?;
    match command {
        Command::Solve => cmd_solve(&ctx),
        Command::Certify => cmd_certify(&ctx),
        Command::Verify => cmd_verify(&ctx),
        Command::RiskPremium => cmd_risk_premium(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::ReproduceExample5 => cmd_example5(&ctx),
    }
}

#[derive(Serialize)]
struct SolverSummary {
    seed_slope: f64,
    epsilon0: f64,
    residual_max: f64,
    halvings: usize,
    lambda0_change: f64,
    grid_nodes: usize,
}

#[derive(Serialize)]
struct RunReport {
    input_hash: String,
    seed: u64,
    big_lambda_at_zero: f64,
    lambda_min: f64,
    lambda_max: f64,
    kappa: f64,
    kappa_bar: f64,
    x0: f64,
    budget_residual: f64,
    kappa_std_error: f64,
    integrals: rdu_equilibrium::equilibrium::LambdaIntegrals,
    pricing: rdu_equilibrium::equilibrium::PricingMethod,
    solver: SolverSummary,
}

fn solver_summary(s: &Solved) -> SolverSummary {
    SolverSummary {
        seed_slope: s.sol.seed_slope,
        epsilon0: s.sol.epsilon0,
        residual_max: s.sol.residual_max,
        halvings: s.sol.stats.halvings,
        lambda0_change: s.sol.stats.lambda0_change,
        grid_nodes: s.grid.len(),
    }
}

fn cmd_solve(ctx: &Context) -> Result<(), Failure> {
    let s = solve_lambda(ctx)?;
    let eq = equilibrium(ctx, &s)?;
    let n = s.market.n_assets();
    let alpha = s.utility.alpha();
    let mut header: Vec<String> = ["t", "Lambda", "lambda", "residual"].iter().map(|h| h.to_string()).collect();
    if alpha.is_some() {
        header.extend((1..=n).map(|i| format!("pi_star_{i}")));
    }
    let nodes = s.sol.grid.nodes();
    let mut rows = Vec::with_capacity(nodes.len());
    for (i, &t) in nodes.iter().enumerate() {
        let mut r = vec![t, s.sol.big_lambda[i], s.sol.lambda[i], s.sol.residual[i]];
        if let Some(a) = alpha {
            r.extend(portfolio_exponential(a, &s.sol, &s.market, t)?);
        }
        rows.push(r);
    }
    output::write(&ctx.out, "lambda.csv", &csv(&header, &rows))?;
    let report = RunReport {
        input_hash: ctx.hash.clone(),
        seed: ctx.cfg.seed,
        big_lambda_at_zero: s.sol.big_lambda[0],
        lambda_min: s.sol.lambda.iter().copied().fold(f64::INFINITY, f64::min),
        lambda_max: s.sol.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        kappa: eq.kappa,
        kappa_bar: eq.kappa_bar,
        x0: eq.x0,
        budget_residual: eq.estimate.budget_residual,
        kappa_std_error: eq.estimate.kappa_se(),
        integrals: eq.integrals,
        pricing: eq.estimate.method,
        solver: solver_summary(&s),
    };
    output::write(&ctx.out, "equilibrium.json", &output::json(&report)?)
}

#[derive(Serialize)]
struct Certificates {
    input_hash: String,
    passed: bool,
    weighting: rdu_equilibrium::weighting::WeightingCertificate,
    utility: rdu_equilibrium::preferences::UtilityCertificate,
}

fn cmd_certify(ctx: &Context) -> Result<(), Failure> {
    let market = ctx.cfg.market()?;
    let grid = ctx.cfg.grid()?;
    let kernel = ctx.cfg.kernel()?;
    let utility = ctx.cfg.utility(&ctx.base)?;
    let weighting = timed("weighting certificate", || {
        rdu_equilibrium::weighting::certify_with(&kernel, &market, &grid)
    });
    let ucert = timed("utility certificate", || certify_utility(&utility, 1.0, 1.0));
    let report = Certificates {
        input_hash: ctx.hash.clone(),
        passed: weighting.passed && ucert.passed,
        weighting,
        utility: ucert,
    };
    output::write(&ctx.out, "certificates.json", &output::json(&report)?)?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .weighting
            .checks
            .iter()
            .chain(&report.utility.checks)
            .filter(|c| !c.passed)
            .map(|c| c.name.clone())
            .collect();
        Err(Failure::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct VerifyReport {
    input_hash: String,
    kappa: f64,
    certificate: rdu_equilibrium::verifier::EquilibriumCertificate,
}

fn cmd_verify(ctx: &Context) -> Result<(), Failure> {
    let s = solve_lambda(ctx)?;
    let eq = equilibrium(ctx, &s)?;
    let maps = TransformMaps::new(s.utility.clone(), eq.kappa, s.sol.big_lambda[0])?;
    let cert = timed("equilibrium certificate", || {
        certify_equilibrium(&maps, &s.kernel, &s.sol, &s.market, &ctx.cfg.verify)
    })?;
    let passed = cert.passed;
    let failed: Vec<String> = cert.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    let report = VerifyReport { input_hash: ctx.hash.clone(), kappa: eq.kappa, certificate: cert };
    output::write(&ctx.out, "equilibrium_certificate.json", &output::json(&report)?)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}

fn cmd_risk_premium(ctx: &Context) -> Result<(), Failure> {
    let s = solve_lambda(ctx)?;
    let r = risk_premium_table(&s.kernel, &s.sol)?;
    let header: Vec<String> = ["t", "lambda", "H", "H_prime", "reduction", "lambda_below_one", "consistent"]
        .iter()
        .map(|h| h.to_string())
        .collect();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let rows: Vec<Vec<f64>> = r
        .rows
        .iter()
        .map(|row| {
            vec![
                row.t,
                row.lambda,
                row.big_h,
                row.big_h_deriv,
                flag(row.reduction),
                flag(row.lambda_below_one),
                flag(row.consistent),
            ]
        })
        .collect();
    output::write(&ctx.out, "risk_premium.csv", &csv(&header, &rows))?;
    if r.disagreements == 0 {
        Ok(())
    } else {
        Err(Failure::Verification(format!("{} nodes disagree", r.disagreements)))
    }
}

fn cmd_simulate(ctx: &Context) -> Result<(), Failure> {
    let s = solve_lambda(ctx)?;
    let eq = equilibrium(ctx, &s)?;
    let spec = &ctx.cfg.simulate;
    let grid = TimeGrid::uniform(s.market.horizon(), spec.steps.max(1))?;
    let lam = |t: f64| s.sol.lambda_at(t);
    let ens = timed("simulation", || simulate(&s.market, &grid, &lam, spec.n_paths, ctx.cfg.seed))?;
    let wealth = ens
        .rho_bar_t
        .iter()
        .map(|rb| eq.terminal_wealth(&s.utility, *rb))
        .collect::<Result<Vec<f64>, _>>()?;
    let priced: Vec<f64> = wealth.iter().zip(&ens.rho_t).map(|(x, r)| x * r).collect();
    let mut text = String::from("quantity,mean,std_error\n");
    for (name, xs) in [
        ("rho_T", &ens.rho_t),
        ("rho_bar_T", &ens.rho_bar_t),
        ("terminal_wealth", &wealth),
        ("discounted_wealth", &priced),
    ] {
        let (m, se) = mean_and_se(xs);
        text.push_str(&format!("{name},{},{}\n", num(m), num(se)));
    }
    output::write(&ctx.out, "paths_summary.csv", &text)
}

#[derive(Serialize)]
struct Example5Report {
    input_hash: String,
    passed: bool,
    #[serde(rename = "lambda_max_abs_dev_from_0.5")]
    lambda_dev: f64,
    big_lambda_max_abs_dev: f64,
    portfolio_ratio_to_merton: f64,
    #[serde(rename = "portfolio_ratio_max_abs_dev_from_0.5")]
    ratio_dev: f64,
    kappa: f64,
    tolerance: f64,
}

const EXAMPLE5_TOL: f64 = 1e-4;

fn cmd_example5(ctx: &Context) -> Result<(), Failure> {
    if ctx.cfg.weighting != WeightingSpec::GaussianHalf || !matches!(ctx.cfg.utility, UtilitySpec::Exponential { .. }) {
        return Err(Failure::Config("the example needs gaussian_half weighting and exponential utility".into()));
    }
    let s = solve_lambda(ctx)?;
    let eq = equilibrium(ctx, &s)?;
    let alpha = s.utility.alpha().unwrap_or(1.0);
    let nodes = s.sol.grid.nodes();
    // Lambda(t) = (1/4) int_t^T |theta|^2, accumulated backwards on the grid.
    let mut expected = vec![0.0; nodes.len()];
    for i in (0..nodes.len() - 1).rev() {
        let (xs, ws) = rdu_equilibrium::quadrature::legendre_rule(4, nodes[i], nodes[i + 1]);
        let mut acc = 0.0;
        for (x, w) in xs.iter().zip(&ws) {
            acc += w * s.market.theta_norm_sq(*x)?;
        }
        expected[i] = expected[i + 1] + 0.25 * acc;
    }
    let mut lambda_dev = 0.0f64;
    let mut big_dev = 0.0f64;
    let mut ratio_dev = 0.0f64;
    for (i, &t) in nodes.iter().enumerate() {
        lambda_dev = lambda_dev.max((s.sol.lambda[i] - 0.5).abs());
        big_dev = big_dev.max((s.sol.big_lambda[i] - expected[i]).abs());
        if t < s.market.horizon() {
            let pi = portfolio_exponential(alpha, &s.sol, &s.market, t)?;
            let m = merton_portfolio(alpha, &s.market, t)?;
            for (a, b) in pi.iter().zip(&m) {
                ratio_dev = ratio_dev.max((a / b - 0.5).abs());
            }
        }
    }
    let ratio0 = portfolio_exponential(alpha, &s.sol, &s.market, 0.0)?[0] / merton_portfolio(alpha, &s.market, 0.0)?[0];
    let passed = lambda_dev <= EXAMPLE5_TOL && ratio_dev <= EXAMPLE5_TOL;
    let report = Example5Report {
        input_hash: ctx.hash.clone(),
        passed,
        lambda_dev,
        big_lambda_max_abs_dev: big_dev,
        portfolio_ratio_to_merton: ratio0,
        ratio_dev,
        kappa: eq.kappa,
        tolerance: EXAMPLE5_TOL,
    };
    output::write(&ctx.out, "example5_report.json", &output::json(&report)?)?;
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification(format!("lambda deviation {lambda_dev:e}, portfolio ratio deviation {ratio_dev:e}")))
    }
}
