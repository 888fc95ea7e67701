//! Deterministic-coefficient complete market, time grids and path simulation.

use crate::error::{Error, Result};
use crate::linalg::{norm_sq, Matrix};
use crate::scalar::{lit, Real};
use crate::special::norm_quantile_fast;
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::sync::Arc;

pub type VectorFn<T> = Arc<dyn Fn(T) -> Vec<T> + Send + Sync>;
pub type MatrixFn<T> = Arc<dyn Fn(T) -> Matrix<T> + Send + Sync>;

/// Market with drift `mu(t)`, volatility `sigma(t)` and zero interest rate.
#[derive(Clone)]
pub struct MarketModel<T: Real> {
    n_assets: usize,
    horizon: T,
    mu: VectorFn<T>,
    sigma: MatrixFn<T>,
    breakpoints: Vec<T>,
}

impl<T: Real> fmt::Debug for MarketModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MarketModel")
            .field("n_assets", &self.n_assets)
            .field("horizon", &self.horizon)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

impl<T: Real> MarketModel<T> {
    /// Market from arbitrary coefficient callables.
    ///
    /// `breakpoints` lists interior times where the coefficients may jump; they
    /// are forced onto ODE steps and simulation grids.
    pub fn from_fns(
        n_assets: usize,
        horizon: T,
        mu: VectorFn<T>,
        sigma: MatrixFn<T>,
        breakpoints: Vec<T>,
    ) -> Result<Self> {
        if n_assets == 0 {
            return Err(Error::DomainError("market needs at least one asset".into()));
        }
        if !(horizon > T::zero() && horizon.is_finite()) {
            return Err(Error::DomainError(format!("horizon must be positive, got {horizon}")));
        }
        let mut breakpoints: Vec<T> =
            breakpoints.into_iter().filter(|&b| b > T::zero() && b < horizon).collect();
        breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breakpoints.dedup();
        let m = MarketModel { n_assets, horizon, mu, sigma, breakpoints };
        m.theta_of(T::zero())?;
        Ok(m)
    }

    pub fn constant(mu: Vec<T>, sigma: Matrix<T>, horizon: T) -> Result<Self> {
        if sigma.dim() != mu.len() {
            return Err(Error::DomainError("mu and sigma dimensions differ".into()));
        }
        let n = mu.len();
        Self::from_fns(n, horizon, Arc::new(move |_| mu.clone()), Arc::new(move |_| sigma.clone()), vec![])
    }

    /// Single asset with constant drift and volatility.
    pub fn scalar(mu: T, sigma: T, horizon: T) -> Result<Self> {
        Self::constant(vec![mu], Matrix::scalar(sigma), horizon)
    }

    /// Single asset whose market price of risk is the given curve (`sigma = 1`).
    pub fn scalar_theta(theta: Arc<dyn Fn(T) -> T + Send + Sync>, horizon: T) -> Result<Self> {
        Self::from_fns(
            1,
            horizon,
            Arc::new(move |t| vec![theta(t)]),
            Arc::new(|_| Matrix::scalar(T::one())),
            vec![],
        )
    }

    /// Right-continuous piecewise-constant coefficients.
    ///
    /// Segment `i` applies on `[times[i], times[i+1])`; `times[0]` must be 0.
    pub fn piecewise_constant(
        times: Vec<T>,
        mus: Vec<Vec<T>>,
        sigmas: Vec<Matrix<T>>,
        horizon: T,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != mus.len() || times.len() != sigmas.len() {
            return Err(Error::DomainError("piecewise tables must have equal, nonzero length".into()));
        }
        if times[0] != T::zero() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::DomainError(
                "piecewise times must start at 0 and increase strictly".into(),
            ));
        }
        let n = mus[0].len();
        if mus.iter().any(|m| m.len() != n) || sigmas.iter().any(|s| s.dim() != n) {
            return Err(Error::DomainError("inconsistent asset dimension in piecewise tables".into()));
        }
        let times = Arc::new(times);
        let t1 = times.clone();
        let t2 = times.clone();
        let idx = move |ts: &[T], t: T| ts.iter().rposition(|&s| s <= t).unwrap_or(0);
        Self::from_fns(
            n,
            horizon,
            Arc::new(move |t| mus[idx(&t1, t)].clone()),
            Arc::new(move |t| sigmas[idx(&t2, t)].clone()),
            times.iter().copied().collect(),
        )
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn mu(&self, t: T) -> Vec<T> {
        (self.mu)(t)
    }

    pub fn sigma(&self, t: T) -> Matrix<T> {
        (self.sigma)(t)
    }

    /// Market price of risk `sigma(t)^{-1} mu(t)`.
    pub fn theta_of(&self, t: T) -> Result<Vec<T>> {
        let mu = self.mu(t);
        let sigma = self.sigma(t);
        if mu.len() != self.n_assets || sigma.dim() != self.n_assets {
            return Err(Error::DomainError(format!("coefficient dimension mismatch at t = {t}")));
        }
        if !mu.iter().all(|v| v.is_finite()) || !sigma.is_finite() {
            return Err(Error::NonfiniteCoefficient { t: t.as_f64(), what: "mu or sigma".into() });
        }
        let theta = sigma.solve(&mu, Matrix::default_cond_tol()).map_err(|ratio| {
            Error::SingularVolatility { t: t.as_f64(), ratio: ratio.as_f64() }
        })?;
        let norm = norm_sq(&theta).sqrt();
        if norm < lit(1e-12) {
            return Err(Error::ZeroRiskPremium { t: t.as_f64(), norm: norm.as_f64() });
        }
        Ok(theta)
    }

    pub fn theta_norm_sq(&self, t: T) -> Result<T> {
        Ok(norm_sq(&self.theta_of(t)?))
    }

    /// Solves `sigma(t)^T x = v`.
    pub fn solve_sigma_transpose(&self, t: T, v: &[T]) -> Result<Vec<T>> {
        self.sigma(t)
            .transpose()
            .solve(v, Matrix::default_cond_tol())
            .map_err(|ratio| Error::SingularVolatility { t: t.as_f64(), ratio: ratio.as_f64() })
    }

    /// Checks the model invariants at every grid node.
    ///
    /// Right-continuity is probed by comparing each node with a point a
    /// relative `1e-9` of the horizon later.
    pub fn validate(&self, grid: &TimeGrid<T>) -> Result<()> {
        let eta = self.horizon * lit(1e-9);
        for &t in grid.nodes() {
            let theta = self.theta_of(t)?;
            if t < self.horizon {
                let later = self.theta_of((t + eta).min(self.horizon))?;
                let jump = theta.iter().zip(&later).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max);
                let scale = theta.iter().fold(T::one(), |m, v| m.max(v.abs()));
                if jump > lit::<T>(1e-6) * scale {
                    return Err(Error::DomainError(format!(
                        "coefficients are not right-continuous at t = {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Strictly increasing time nodes from 0 to T.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    nodes: Vec<T>,
}

impl<T: Real> TimeGrid<T> {
    pub fn from_nodes(nodes: Vec<T>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::EmptyGrid("a grid needs at least two nodes".into()));
        }
        if nodes[0] != T::zero() {
            return Err(Error::EmptyGrid("first node must be 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || !nodes.iter().all(|v| v.is_finite()) {
            return Err(Error::EmptyGrid("nodes must be finite and strictly increasing".into()));
        }
        Ok(TimeGrid { nodes })
    }

    pub fn uniform(horizon: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::EmptyGrid("zero steps".into()));
        }
        let m = T::from_count(steps);
        let mut nodes: Vec<T> = (0..=steps).map(|i| horizon * T::from_count(i) / m).collect();
        nodes[steps] = horizon;
        Self::from_nodes(nodes)
    }

    /// Grid refined towards `T`: `t_i = T (1 - (1 - i/M)^power)`.
    pub fn graded(horizon: T, steps: usize, power: T) -> Result<Self> {
        if steps == 0 {
            return Err(Error::EmptyGrid("zero steps".into()));
        }
        let m = T::from_count(steps);
        let mut nodes: Vec<T> = (0..=steps)
            .map(|i| horizon * (T::one() - (T::one() - T::from_count(i) / m).powf(power)))
            .collect();
        nodes[steps] = horizon;
        Self::from_nodes(nodes)
    }

    /// Adds the given interior times as nodes (near-duplicates are merged).
    pub fn with_breakpoints(&self, extra: &[T]) -> Self {
        let horizon = self.horizon();
        let merge = horizon * lit(1e-12);
        let mut nodes = self.nodes.clone();
        for &b in extra {
            if b > T::zero() && b < horizon {
                nodes.push(b);
            }
        }
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut out: Vec<T> = Vec::with_capacity(nodes.len());
        for v in nodes {
            match out.last() {
                Some(&last) if v - last <= merge => {
                    if v == horizon {
                        *out.last_mut().unwrap() = v;
                    }
                }
                _ => out.push(v),
            }
        }
        TimeGrid { nodes: out }
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn horizon(&self) -> T {
        *self.nodes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Standard normal draws for one path.
///
/// The `i`-th draw of path `p` under `seed` reads the ChaCha8 stream `p` at
/// word `2i`, so any draw can be regenerated independently of the others.
pub struct PathNoise {
    rng: ChaCha8Rng,
}

impl PathNoise {
    pub fn new(seed: u64, path: u64) -> Self {
        Self::at(seed, path, 0)
    }

    /// Positions the generator at draw `index`.
    pub fn at(seed: u64, path: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        if index > 0 {
            rng.set_word_pos(2 * index as u128);
        }
        PathNoise { rng }
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        let u = (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        norm_quantile_fast(u)
    }
}

/// Terminal state-price densities of simulated paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<T> {
    pub seed: u64,
    pub n_paths: usize,
    pub n_assets: usize,
    pub steps: usize,
    /// `rho(T)` per path.
    pub rho_t: Vec<T>,
    /// `rho_bar(T)` per path.
    pub rho_bar_t: Vec<T>,
    /// Brownian increments, path-major then step then asset, when requested.
    pub increments: Option<Vec<T>>,
}

impl<T: Real> PathEnsemble<T> {
    /// Increment vector of `path` over step `step`.
    pub fn increment(&self, path: usize, step: usize) -> Option<&[T]> {
        let inc = self.increments.as_ref()?;
        let n = self.n_assets;
        let start = (path * self.steps + step) * n;
        Some(&inc[start..start + n])
    }
}

/// Simulates `rho(T)` and `rho_bar(T)` on `grid` with left-point sums.
pub fn simulate<T: Real>(
    market: &MarketModel<T>,
    grid: &TimeGrid<T>,
    lambda_curve: &(dyn Fn(T) -> T + Sync),
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    simulate_with(market, grid, lambda_curve, n_paths, seed, false)
}

/// As [`simulate`], optionally retaining every Brownian increment.
pub fn simulate_with<T: Real>(
    market: &MarketModel<T>,
    grid: &TimeGrid<T>,
    lambda_curve: &(dyn Fn(T) -> T + Sync),
    n_paths: usize,
    seed: u64,
    keep_increments: bool,
) -> Result<PathEnsemble<T>> {
    if grid.len() < 2 {
        return Err(Error::EmptyGrid("simulation grid has no steps".into()));
    }
    if n_paths == 0 {
        return Err(Error::DomainError("n_paths must be at least 1".into()));
    }
    let n = market.n_assets();
    let nodes = grid.nodes();
    let steps = grid.steps();
    let mut thetas = Vec::with_capacity(steps);
    let mut lams = Vec::with_capacity(steps);
    let mut dts = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = nodes[i];
        let theta = market.theta_of(t)?;
        let lam = lambda_curve(t);
        if !lam.is_finite() || lam < T::zero() {
            return Err(Error::NonfiniteCoefficient { t: t.as_f64(), what: format!("lambda = {lam}") });
        }
        thetas.push(theta);
        lams.push(lam);
        dts.push(nodes[i + 1] - nodes[i]);
    }
    let half = lit::<T>(0.5);
    let drift: Vec<(T, T)> = (0..steps)
        .map(|i| {
            let th2 = norm_sq(&thetas[i]);
            (half * th2 * dts[i], half * lams[i] * lams[i] * th2 * dts[i])
        })
        .collect();
    let sqrt_dt: Vec<T> = dts.iter().map(|d| d.sqrt()).collect();

    let per_path: Vec<(T, T, Vec<T>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut noise = PathNoise::new(seed, p as u64);
            let mut log_rho = T::zero();
            let mut log_bar = T::zero();
            let mut incs = if keep_increments { Vec::with_capacity(steps * n) } else { Vec::new() };
            for i in 0..steps {
                let mut tw = T::zero();
                for &th in &thetas[i][..n] {
                    let dw = lit::<T>(noise.next_normal()) * sqrt_dt[i];
                    tw = tw + th * dw;
                    if keep_increments {
                        incs.push(dw);
                    }
                }
                log_rho = log_rho - drift[i].0 - tw;
                log_bar = log_bar - drift[i].1 - lams[i] * tw;
            }
            (log_rho.exp(), log_bar.exp(), incs)
        })
        .collect();

    let mut rho_t = Vec::with_capacity(n_paths);
    let mut rho_bar_t = Vec::with_capacity(n_paths);
    let mut increments = if keep_increments { Some(Vec::with_capacity(n_paths * steps * n)) } else { None };
    for (r, rb, inc) in per_path {
        rho_t.push(r);
        rho_bar_t.push(rb);
        if let Some(all) = increments.as_mut() {
            all.extend(inc);
        }
    }
    Ok(PathEnsemble { seed, n_paths, n_assets: n, steps, rho_t, rho_bar_t, increments })
}

/// Sample mean and standard error.
pub fn mean_and_se<T: Real>(xs: &[T]) -> (T, T) {
    let n = T::from_count(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    if xs.len() < 2 {
        return (mean, T::infinity());
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / (n - T::one());
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_scalar_and_diagonal() {
        let m = MarketModel::<f64>::scalar(0.08, 0.2, 1.0).unwrap();
        assert!((m.theta_of(0.3).unwrap()[0] - 0.4).abs() < 1e-15);
        let m = MarketModel::<f64>::constant(vec![0.1, 0.05], Matrix::diagonal(&[0.25, 0.25]), 1.0).unwrap();
        let th = m.theta_of(0.0).unwrap();
        assert!((th[0] - 0.4).abs() < 1e-15 && (th[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn singular_and_zero_premium() {
        let s = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            MarketModel::constant(vec![0.1, 0.1], s, 1.0),
            Err(Error::SingularVolatility { .. })
        ));
        assert!(matches!(MarketModel::scalar(0.0, 0.2, 1.0), Err(Error::ZeroRiskPremium { .. })));
    }

    #[test]
    fn graded_grid_and_breakpoints() {
        let g = TimeGrid::graded(1.0, 10, 2.0).unwrap();
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(g.horizon(), 1.0);
        let h = g.with_breakpoints(&[0.5, 0.19]);
        assert!(h.nodes().contains(&0.5) && h.len() == 12);
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn unit_lambda_collapses_densities() {
        let m = MarketModel::scalar(0.08, 0.2, 1.0).unwrap();
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        let e = simulate(&m, &g, &|_| 1.0, 200, 7).unwrap();
        assert_eq!(e.rho_t, e.rho_bar_t);
    }

    #[test]
    fn noise_is_addressable() {
        let mut a = PathNoise::new(3, 11);
        let draws: Vec<f64> = (0..10).map(|_| a.next_normal()).collect();
        let mut b = PathNoise::at(3, 11, 7);
        assert_eq!(b.next_normal(), draws[7]);
    }
}
