//! Whittle-like index of a decoupled pair at queue length x: the passivity
//! charge λ at which idling server k and serving with it are equally good in
//! state x, i.e. the fixed point of
//!
//! ```text
//! F(λ) = E_p2[V_λ | x] − E_p1[V_λ | x] = μ_k (V_λ(x−1) − V_λ(x))
//! ```
//!
//! where V_λ solves the value equations with passive set `0..=x`.

use crate::birth_death::kernels;
use crate::error::{Error, Result};
use crate::model::{CostFunction, PairParameters};

use super::relative_value::ThresholdSystem;

/// Default step size of the index iteration.
pub const DEFAULT_ETA: f64 = 0.01;
/// Minimum gap between the queue length of an index and the buffer size.
pub const MIN_BUFFER_MARGIN: usize = 10;

fn check_state(x: usize, n_max: usize) -> Result<()> {
    if x == 0 {
        return Err(Error::InvalidArgument(
            "index state x must be at least 1".into(),
        ));
    }
    if n_max < x + MIN_BUFFER_MARGIN {
        return Err(Error::InvalidArgument(format!(
            "n_max {n_max} must be at least x + {MIN_BUFFER_MARGIN} = {}",
            x + MIN_BUFFER_MARGIN
        )));
    }
    Ok(())
}

/// λ ↦ F(λ) for a fixed state, backed by a factor-once threshold system.
struct IndexMap<'a> {
    system: ThresholdSystem,
    params: &'a PairParameters,
    x: usize,
}

impl<'a> IndexMap<'a> {
    fn new(
        params: &'a PairParameters,
        cost: &CostFunction,
        x: usize,
        n_max: usize,
    ) -> Result<Self> {
        if x == 0 {
            return Err(Error::InvalidArgument(
                "index state x must be at least 1".into(),
            ));
        }
        Ok(Self {
            system: ThresholdSystem::new(params, cost, x, n_max)?,
            params,
            x,
        })
    }

    fn eval(&self, lambda: f64) -> Result<f64> {
        let sol = self.system.solve(lambda)?;
        let (p1, p2) = kernels(self.params);
        Ok(p2.expect(&sol.values, self.x) - p1.expect(&sol.values, self.x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectIndex {
    pub value: f64,
    /// dF/dλ of the affine map.
    pub slope: f64,
    /// |F(λ*) − λ*| after re-solving at λ*.
    pub residual: f64,
}

/// Exact fixed point of the affine map F(λ) = a + bλ, λ* = a / (1 − b).
pub fn whittle_index_direct(
    params: &PairParameters,
    cost: &CostFunction,
    x: usize,
    n_max: usize,
) -> Result<DirectIndex> {
    check_state(x, n_max)?;
    affine_fixed_point(params, cost, x, n_max)
}

/// Fixed point without the buffer-margin requirement; valid for any
/// `1 <= x <= n_max` but affected by the reflecting boundary near `n_max`.
pub fn affine_fixed_point(
    params: &PairParameters,
    cost: &CostFunction,
    x: usize,
    n_max: usize,
) -> Result<DirectIndex> {
    let map = IndexMap::new(params, cost, x, n_max)?;
    let a = map.eval(0.0)?;
    let b = map.eval(1.0)? - a;
    if (1.0 - b).abs() <= 1e-12 {
        return Err(Error::DegenerateAffineMap { x, slope: b });
    }
    let value = a / (1.0 - b);
    let residual = (map.eval(value)? - value).abs();
    Ok(DirectIndex {
        value,
        slope: b,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationSettings {
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Starting iterate λ_0.
    pub initial: f64,
}

impl Default for IterationSettings {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            tol: 1e-6,
            max_iter: 100_000,
            initial: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeIndex {
    pub value: f64,
    pub iterations: usize,
    /// λ_1, λ_2, ... (λ_0 is `settings.initial`).
    pub trace: Vec<f64>,
}

/// Relaxation λ_{n+1} = λ_n + η (F(λ_n) − λ_n), re-solving the value equations
/// at every step, until successive iterates differ by less than
/// `tol · max(1, |λ_n|)`.
pub fn whittle_index_iterative(
    params: &PairParameters,
    cost: &CostFunction,
    x: usize,
    settings: IterationSettings,
    n_max: usize,
) -> Result<IterativeIndex> {
    if !(settings.eta > 0.0 && settings.eta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must lie in (0, 1), got {}",
            settings.eta
        )));
    }
    check_state(x, n_max)?;
    let map = IndexMap::new(params, cost, x, n_max)?;
    let mut lambda = settings.initial;
    let mut trace = Vec::new();
    let mut step = f64::INFINITY;
    for n in 1..=settings.max_iter {
        let next = lambda + settings.eta * (map.eval(lambda)? - lambda);
        trace.push(next);
        step = (next - lambda).abs();
        let scale = lambda.abs().max(1.0);
        lambda = next;
        if step < settings.tol * scale {
            return Ok(IterativeIndex {
                value: lambda,
                iterations: n,
                trace,
            });
        }
        if !lambda.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        last: lambda,
        step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexabilityReport {
    /// Cost-minimizing threshold x(λ) for each grid point.
    pub thresholds: Vec<usize>,
    /// x(λ) is non-increasing along the grid.
    pub monotone: bool,
}

/// Average cost of every threshold policy `0..=n_max` as an affine function
/// of λ: entry ℓ is (β_ℓ(0), dβ_ℓ/dλ). The slope is the passive fraction.
pub fn threshold_cost_lines(
    params: &PairParameters,
    cost: &CostFunction,
    n_max: usize,
) -> Result<Vec<(f64, f64)>> {
    (0..=n_max)
        .map(|l| {
            let sys = ThresholdSystem::new(params, cost, l, n_max)?;
            let b0 = sys.solve(0.0)?.beta;
            let b1 = sys.solve(1.0)?.beta;
            Ok((b0, b1 - b0))
        })
        .collect()
}

/// Evaluates every threshold policy `0..=n_max` and picks, for each λ in the
/// ascending grid, the one with the smallest average cost (smallest threshold
/// on ties). Average costs are affine in λ, so each threshold is solved twice.
pub fn indexability_check(
    params: &PairParameters,
    cost: &CostFunction,
    lambda_grid: &[f64],
    n_max: usize,
) -> Result<IndexabilityReport> {
    if lambda_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(
            "lambda grid must be sorted ascending".into(),
        ));
    }
    let lines = threshold_cost_lines(params, cost, n_max)?;
    let thresholds: Vec<usize> = lambda_grid
        .iter()
        .map(|&lam| {
            let costs: Vec<f64> = lines.iter().map(|(b0, s)| b0 + s * lam).collect();
            let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
            let tol = 1e-12 * (1.0 + best.abs());
            costs.iter().position(|&c| c <= best + tol).unwrap_or(0)
        })
        .collect();
    let monotone = thresholds.windows(2).all(|w| w[1] <= w[0]);
    Ok(IndexabilityReport {
        thresholds,
        monotone,
    })
}
