//! Policy evaluation for a decoupled pair under a fixed threshold: the
//! average-cost equations
//!
//! ```text
//! V(y) = f(y) + λ + E_p1[V | y] − β    for y ≤ x
//! V(y) = f(y) +     E_p2[V | y] − β    for y > x
//! V(0) = 0
//! ```
//!
//! on states `0..=n_max`, with the arrival out of `n_max` folded into its
//! self-loop. State 0 is passive and pays λ.
//!
//! Written in the differences `D(y) = V(y) − V(y−1)` every row becomes
//!
//! ```text
//! up(y) D(y+1) − down(y) D(y) = β − c(y)
//! ```
//!
//! which is solved in O(n) as an affine function of β: forward from row 0 while
//! `down < up` (passive region with μ̂ < Λ), backward from the top elsewhere, so
//! every recurrence step contracts. The two sweeps meet in one scalar equation
//! for β whose denominator is at least one.

use crate::birth_death::kernels;
use crate::error::{Error, Result};
use crate::model::{CostFunction, PairParameters};

/// Largest accepted row residual relative to the row's magnitude.
const RESIDUAL_LIMIT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeValueSolution {
    /// V(0..=n_max) with V(0) = 0.
    pub values: Vec<f64>,
    /// Average cost β.
    pub beta: f64,
    /// Passivity charge λ.
    pub lambda: f64,
    /// States `0..=threshold` are passive.
    pub threshold: usize,
    /// Largest absolute row residual of the value equations.
    pub residual: f64,
}

impl RelativeValueSolution {
    pub fn n_max(&self) -> usize {
        self.values.len() - 1
    }

    /// g(x) = μ_k (V(x−1) − V(x)).
    pub fn g(&self, params: &PairParameters, x: usize) -> f64 {
        params.mu_k * (self.values[x - 1] - self.values[x])
    }
}

/// Threshold system with λ-independent coefficients precomputed, so repeated
/// solves for different λ cost O(n) each.
#[derive(Debug, Clone)]
pub(crate) struct ThresholdSystem {
    up: Vec<f64>,
    down: Vec<f64>,
    cost: Vec<f64>,
    threshold: usize,
    split: usize,
}

impl ThresholdSystem {
    pub(crate) fn new(
        params: &PairParameters,
        cost: &CostFunction,
        threshold: usize,
        n_max: usize,
    ) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be positive".into()));
        }
        if threshold > n_max {
            return Err(Error::InvalidArgument(format!(
                "threshold {threshold} exceeds n_max {n_max}"
            )));
        }
        if !params.is_stable() {
            return Err(Error::UnstableChain {
                arrival: params.lambda_arr,
                service: params.total_service(),
            });
        }
        let lambda = params.lambda_arr;
        let up: Vec<f64> = (0..=n_max)
            .map(|y| if y < n_max { lambda } else { 0.0 })
            .collect();
        let down: Vec<f64> = (0..=n_max)
            .map(|y| match y {
                0 => 0.0,
                y if y <= threshold => params.mu_hat,
                _ => params.mu_hat + params.mu_k,
            })
            .collect();
        let cost: Vec<f64> = (0..=n_max).map(|y| cost.eval(y as u32)).collect();
        let split = if lambda > 0.0 && params.mu_hat < lambda {
            (threshold + 1).min(n_max)
        } else {
            0
        };
        if let Some(y) = (split + 1..=n_max).find(|&y| down[y] <= 0.0) {
            return Err(Error::SingularSystem(format!(
                "state {y} has neither arrivals nor departures under threshold {threshold}"
            )));
        }
        Ok(Self {
            up,
            down,
            cost,
            threshold,
            split,
        })
    }

    fn row_cost(&self, y: usize, lambda: f64) -> f64 {
        if y <= self.threshold {
            self.cost[y] + lambda
        } else {
            self.cost[y]
        }
    }

    pub(crate) fn solve(&self, lambda: f64) -> Result<RelativeValueSolution> {
        let n = self.up.len() - 1;
        let m = self.split;
        // diffs[y] = (a, b) with D(y) = a + b β; index 0 unused.
        let mut diffs = vec![(0.0, 0.0); n + 2];
        for y in 0..m {
            let (a, b) = diffs[y];
            let c = self.row_cost(y, lambda);
            diffs[y + 1] = (
                (self.down[y] * a - c) / self.up[y],
                (1.0 + self.down[y] * b) / self.up[y],
            );
        }
        for y in (m + 1..=n).rev() {
            let (a, b) = diffs[y + 1];
            let c = self.row_cost(y, lambda);
            diffs[y] = (
                (self.up[y] * a + c) / self.down[y],
                (self.up[y] * b - 1.0) / self.down[y],
            );
        }
        // Row m couples the two sweeps.
        let (af, bf) = if m > 0 { diffs[m] } else { (0.0, 0.0) };
        let (ab, bb) = if m < n { diffs[m + 1] } else { (0.0, 0.0) };
        let (up, down) = (self.up[m], self.down[m]);
        let denom = 1.0 - up * bb + down * bf;
        let beta = (up * ab - down * af + self.row_cost(m, lambda)) / denom;
        if !beta.is_finite() {
            return Err(Error::SingularSystem(format!(
                "non-finite average cost (meeting-row denominator {denom})"
            )));
        }

        let mut values = Vec::with_capacity(n + 1);
        values.push(0.0);
        let d: Vec<f64> = diffs.iter().map(|&(a, b)| a + b * beta).collect();
        for y in 1..=n {
            values.push(values[y - 1] + d[y]);
        }

        let mut residual = 0.0_f64;
        let mut worst_rel = 0.0_f64;
        for y in 0..=n {
            let c = self.row_cost(y, lambda);
            let next = if y < n { self.up[y] * d[y + 1] } else { 0.0 };
            let cur = if y > 0 { self.down[y] * d[y] } else { 0.0 };
            let r = (c - beta + next - cur).abs();
            let size = 1.0 + c.abs() + beta.abs() + next.abs() + cur.abs();
            residual = residual.max(r);
            worst_rel = worst_rel.max(r / size);
        }
        if !(worst_rel <= RESIDUAL_LIMIT) {
            return Err(Error::SingularSystem(format!(
                "relative residual {worst_rel:e} exceeds {RESIDUAL_LIMIT:e}"
            )));
        }
        Ok(RelativeValueSolution {
            values,
            beta,
            lambda,
            threshold: self.threshold,
            residual,
        })
    }
}

/// Solves the average-cost equations for passive set `0..=threshold` and
/// passivity charge `lambda` on states `0..=n_max`.
pub fn solve_relative_value(
    params: &PairParameters,
    cost: &CostFunction,
    threshold: usize,
    lambda: f64,
    n_max: usize,
) -> Result<RelativeValueSolution> {
    ThresholdSystem::new(params, cost, threshold, n_max)?.solve(lambda)
}

/// Residuals of the value equations written in the form
/// `V(y) − (c(y) + E[V | y] − β)` using the uniformized kernels directly.
pub fn equation_residuals(
    sol: &RelativeValueSolution,
    params: &PairParameters,
    cost: &CostFunction,
) -> Vec<f64> {
    let (p1, p2) = kernels(params);
    (0..sol.values.len())
        .map(|y| {
            let rhs = if y <= sol.threshold {
                cost.eval(y as u32) + sol.lambda + p1.expect(&sol.values, y)
            } else {
                cost.eval(y as u32) + p2.expect(&sol.values, y)
            } - sol.beta;
            sol.values[y] - rhs
        })
        .collect()
}

/// Upper end of the state range used for structural checks; the reflecting
/// buffer distorts value differences in the top quarter.
pub fn structural_limit(n_max: usize) -> usize {
    (n_max - n_max / 4).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdStructure {
    /// g(x) for x = 1..=limit (entry 0 is x = 1).
    pub g: Vec<f64>,
    pub strictly_decreasing: bool,
    pub non_increasing: bool,
    /// First state x with g(x) < λ, where serving becomes strictly preferable.
    pub crossing: Option<usize>,
}

impl ThresholdStructure {
    pub fn monotone(&self) -> bool {
        self.strictly_decreasing
    }
}

/// Evaluates g(x) = μ_k (V(x−1) − V(x)) and its monotonicity over the
/// interior states `1..=structural_limit(n_max)`.
pub fn check_threshold_structure(
    sol: &RelativeValueSolution,
    params: &PairParameters,
) -> ThresholdStructure {
    let limit = structural_limit(sol.n_max());
    let g: Vec<f64> = (1..=limit).map(|x| sol.g(params, x)).collect();
    let scale = g.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale;
    let strictly_decreasing = g.len() > 1 && g.windows(2).all(|w| w[1] < w[0] - tol);
    let non_increasing = g.windows(2).all(|w| w[1] <= w[0] + tol);
    let crossing = g.iter().position(|&v| v < sol.lambda).map(|p| p + 1);
    ThresholdStructure {
        g,
        strictly_decreasing,
        non_increasing,
        crossing,
    }
}
