//! Finite-horizon discounted value iteration for a decoupled pair. Used only as
//! an independent oracle for the structural properties of the value function.

use crate::model::{CostFunction, PairParameters};

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIterationResult {
    /// V_horizon(0..=n_max).
    pub values: Vec<f64>,
    /// Minimizing action of the last step; `true` means server k serves.
    pub serve: Vec<bool>,
    /// Smallest discrete second difference of any iterate over `0..=check_limit`.
    pub min_second_difference: f64,
    /// Smallest first difference of any iterate over `0..=check_limit`.
    pub min_first_difference: f64,
}

/// One step of
///
/// ```text
/// V_n(x) = f(x) + α Λ V(x+1) + α (1 − Λ − μ̂ − μ_k) V(x) + α μ̂ V(x−1)
///          + min_u [ (1−u) λ + α (1−u) μ_k V(x) + α u μ_k V(x−1) ]
/// ```
///
/// with `V(−1) = V(0)` and the arrival out of the last state folded into its
/// self-loop.
pub fn value_iteration_step(
    params: &PairParameters,
    cost: &CostFunction,
    lambda: f64,
    alpha: f64,
    prev: &[f64],
) -> (Vec<f64>, Vec<bool>) {
    let n = prev.len() - 1;
    let (l, mh, mk) = (params.lambda_arr, params.mu_hat, params.mu_k);
    let mut next = Vec::with_capacity(n + 1);
    let mut serve = Vec::with_capacity(n + 1);
    for x in 0..=n {
        let up = prev[(x + 1).min(n)];
        let here = prev[x];
        let below = prev[x.saturating_sub(1)];
        let base = cost.eval(x as u32)
            + alpha * l * up
            + alpha * (1.0 - l - mh - mk) * here
            + alpha * mh * below;
        let passive = lambda + alpha * mk * here;
        let active = alpha * mk * below;
        let u = active < passive;
        serve.push(u);
        next.push(base + if u { active } else { passive });
    }
    (next, serve)
}

/// Runs `horizon` steps from V_0 = f. Shape statistics are collected over
/// `0..=check_limit` for every iterate including V_0.
pub fn value_iteration_oracle(
    params: &PairParameters,
    cost: &CostFunction,
    lambda: f64,
    alpha: f64,
    horizon: usize,
    n_max: usize,
    check_limit: usize,
) -> ValueIterationResult {
    assert!(alpha > 0.0 && alpha < 1.0, "discount must lie in (0, 1)");
    let limit = check_limit.min(n_max);
    let mut values: Vec<f64> = (0..=n_max).map(|x| cost.eval(x as u32)).collect();
    let mut serve = vec![false; n_max + 1];
    let mut min2 = f64::INFINITY;
    let mut min1 = f64::INFINITY;
    let mut record = |v: &[f64]| {
        for x in 1..=limit {
            min1 = min1.min(v[x] - v[x - 1]);
            if x < limit {
                min2 = min2.min(v[x + 1] - 2.0 * v[x] + v[x - 1]);
            }
        }
    };
    record(&values);
    for _ in 0..horizon {
        let (next, u) = value_iteration_step(params, cost, lambda, alpha, &values);
        record(&next);
        values = next;
        serve = u;
    }
    ValueIterationResult {
        values,
        serve,
        min_second_difference: min2,
        min_first_difference: min1,
    }
}
