//! Closed-form analytics for the birth–death chain of a decoupled pair run
//! under a threshold policy: passive (only the other servers serve) in states
//! `0..=threshold`, active (all servers in S_i serve) above it.

use crate::error::{Error, Result};
use crate::model::PairParameters;

/// States kept explicitly in a [`StationaryDistribution`]; the rest is carried
/// as analytic tail mass.
pub const DEFAULT_N_TRUNC: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChain {
    params: PairParameters,
    threshold: usize,
}

impl ThresholdChain {
    pub fn new(params: PairParameters, threshold: usize) -> Result<Self> {
        if !params.is_stable() {
            return Err(Error::UnstableChain {
                arrival: params.lambda_arr,
                service: params.total_service(),
            });
        }
        Ok(Self { params, threshold })
    }

    pub fn params(&self) -> &PairParameters {
        &self.params
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    /// Ratio of consecutive active-region probabilities, Λ/(μ̂+μ_k).
    fn active_ratio(&self) -> f64 {
        self.params.lambda_arr / self.params.total_service()
    }

    /// Unnormalized weight of state `i`, scaled so the largest passive weight is 1.
    fn weight(&self, i: usize) -> f64 {
        let p = &self.params;
        let l = self.threshold;
        let passive = |i: usize| -> f64 {
            if p.lambda_arr <= p.mu_hat {
                (p.lambda_arr / p.mu_hat).powi(i as i32)
            } else {
                (p.mu_hat / p.lambda_arr).powi((l - i) as i32)
            }
        };
        if i <= l {
            passive(i)
        } else {
            passive(l) * self.active_ratio().powi((i - l) as i32)
        }
    }

    /// Passive and tail sums of the weights, both in closed form.
    fn weight_sums(&self) -> (f64, f64) {
        let p = &self.params;
        let n = self.threshold + 1;
        let passive = if p.lambda_arr <= p.mu_hat {
            geometric_sum(p.lambda_arr / p.mu_hat, n)
        } else {
            geometric_sum(p.mu_hat / p.lambda_arr, n)
        };
        let rho = self.active_ratio();
        let tail = self.weight(self.threshold) * rho / (1.0 - rho);
        (passive, tail)
    }
}

/// Σ_{m=0}^{n-1} q^m for q ≥ 0.
fn geometric_sum(q: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if q == 0.0 {
        return 1.0;
    }
    if q == 1.0 {
        return n as f64;
    }
    (n as f64 * q.ln()).exp_m1() / (q - 1.0)
}

/// Stationary law over `0..=n_trunc` plus the mass of all higher states.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub probabilities: Vec<f64>,
    pub tail_mass: f64,
    pub threshold: usize,
}

impl StationaryDistribution {
    pub fn total_mass(&self) -> f64 {
        self.probabilities.iter().sum::<f64>() + self.tail_mass
    }

    /// Σ_x f(x) π(x) over the explicit states.
    pub fn expectation(&self, f: impl Fn(u32) -> f64) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(x, p)| p * f(x as u32))
            .sum()
    }
}

pub fn stationary_distribution(chain: &ThresholdChain) -> StationaryDistribution {
    stationary_distribution_truncated(chain, DEFAULT_N_TRUNC)
}

/// Stationary distribution with states above `n_trunc` folded into the tail.
/// The explicit range is widened to `threshold + 1` if needed.
pub fn stationary_distribution_truncated(
    chain: &ThresholdChain,
    n_trunc: usize,
) -> StationaryDistribution {
    let n = n_trunc.max(chain.threshold + 1);
    let (passive, tail) = chain.weight_sums();
    let z = passive + tail;
    let probabilities: Vec<f64> = (0..=n).map(|i| chain.weight(i) / z).collect();
    let rho = chain.active_ratio();
    let tail_mass = probabilities[n] * rho / (1.0 - rho);
    StationaryDistribution {
        probabilities,
        tail_mass,
        threshold: chain.threshold,
    }
}

/// Σ_{i=0}^{ℓ} π^ℓ(i), the long-run fraction of time spent passive.
pub fn cumulative_passive_mass(chain: &ThresholdChain) -> f64 {
    let p = &chain.params;
    let l = chain.threshold;
    let excess = p.lambda_arr / (p.total_service() - p.lambda_arr);
    // Both branches divide numerator and denominator by the largest passive weight.
    let (passive, tail) = if p.lambda_arr <= p.mu_hat {
        let r = p.lambda_arr / p.mu_hat;
        (geometric_sum(r, l + 1), r.powi(l as i32) * excess)
    } else {
        (geometric_sum(p.mu_hat / p.lambda_arr, l + 1), excess)
    };
    passive / (passive + tail)
}

/// One row of a birth–death transition kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelRow {
    pub down: f64,
    pub stay: f64,
    pub up: f64,
}

impl KernelRow {
    pub fn sum(&self) -> f64 {
        self.down + self.stay + self.up
    }
}

/// Transition kernel of the uniformized chain under a fixed action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    pub interior: KernelRow,
    pub at_zero: KernelRow,
}

impl Kernel {
    pub fn row(&self, x: usize) -> KernelRow {
        if x == 0 {
            self.at_zero
        } else {
            self.interior
        }
    }

    /// E[V(next) | x] with `v` indexed by state; the up move out of the last
    /// state of `v` is folded into the self-loop.
    pub fn expect(&self, v: &[f64], x: usize) -> f64 {
        let r = self.row(x);
        let last = v.len() - 1;
        let up_state = if x < last { x + 1 } else { last };
        let down = if x > 0 { r.down * v[x - 1] } else { 0.0 };
        down + r.stay * v[x] + r.up * v[up_state]
    }
}

/// Passive kernel p1 (server k idle for this file) and active kernel p2.
pub fn kernels(params: &PairParameters) -> (Kernel, Kernel) {
    let l = params.lambda_arr;
    let at_zero = KernelRow {
        down: 0.0,
        stay: 1.0 - l,
        up: l,
    };
    let passive = KernelRow {
        down: params.mu_hat,
        stay: 1.0 - l - params.mu_hat,
        up: l,
    };
    let active = KernelRow {
        down: params.mu_hat + params.mu_k,
        stay: 1.0 - l - params.mu_hat - params.mu_k,
        up: l,
    };
    (
        Kernel {
            interior: passive,
            at_zero,
        },
        Kernel {
            interior: active,
            at_zero,
        },
    )
}
