use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::NetworkTopology;
use crate::policy::Policy;

use super::{run_replication, SimConfig, SimTrace};

/// Mean over replications with a 95% Student-t half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    /// `None` with a single replication.
    pub ci_halfwidth: Option<f64>,
    pub per_replication: Vec<f64>,
}

impl CostEstimate {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let ci_halfwidth = (n >= 2).then(|| {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .expect("positive degrees of freedom")
                .inverse_cdf(0.975);
            t * (var / n as f64).sqrt()
        });
        Self {
            mean,
            ci_halfwidth,
            per_replication: samples,
        }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.ci_halfwidth.unwrap_or(0.0)
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_halfwidth.unwrap_or(0.0)
    }

    /// The confidence interval lies strictly below zero.
    pub fn significantly_negative(&self) -> bool {
        self.ci_halfwidth.is_some() && self.upper() < 0.0
    }
}

/// Replication-wise difference `first − second` of two policies' costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Difference {
    pub first: usize,
    pub second: usize,
    pub estimate: CostEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyComparison {
    pub names: Vec<&'static str>,
    pub estimates: Vec<CostEstimate>,
    /// Every ordered pair i < j.
    pub differences: Vec<Difference>,
}

impl PolicyComparison {
    pub fn difference(&self, first: usize, second: usize) -> Option<&Difference> {
        self.differences
            .iter()
            .find(|d| d.first == first && d.second == second)
    }
}

/// Simulates every policy on the same replications. Replication r of every
/// policy uses the same arrival and job-size streams.
pub fn compare(
    topology: &NetworkTopology,
    policies: &[Policy],
    config: &SimConfig,
) -> Result<PolicyComparison> {
    if policies.len() < 2 {
        return Err(Error::InvalidArgument(
            "comparison needs at least two policies".into(),
        ));
    }
    config.validate(topology)?;
    let reps = config.replications;
    let costs: Vec<f64> = (0..policies.len() * reps)
        .into_par_iter()
        .map(|k| {
            run_replication(topology, &policies[k / reps], config, k % reps)
                .map(|t: SimTrace| t.average_cost())
        })
        .collect::<Result<_>>()?;
    let per_policy: Vec<&[f64]> = costs.chunks(reps).collect();
    let estimates = per_policy
        .iter()
        .map(|c| CostEstimate::from_samples(c.to_vec()))
        .collect();
    let mut differences = Vec::new();
    for i in 0..policies.len() {
        for j in i + 1..policies.len() {
            let diff = per_policy[i]
                .iter()
                .zip(per_policy[j])
                .map(|(a, b)| a - b)
                .collect();
            differences.push(Difference {
                first: i,
                second: j,
                estimate: CostEstimate::from_samples(diff),
            });
        }
    }
    Ok(PolicyComparison {
        names: policies.iter().map(Policy::name).collect(),
        estimates,
        differences,
    })
}
