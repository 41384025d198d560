//! Event-driven simulation of the cluster at the level of queue counts.
//!
//! Each file has its own arrival stream and its own job-size stream. The job
//! at the head of file i carries a unit-mean exponential amount of work that
//! drains at the pooled rate Σ_j ξ^{ij}; because work is memoryless this is
//! the same process as racing exponential clocks, but every policy sees the
//! same arrival epochs and the same job sizes, which is what keeps policy
//! comparisons synchronized.

mod estimate;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::NetworkTopology;
use crate::policy::{Allocation, Policy, SystemState};

pub use estimate::{compare, CostEstimate, Difference, PolicyComparison};

/// Fraction of the horizon discarded as warmup unless set explicitly.
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    /// Cost is integrated over [warmup, horizon].
    pub warmup: f64,
    pub seed: u64,
    pub replications: usize,
    /// Defaults to all queues empty.
    pub initial_state: Option<SystemState>,
    /// Keep every event and every allocation in the trace.
    pub record: bool,
}

impl SimConfig {
    pub fn new(horizon: f64, seed: u64, replications: usize) -> Self {
        Self {
            horizon,
            warmup: DEFAULT_WARMUP_FRACTION * horizon,
            seed,
            replications,
            initial_state: None,
            record: false,
        }
    }

    pub fn validate(&self, topology: &NetworkTopology) -> Result<()> {
        if !(self.horizon.is_finite() && self.warmup >= 0.0 && self.horizon > self.warmup) {
            return Err(Error::InvalidArgument(format!(
                "need horizon > warmup >= 0, got horizon {} and warmup {}",
                self.horizon, self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument(
                "replications must be at least 1".into(),
            ));
        }
        if let Some(s) = &self.initial_state {
            if s.queue_lengths.len() != topology.num_files() {
                return Err(Error::InvalidArgument(format!(
                    "initial state has {} queues for {} files",
                    s.queue_lengths.len(),
                    topology.num_files()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Arrival(usize),
    Departure(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    /// Queue lengths right after the event.
    pub state: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub replication: usize,
    /// Empty unless `SimConfig::record` is set.
    pub events: Vec<Event>,
    /// (epoch time, allocation in force from then on); empty unless recording.
    pub allocations: Vec<(f64, Allocation)>,
    pub initial_state: SystemState,
    pub final_state: SystemState,
    pub arrivals: Vec<u64>,
    pub departures: Vec<u64>,
    pub num_events: u64,
    /// ∫ Σ_i f_i(X_i(t)) dt over [warmup, horizon].
    pub integrated_cost: f64,
    /// horizon − warmup.
    pub observed_time: f64,
}

impl SimTrace {
    pub fn average_cost(&self) -> f64 {
        self.integrated_cost / self.observed_time
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub traces: Vec<SimTrace>,
    pub estimate: CostEstimate,
}

const POLICY_STREAM: u64 = u64::MAX;

fn replication_key(seed: u64, replication: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        ^ (replication as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(key: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(id);
    rng
}

/// Simulates one replication. The random streams depend only on the seed,
/// the replication number and the file, never on the policy.
pub fn run_replication(
    topology: &NetworkTopology,
    policy: &Policy,
    config: &SimConfig,
    replication: usize,
) -> Result<SimTrace> {
    config.validate(topology)?;
    let n = topology.num_files();
    let key = replication_key(config.seed, replication);
    let mut arrival_rng: Vec<ChaCha8Rng> = (0..n).map(|i| stream(key, 2 * i as u64)).collect();
    let mut work_rng: Vec<ChaCha8Rng> = (0..n).map(|i| stream(key, 2 * i as u64 + 1)).collect();
    let mut policy_rng = stream(key, POLICY_STREAM);
    let gaps: Vec<Option<Exp<f64>>> = topology
        .files()
        .iter()
        .map(|f| {
            (f.arrival_rate > 0.0)
                .then(|| Exp::new(f.arrival_rate))
                .transpose()
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidArgument(format!("arrival rate: {e}")))?;

    let initial = config
        .initial_state
        .clone()
        .unwrap_or_else(|| SystemState::empty(n));
    let mut state = initial.clone();
    let mut next_arrival: Vec<f64> = gaps
        .iter()
        .zip(arrival_rng.iter_mut())
        .map(|(g, rng)| g.map_or(f64::INFINITY, |d| rng.sample(d)))
        .collect();
    let mut work: Vec<f64> = (0..n)
        .map(|i| {
            if state.queue_lengths[i] > 0 {
                work_rng[i].sample(Exp1)
            } else {
                0.0
            }
        })
        .collect();
    let mut cost_terms: Vec<f64> = topology
        .files()
        .iter()
        .zip(&state.queue_lengths)
        .map(|(f, &x)| f.cost.eval(x))
        .collect();

    let mut alloc = Allocation::zero(topology);
    let mut rates = vec![0.0; n];
    let mut trace = SimTrace {
        replication,
        events: Vec::new(),
        allocations: Vec::new(),
        initial_state: initial,
        final_state: SystemState::empty(n),
        arrivals: vec![0; n],
        departures: vec![0; n],
        num_events: 0,
        integrated_cost: 0.0,
        observed_time: config.horizon - config.warmup,
    };
    let mut t = 0.0;
    loop {
        policy.decide_into(topology, &state, &mut policy_rng, &mut alloc)?;
        alloc.file_rates_into(topology, &mut rates);
        if config.record {
            trace.allocations.push((t, alloc.clone()));
        }

        // Arrivals before departures, then lowest file id, on equal times.
        let mut next = (f64::INFINITY, None);
        for (i, &ta) in next_arrival.iter().enumerate() {
            if ta < next.0 {
                next = (ta, Some(EventKind::Arrival(i + 1)));
            }
        }
        for i in 0..n {
            if state.queue_lengths[i] > 0 && rates[i] > 0.0 {
                let td = t + work[i] / rates[i];
                if td < next.0 {
                    next = (td, Some(EventKind::Departure(i + 1)));
                }
            }
        }
        let end = next.0.min(config.horizon);
        let lo = t.max(config.warmup);
        if end > lo {
            trace.integrated_cost += cost_terms.iter().sum::<f64>() * (end - lo);
        }
        let kind = match next.1 {
            Some(k) if next.0 <= config.horizon => k,
            _ => break,
        };
        let dt = next.0 - t;
        for i in 0..n {
            if state.queue_lengths[i] > 0 {
                work[i] = (work[i] - rates[i] * dt).max(0.0);
            }
        }
        t = next.0;
        match kind {
            EventKind::Arrival(file) => {
                let i = file - 1;
                state.queue_lengths[i] += 1;
                if state.queue_lengths[i] == 1 {
                    work[i] = work_rng[i].sample(Exp1);
                }
                if let Some(d) = gaps[i] {
                    next_arrival[i] = t + arrival_rng[i].sample(d);
                }
                trace.arrivals[i] += 1;
            }
            EventKind::Departure(file) => {
                let i = file - 1;
                state.queue_lengths[i] -= 1;
                work[i] = if state.queue_lengths[i] > 0 {
                    work_rng[i].sample(Exp1)
                } else {
                    0.0
                };
                trace.departures[i] += 1;
            }
        }
        let i = match kind {
            EventKind::Arrival(f) | EventKind::Departure(f) => f - 1,
        };
        cost_terms[i] = topology.file(i + 1).cost.eval(state.queue_lengths[i]);
        trace.num_events += 1;
        if config.record {
            trace.events.push(Event {
                time: t,
                kind,
                state: state.queue_lengths.clone(),
            });
        }
    }
    trace.final_state = state;
    Ok(trace)
}

/// Runs every replication (in parallel) and aggregates the time-average costs.
pub fn run(topology: &NetworkTopology, policy: &Policy, config: &SimConfig) -> Result<SimOutcome> {
    config.validate(topology)?;
    let traces: Vec<SimTrace> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(topology, policy, config, r))
        .collect::<Result<_>>()?;
    let estimate = CostEstimate::from_samples(traces.iter().map(SimTrace::average_cost).collect());
    Ok(SimOutcome { traces, estimate })
}
