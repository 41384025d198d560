//! Allocation policies: the index policy, the heuristics used as baselines and
//! the exactly optimal policy of a small network.
//!
//! Every policy works per server and only ever gives capacity to nonempty
//! queues. Ties go to the lowest file id.

mod optimal;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::index::IndexTable;
use crate::model::NetworkTopology;

pub use optimal::{optimal_policy_vi, OptimalOptions, OptimalPolicy, STATE_LIMIT};

/// Queue length of every file, indexed by file id − 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub queue_lengths: Vec<u32>,
}

impl SystemState {
    pub fn new(queue_lengths: Vec<u32>) -> Self {
        Self { queue_lengths }
    }

    pub fn empty(num_files: usize) -> Self {
        Self::new(vec![0; num_files])
    }

    /// Queue length of file `file` (1-based).
    pub fn get(&self, file: usize) -> u32 {
        self.queue_lengths[file - 1]
    }

    pub fn total(&self) -> u64 {
        self.queue_lengths.iter().map(|&x| u64::from(x)).sum()
    }
}

/// Transmission rate ξ^{ij} of every edge, in `NetworkTopology::edges` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    rates: Vec<f64>,
}

impl Allocation {
    pub fn zero(topology: &NetworkTopology) -> Self {
        Self {
            rates: vec![0.0; topology.num_edges()],
        }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, topology: &NetworkTopology, file: usize, server: usize) -> f64 {
        topology
            .edge_position(file, server)
            .map_or(0.0, |p| self.rates[p])
    }

    fn clear(&mut self) {
        self.rates.iter_mut().for_each(|r| *r = 0.0);
    }

    fn set(&mut self, topology: &NetworkTopology, file: usize, server: usize, rate: f64) {
        let p = topology
            .edge_position(file, server)
            .expect("allocation on an edge outside the topology");
        self.rates[p] = rate;
    }

    /// Pooled service rate Σ_j ξ^{ij} of every file.
    pub fn file_rates(&self, topology: &NetworkTopology) -> Vec<f64> {
        let mut out = vec![0.0; topology.num_files()];
        self.file_rates_into(topology, &mut out);
        out
    }

    pub fn file_rates_into(&self, topology: &NetworkTopology, out: &mut [f64]) {
        out.iter_mut().for_each(|r| *r = 0.0);
        for ((file, _), rate) in topology.edges().zip(&self.rates) {
            out[file - 1] += rate;
        }
    }

    pub fn to_map(&self, topology: &NetworkTopology) -> BTreeMap<(usize, usize), f64> {
        topology.edges().zip(self.rates.iter().copied()).collect()
    }

    /// Checks the per-server capacity constraint and that empty queues get no
    /// service. Returns a description of the first violation.
    pub fn check(
        &self,
        topology: &NetworkTopology,
        state: &SystemState,
    ) -> std::result::Result<(), String> {
        if self.rates.len() != topology.num_edges() {
            return Err(format!(
                "allocation has {} rates for {} edges",
                self.rates.len(),
                topology.num_edges()
            ));
        }
        let mut used = vec![0.0; topology.num_servers()];
        for ((file, server), &rate) in topology.edges().zip(&self.rates) {
            if !(rate >= 0.0) {
                return Err(format!("negative rate {rate} on edge ({file}, {server})"));
            }
            if rate > 0.0 && state.get(file) == 0 {
                return Err(format!("empty file {file} served by server {server}"));
            }
            used[server - 1] += rate;
        }
        for s in topology.servers() {
            if used[s.id - 1] > s.capacity + 1e-12 {
                return Err(format!(
                    "server {} allocates {} above capacity {}",
                    s.id,
                    used[s.id - 1],
                    s.capacity
                ));
            }
        }
        Ok(())
    }
}

fn nonempty<'a>(
    topology: &'a NetworkTopology,
    state: &'a SystemState,
    server: usize,
) -> impl Iterator<Item = usize> + 'a {
    topology
        .files_on(server)
        .iter()
        .copied()
        .filter(move |&i| state.get(i) > 0)
}

fn whittle_into(
    topology: &NetworkTopology,
    state: &SystemState,
    table: &IndexTable,
    out: &mut Allocation,
) -> Result<()> {
    out.clear();
    for s in topology.servers() {
        let mut best: Option<(usize, f64)> = None;
        for file in nonempty(topology, state, s.id) {
            let v = table.lookup(file, s.id, state.get(file))?;
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((file, v));
            }
        }
        if let Some((file, _)) = best {
            out.set(topology, file, s.id, s.capacity);
        }
    }
    Ok(())
}

fn proportional_into(
    topology: &NetworkTopology,
    state: &SystemState,
    weight: impl Fn(usize) -> f64,
    out: &mut Allocation,
) {
    out.clear();
    for s in topology.servers() {
        let total: f64 = nonempty(topology, state, s.id).map(&weight).sum();
        if total > 0.0 {
            for file in nonempty(topology, state, s.id) {
                out.set(topology, file, s.id, s.capacity * weight(file) / total);
            }
        }
    }
}

fn random_into<R: Rng + ?Sized>(
    topology: &NetworkTopology,
    state: &SystemState,
    rng: &mut R,
    out: &mut Allocation,
) {
    out.clear();
    let mut candidates = Vec::new();
    for s in topology.servers() {
        candidates.clear();
        candidates.extend(nonempty(topology, state, s.id));
        let pick = match candidates.len() {
            0 => continue,
            1 => candidates[0],
            n => candidates[rng.random_range(0..n)],
        };
        out.set(topology, pick, s.id, s.capacity);
    }
}

fn max_weight_into(topology: &NetworkTopology, state: &SystemState, out: &mut Allocation) {
    out.clear();
    for s in topology.servers() {
        let mut best: Option<usize> = None;
        for file in nonempty(topology, state, s.id) {
            if best.is_none_or(|b| state.get(file) > state.get(b)) {
                best = Some(file);
            }
        }
        if let Some(file) = best {
            out.set(topology, file, s.id, s.capacity);
        }
    }
}

/// Each server serves, at full rate, its nonempty file with the smallest index.
pub fn whittle_decide(
    state: &SystemState,
    table: &IndexTable,
    topology: &NetworkTopology,
) -> Result<Allocation> {
    let mut out = Allocation::zero(topology);
    whittle_into(topology, state, table, &mut out)?;
    Ok(out)
}

/// Each server splits its capacity equally over its nonempty files.
pub fn uniform_decide(state: &SystemState, topology: &NetworkTopology) -> Allocation {
    let mut out = Allocation::zero(topology);
    proportional_into(topology, state, |_| 1.0, &mut out);
    out
}

/// Each server splits its capacity over its nonempty files in proportion to
/// their arrival rates.
pub fn weighted_decide(state: &SystemState, topology: &NetworkTopology) -> Allocation {
    let mut out = Allocation::zero(topology);
    proportional_into(topology, state, |i| topology.file(i).arrival_rate, &mut out);
    out
}

/// Each server serves one of its nonempty files, chosen uniformly at random.
pub fn random_decide<R: Rng + ?Sized>(
    state: &SystemState,
    topology: &NetworkTopology,
    rng: &mut R,
) -> Allocation {
    let mut out = Allocation::zero(topology);
    random_into(topology, state, rng, &mut out);
    out
}

/// Each server serves its longest queue.
pub fn max_weight_decide(state: &SystemState, topology: &NetworkTopology) -> Allocation {
    let mut out = Allocation::zero(topology);
    max_weight_into(topology, state, &mut out);
    out
}

/// Policy names accepted in scenarios and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Whittle,
    Uniform,
    Weighted,
    Random,
    MaxWeight,
    Optimal,
}

/// Reserved for the balanced-fairness baseline, which is not implemented.
pub const RESERVED_POLICY: &str = "balanced_fair";

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Whittle,
        PolicyKind::Uniform,
        PolicyKind::Weighted,
        PolicyKind::Random,
        PolicyKind::MaxWeight,
        PolicyKind::Optimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Whittle => "whittle",
            PolicyKind::Uniform => "uniform",
            PolicyKind::Weighted => "weighted",
            PolicyKind::Random => "random",
            PolicyKind::MaxWeight => "max_weight",
            PolicyKind::Optimal => "optimal",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == RESERVED_POLICY {
            return Err(Error::UnsupportedPolicy(s.to_string()));
        }
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub enum Policy {
    Whittle(IndexTable),
    Uniform,
    Weighted,
    Random,
    MaxWeight,
    Optimal(OptimalPolicy),
}

impl Policy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Whittle(_) => PolicyKind::Whittle,
            Policy::Uniform => PolicyKind::Uniform,
            Policy::Weighted => PolicyKind::Weighted,
            Policy::Random => PolicyKind::Random,
            Policy::MaxWeight => PolicyKind::MaxWeight,
            Policy::Optimal(_) => PolicyKind::Optimal,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    /// Writes the allocation for `state` into `out`, reusing its storage.
    /// Only the random policy draws from `rng`.
    pub fn decide_into<R: Rng + ?Sized>(
        &self,
        topology: &NetworkTopology,
        state: &SystemState,
        rng: &mut R,
        out: &mut Allocation,
    ) -> Result<()> {
        match self {
            Policy::Whittle(table) => whittle_into(topology, state, table, out)?,
            Policy::Uniform => proportional_into(topology, state, |_| 1.0, out),
            Policy::Weighted => {
                proportional_into(topology, state, |i| topology.file(i).arrival_rate, out)
            }
            Policy::Random => random_into(topology, state, rng, out),
            Policy::MaxWeight => max_weight_into(topology, state, out),
            Policy::Optimal(opt) => opt.decide_into(topology, state, out),
        }
        Ok(())
    }

    pub fn decide<R: Rng + ?Sized>(
        &self,
        topology: &NetworkTopology,
        state: &SystemState,
        rng: &mut R,
    ) -> Result<Allocation> {
        let mut out = Allocation::zero(topology);
        self.decide_into(topology, state, rng, &mut out)?;
        Ok(out)
    }
}
