//! Exactly optimal allocation for small networks by relative value iteration
//! on the uniformized joint chain with buffer B per queue.
//!
//! With corner controls (each server serves one of its files at full rate)
//! the expected next value separates over servers:
//!
//! ```text
//! E^u[h | x] = Σ_i a_i h(x + e_i) + Σ_j m_j h(x − e_{u_j}) + (1 − Σa − Σm) h(x)
//! ```
//!
//! so the minimizing control is found server by server. Arrivals to a full
//! queue become self-loops; a server with no nonempty file idles.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{NetworkTopology, DEFAULT_EPSILON};
use crate::report::fmt12;

use super::{Allocation, SystemState};

/// Largest joint state space the solver accepts.
pub const STATE_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalOptions {
    /// Buffer size B of every queue.
    pub buffer: u32,
    /// Stop once span(W_{n+1} − h_n) falls below this.
    pub tol: f64,
    pub max_sweeps: usize,
    pub epsilon: f64,
}

impl Default for OptimalOptions {
    fn default() -> Self {
        Self {
            buffer: 60,
            tol: 1e-8,
            max_sweeps: 1_000_000,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPolicy {
    buffer: u32,
    num_files: usize,
    num_servers: usize,
    /// File chosen by each server in each joint state (0 = idle), row-major
    /// with servers fastest.
    choices: Vec<u16>,
    /// Relative values h with h(0) = 0.
    pub values: Vec<f64>,
    /// Average cost per unit time.
    pub average_cost: f64,
    pub sweeps: usize,
    pub span: f64,
}

struct Layout {
    base: usize,
    strides: Vec<usize>,
    states: usize,
}

impl Layout {
    /// File 1 is the most significant digit, so states enumerate in
    /// lexicographic order of (x_1, ..., x_N).
    fn new(num_files: usize, buffer: u32) -> Self {
        let base = buffer as usize + 1;
        let mut strides = vec![1; num_files];
        for i in (0..num_files.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * base;
        }
        let states = strides.first().map_or(1, |s| s * base);
        Self {
            base,
            strides,
            states,
        }
    }

    fn coord(&self, state: usize, i: usize) -> usize {
        (state / self.strides[i]) % self.base
    }
}

fn state_count(num_files: usize, buffer: u32) -> u128 {
    (u128::from(buffer) + 1)
        .checked_pow(num_files as u32)
        .unwrap_or(u128::MAX)
}

/// Relative value iteration W_{n+1}(x) = Σ_i f_i(x_i) + min_u E^u[h_n | x],
/// h_{n+1} = W_{n+1} − W_{n+1}(0).
pub fn optimal_policy_vi(
    topology: &NetworkTopology,
    opts: &OptimalOptions,
) -> Result<OptimalPolicy> {
    if opts.buffer == 0 {
        return Err(Error::InvalidArgument("buffer must be positive".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    if !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        return Err(Error::InvalidArgument("epsilon must lie in (0, 1)".into()));
    }
    if topology.num_files() > u16::MAX as usize {
        return Err(Error::InvalidArgument("too many files".into()));
    }
    let n = topology.num_files();
    let states = state_count(n, opts.buffer);
    if states > STATE_LIMIT {
        return Err(Error::StateSpaceTooLarge {
            states,
            limit: STATE_LIMIT,
        });
    }
    let layout = Layout::new(n, opts.buffer);
    let b = opts.buffer as usize;

    let total: f64 = topology.files().iter().map(|f| f.arrival_rate).sum::<f64>()
        + topology.servers().iter().map(|s| s.capacity).sum::<f64>();
    let scale = total / (1.0 - opts.epsilon);
    let arrive: Vec<f64> = topology
        .files()
        .iter()
        .map(|f| f.arrival_rate / scale)
        .collect();
    let serve: Vec<f64> = topology
        .servers()
        .iter()
        .map(|s| s.capacity / scale)
        .collect();
    let stay = 1.0 - arrive.iter().sum::<f64>() - serve.iter().sum::<f64>();

    let cost: Vec<f64> = (0..layout.states)
        .map(|s| {
            topology
                .files()
                .iter()
                .enumerate()
                .map(|(i, f)| f.cost.eval(layout.coord(s, i) as u32))
                .sum()
        })
        .collect();

    let backup = |h: &[f64], s: usize| -> f64 {
        let mut acc = cost[s] + stay * h[s];
        for (i, &a) in arrive.iter().enumerate() {
            let up = if layout.coord(s, i) < b {
                s + layout.strides[i]
            } else {
                s
            };
            acc += a * h[up];
        }
        for (j, &m) in serve.iter().enumerate() {
            let best = topology
                .files_on(j + 1)
                .iter()
                .filter(|&&f| layout.coord(s, f - 1) > 0)
                .map(|&f| h[s - layout.strides[f - 1]])
                .fold(h[s], |acc, v| if v < acc { v } else { acc });
            acc += m * best;
        }
        acc
    };

    let mut h = vec![0.0; layout.states];
    let mut w = vec![0.0; layout.states];
    let mut span = f64::INFINITY;
    let mut bounds = (0.0, 0.0);
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        w.par_iter_mut()
            .enumerate()
            .for_each(|(s, out)| *out = backup(&h, s));
        let (lo, hi) = w
            .par_iter()
            .zip(h.par_iter())
            .map(|(a, b)| (a - b, a - b))
            .reduce(
                || (f64::INFINITY, f64::NEG_INFINITY),
                |x, y| (x.0.min(y.0), x.1.max(y.1)),
            );
        span = hi - lo;
        bounds = (lo, hi);
        let w0 = w[0];
        h.par_iter_mut()
            .zip(w.par_iter())
            .for_each(|(hv, wv)| *hv = wv - w0);
        if span < opts.tol {
            break;
        }
    }
    if !(span < opts.tol) {
        return Err(Error::ValueIterationNoConvergence { sweeps, span });
    }

    let m = topology.num_servers();
    let mut choices = vec![0u16; layout.states * m];
    choices.par_chunks_mut(m).enumerate().for_each(|(s, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for &f in topology.files_on(j + 1) {
                if layout.coord(s, f - 1) == 0 {
                    continue;
                }
                let v = h[s - layout.strides[f - 1]];
                let tol = 1e-12 * (1.0 + v.abs());
                if best.is_none_or(|(_, bv)| v < bv - tol) {
                    best = Some((f, v));
                }
            }
            *slot = best.map_or(0, |(f, _)| f as u16);
        }
    });

    Ok(OptimalPolicy {
        buffer: opts.buffer,
        num_files: n,
        num_servers: m,
        choices,
        values: h,
        average_cost: 0.5 * (bounds.0 + bounds.1),
        sweeps,
        span,
    })
}

impl OptimalPolicy {
    pub fn buffer(&self) -> u32 {
        self.buffer
    }

    pub fn num_states(&self) -> usize {
        self.values.len()
    }

    /// Joint-state position of `state`, with queues above the buffer clamped.
    pub fn state_index(&self, state: &SystemState) -> usize {
        state.queue_lengths.iter().fold(0, |acc, &x| {
            acc * (self.buffer as usize + 1) + x.min(self.buffer) as usize
        })
    }

    /// File served by `server` in `state`, or `None` when it idles.
    pub fn choice(&self, state: &SystemState, server: usize) -> Option<usize> {
        let c = self.choices[self.state_index(state) * self.num_servers + server - 1];
        (c > 0).then_some(c as usize)
    }

    pub fn value(&self, state: &SystemState) -> f64 {
        self.values[self.state_index(state)]
    }

    pub(super) fn decide_into(
        &self,
        topology: &NetworkTopology,
        state: &SystemState,
        out: &mut Allocation,
    ) {
        out.clear();
        let row = self.state_index(state) * self.num_servers;
        for s in topology.servers() {
            let c = self.choices[row + s.id - 1] as usize;
            if c > 0 {
                out.set(topology, c, s.id, s.capacity);
            }
        }
    }

    /// CSV keyed by joint state: x1..xN, the file chosen by each server
    /// (0 = idle) and the relative value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.num_files).map(|i| format!("x{i}")).collect();
        header.extend((1..=self.num_servers).map(|j| format!("server{j}")));
        header.push("value".into());
        w.write_record(&header)?;
        let base = self.buffer as usize + 1;
        let mut coords = vec![0usize; self.num_files];
        for s in 0..self.num_states() {
            let mut rest = s;
            for c in coords.iter_mut().rev() {
                *c = rest % base;
                rest /= base;
            }
            let mut record: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
            let row = &self.choices[s * self.num_servers..(s + 1) * self.num_servers];
            record.extend(row.iter().map(|c| c.to_string()));
            record.push(fmt12(self.values[s]));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}
