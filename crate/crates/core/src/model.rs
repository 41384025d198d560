//! Static problem data: files, servers, the bipartite placement graph and the
//! per-(file, server) uniformized parameters used by the decoupled problems.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Default lower bound on the uniformized self-loop probability.
pub const DEFAULT_EPSILON: f64 = 0.05;

/// Holding cost f(x) for x jobs in a queue.
#[derive(Debug, Clone, PartialEq)]
pub enum CostFunction {
    /// f(x) = c x
    Linear(f64),
    /// f(x) = a x^2 + b x
    Quadratic(f64, f64),
    /// f(x) = values[x]; beyond the table the last increment is continued.
    Tabulated(Vec<f64>),
}

impl CostFunction {
    pub fn eval(&self, x: u32) -> f64 {
        let xf = f64::from(x);
        match self {
            CostFunction::Linear(c) => c * xf,
            CostFunction::Quadratic(a, b) => a * xf * xf + b * xf,
            CostFunction::Tabulated(values) => {
                let n = values.len();
                let x = x as usize;
                if x < n {
                    values[x]
                } else if n >= 2 {
                    let step = values[n - 1] - values[n - 2];
                    values[n - 1] + step * (x - (n - 1)) as f64
                } else {
                    values.first().copied().unwrap_or(0.0)
                }
            }
        }
    }

    /// The same cost multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> CostFunction {
        match self {
            CostFunction::Linear(c) => CostFunction::Linear(c * factor),
            CostFunction::Quadratic(a, b) => CostFunction::Quadratic(a * factor, b * factor),
            CostFunction::Tabulated(v) => {
                CostFunction::Tabulated(v.iter().map(|y| y * factor).collect())
            }
        }
    }

    pub fn is_strictly_convex(&self) -> bool {
        match self {
            CostFunction::Linear(_) => false,
            CostFunction::Quadratic(a, _) => *a > 0.0,
            CostFunction::Tabulated(v) => v.windows(3).all(|w| w[2] - w[1] > w[1] - w[0]),
        }
    }

    /// Checks convexity and monotonicity on 0..=bound. Returns a description of
    /// the first failure.
    pub fn check_shape(&self, bound: u32) -> std::result::Result<(), String> {
        if let CostFunction::Tabulated(values) = self {
            if values.len() < bound as usize + 1 {
                return Err(format!(
                    "tabulated cost has {} entries but must cover 0..={bound}",
                    values.len()
                ));
            }
            let n = values.len();
            if n < 2 || values[n - 1] <= values[n - 2] {
                return Err("tabulated cost must have a strictly increasing tail".into());
            }
        }
        let tol = 1e-12;
        let mut prev_inc = None;
        for x in 0..bound {
            let inc = self.eval(x + 1) - self.eval(x);
            let scale = 1.0 + self.eval(x + 1).abs();
            if inc < -tol * scale {
                return Err(format!("cost decreases between {x} and {}", x + 1));
            }
            if let Some(p) = prev_inc {
                if inc < p - tol * scale {
                    return Err(format!("cost is not convex at {x}"));
                }
            }
            prev_inc = Some(inc);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileType {
    pub id: usize,
    /// Poisson request rate.
    pub arrival_rate: f64,
    pub cost: CostFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Server {
    pub id: usize,
    /// Maximum total transmission rate.
    pub capacity: f64,
}

/// Bipartite file/server placement graph. File and server ids are 1-based and
/// contiguous; the adjacency lists are sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    files: Vec<FileType>,
    servers: Vec<Server>,
    edges: BTreeSet<(usize, usize)>,
    edge_list: Vec<(usize, usize)>,
    servers_of: Vec<Vec<usize>>,
    files_on: Vec<Vec<usize>>,
}

impl NetworkTopology {
    pub fn new(
        mut files: Vec<FileType>,
        mut servers: Vec<Server>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        files.sort_by_key(|f| f.id);
        servers.sort_by_key(|s| s.id);
        for (pos, f) in files.iter().enumerate() {
            if f.id != pos + 1 {
                return Err(Error::Topology(format!(
                    "file ids must be unique and contiguous from 1; found id {} at position {}",
                    f.id,
                    pos + 1
                )));
            }
        }
        for (pos, s) in servers.iter().enumerate() {
            if s.id != pos + 1 {
                return Err(Error::Topology(format!(
                    "server ids must be unique and contiguous from 1; found id {} at position {}",
                    s.id,
                    pos + 1
                )));
            }
        }
        let mut set = BTreeSet::new();
        let mut servers_of = vec![Vec::new(); files.len()];
        let mut files_on = vec![Vec::new(); servers.len()];
        for (file, server) in edges {
            if file == 0 || file > files.len() {
                return Err(Error::Topology(format!(
                    "edge references unknown file {file}"
                )));
            }
            if server == 0 || server > servers.len() {
                return Err(Error::Topology(format!(
                    "edge references unknown server {server}"
                )));
            }
            if !set.insert((file, server)) {
                return Err(Error::Topology(format!(
                    "duplicate edge (file {file}, server {server})"
                )));
            }
            servers_of[file - 1].push(server);
            files_on[server - 1].push(file);
        }
        servers_of.iter_mut().for_each(|v| v.sort_unstable());
        files_on.iter_mut().for_each(|v| v.sort_unstable());
        Ok(Self {
            files,
            servers,
            edge_list: set.iter().copied().collect(),
            edges: set,
            servers_of,
            files_on,
        })
    }

    pub fn files(&self) -> &[FileType] {
        &self.files
    }

    pub fn servers(&self) -> &[Server] {
        &self.servers
    }

    pub fn num_files(&self) -> usize {
        self.files.len()
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    /// Edges as (file id, server id), ordered by file then server.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Position of the edge in `edges()` order.
    pub fn edge_position(&self, file: usize, server: usize) -> Option<usize> {
        self.edge_list.binary_search(&(file, server)).ok()
    }

    pub fn has_edge(&self, file: usize, server: usize) -> bool {
        self.edges.contains(&(file, server))
    }

    pub fn file(&self, id: usize) -> &FileType {
        &self.files[id - 1]
    }

    pub fn server(&self, id: usize) -> &Server {
        &self.servers[id - 1]
    }

    /// S_i: servers holding file `file`.
    pub fn servers_of(&self, file: usize) -> &[usize] {
        &self.servers_of[file - 1]
    }

    /// F_j: files stored on server `server`.
    pub fn files_on(&self, server: usize) -> &[usize] {
        &self.files_on[server - 1]
    }

    /// Σ_{j ∈ S_i} μ_j
    pub fn pooled_capacity(&self, file: usize) -> f64 {
        self.servers_of(file)
            .iter()
            .map(|&j| self.server(j).capacity)
            .sum()
    }

    /// Same graph and costs with every rate multiplied by `factor`.
    pub fn with_rates_scaled(&self, factor: f64) -> NetworkTopology {
        let mut out = self.clone();
        out.files.iter_mut().for_each(|f| f.arrival_rate *= factor);
        out.servers.iter_mut().for_each(|s| s.capacity *= factor);
        out
    }

    /// Checks the modelling assumptions. Only the local inequality
    /// Σ_{j∈S_i} μ_j > Λ^i is checked; existence of a finite-cost stationary
    /// policy is not machine-checkable in general.
    pub fn validate(&self, cost_bound: u32) -> ValidationReport {
        let mut violations = Vec::new();
        if self.edges.is_empty() {
            violations.push(Violation::new(
                ViolationKind::NoEdges,
                "topology has no edges",
            ));
        }
        for f in &self.files {
            if !(f.arrival_rate > 0.0 && f.arrival_rate.is_finite()) {
                violations.push(Violation::new(
                    ViolationKind::NonPositiveArrivalRate { file: f.id },
                    format!("file {}: arrival rate {} is not > 0", f.id, f.arrival_rate),
                ));
            }
            if self.servers_of(f.id).is_empty() {
                violations.push(Violation::new(
                    ViolationKind::UnservedFile { file: f.id },
                    format!("file {}: unserved file (no server stores it)", f.id),
                ));
            }
            let pooled = self.pooled_capacity(f.id);
            if pooled <= f.arrival_rate {
                violations.push(Violation::new(
                    ViolationKind::LocalStability { file: f.id },
                    format!(
                        "file {}: Σμ > Λ fails ({} <= {})",
                        f.id, pooled, f.arrival_rate
                    ),
                ));
            }
            if let Err(msg) = f.cost.check_shape(cost_bound) {
                violations.push(Violation::new(
                    ViolationKind::CostShape { file: f.id },
                    format!("file {}: {msg}", f.id),
                ));
            }
        }
        for s in &self.servers {
            if !(s.capacity > 0.0 && s.capacity.is_finite()) {
                violations.push(Violation::new(
                    ViolationKind::NonPositiveCapacity { server: s.id },
                    format!("server {}: capacity {} is not > 0", s.id, s.capacity),
                ));
            }
        }
        ValidationReport { violations }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NoEdges,
    NonPositiveArrivalRate { file: usize },
    NonPositiveCapacity { server: usize },
    UnservedFile { file: usize },
    LocalStability { file: usize },
    CostShape { file: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                writeln!(f)?;
            }
            write!(f, "{}", v.message)?;
        }
        Ok(())
    }
}

/// Uniformized rates of one decoupled (file i, server k) problem: every other
/// server in S_i is pinned at full capacity and only server k is controlled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairParameters {
    /// Λ / scale
    pub lambda_arr: f64,
    /// μ_k / scale
    pub mu_k: f64,
    /// Σ_{j∈S_i, j≠k} μ_j / scale
    pub mu_hat: f64,
    /// Uniformization divisor (Λ + Σ_{j∈S_i} μ_j) / (1 − ε).
    pub scale: f64,
    pub epsilon: f64,
}

impl PairParameters {
    /// Builds parameters directly from unscaled rates.
    pub fn from_rates(lambda: f64, mu_k: f64, mu_hat: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if lambda < 0.0 || mu_k < 0.0 || mu_hat < 0.0 {
            return Err(Error::InvalidArgument("rates must be non-negative".into()));
        }
        let total = lambda + mu_k + mu_hat;
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InvalidArgument("total rate must be positive".into()));
        }
        let scale = total / (1.0 - epsilon);
        Ok(Self {
            lambda_arr: lambda / scale,
            mu_k: mu_k / scale,
            mu_hat: mu_hat / scale,
            scale,
            epsilon,
        })
    }

    /// μ̂ + μ_k
    pub fn total_service(&self) -> f64 {
        self.mu_hat + self.mu_k
    }

    pub fn is_stable(&self) -> bool {
        self.lambda_arr < self.total_service()
    }
}

/// Parameters of the decoupled problem for `file` flagged at `server`.
pub fn pair_parameters(
    topology: &NetworkTopology,
    file: usize,
    server: usize,
    epsilon: f64,
) -> Result<PairParameters> {
    if !topology.has_edge(file, server) {
        return Err(Error::PairNotInTopology { file, server });
    }
    let mu_k = topology.server(server).capacity;
    let mu_hat: f64 = topology
        .servers_of(file)
        .iter()
        .filter(|&&j| j != server)
        .map(|&j| topology.server(j).capacity)
        .sum();
    PairParameters::from_rates(topology.file(file).arrival_rate, mu_k, mu_hat, epsilon)
}
