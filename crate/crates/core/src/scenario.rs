//! Scenario files: topology, experiment, index and optimal-policy settings in
//! one TOML document. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::index::{build_index_table, IndexMethod, IndexOptions, DEFAULT_ETA};
use crate::model::{CostFunction, FileType, NetworkTopology, Server, DEFAULT_EPSILON};
use crate::policy::{optimal_policy_vi, OptimalOptions, Policy, PolicyKind};
use crate::sim::{SimConfig, DEFAULT_WARMUP_FRACTION};

pub const SCHEMA_VERSION: u32 = 1;

const PRESET_SOURCES: [(&str, &str); 4] = [
    ("fig3", include_str!("../presets/fig3.toml")),
    ("fig5", include_str!("../presets/fig5.toml")),
    ("fig5-sparse", include_str!("../presets/fig5-sparse.toml")),
    ("fig10", include_str!("../presets/fig10.toml")),
];

/// Names accepted by `Scenario::preset`.
pub const PRESETS: [&str; 4] = ["fig3", "fig5", "fig5-sparse", "fig10"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub files: Vec<FileSpec>,
    pub servers: Vec<ServerSpec>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub index: IndexSpec,
    #[serde(default)]
    pub optimal: OptimalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub id: usize,
    pub lambda: f64,
    pub cost: CostSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// coeffs = [c]: f(x) = c x
    Linear,
    /// coeffs = [a, b]: f(x) = a x² + b x
    Quadratic,
    /// coeffs = [f(0), f(1), ...]
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub kind: CostKind,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub id: usize,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub file: usize,
    pub server: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub policies: Vec<String>,
    pub horizon: f64,
    /// Defaults to 10% of the horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    pub replications: usize,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            policies: ["whittle", "uniform", "random", "weighted", "max_weight"]
                .map(String::from)
                .to_vec(),
            horizon: 1e5,
            warmup: None,
            replications: 20,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSpec {
    pub method: String,
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub n_max: usize,
    pub max_queue: usize,
    pub epsilon: f64,
}

impl Default for IndexSpec {
    fn default() -> Self {
        Self {
            method: "direct".into(),
            eta: DEFAULT_ETA,
            tol: 1e-6,
            max_iter: 100_000,
            n_max: 200,
            max_queue: 50,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimalSpec {
    pub buffer: u32,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for OptimalSpec {
    fn default() -> Self {
        let d = OptimalOptions::default();
        Self {
            buffer: d.buffer,
            tol: d.tol,
            max_sweeps: d.max_sweeps,
        }
    }
}

impl CostSpec {
    pub fn to_cost(&self) -> Result<CostFunction> {
        let c = &self.coeffs;
        match (self.kind, c.len()) {
            (CostKind::Linear, 1) => Ok(CostFunction::Linear(c[0])),
            (CostKind::Quadratic, 2) => Ok(CostFunction::Quadratic(c[0], c[1])),
            (CostKind::Tabulated, n) if n >= 1 => Ok(CostFunction::Tabulated(c.clone())),
            (kind, n) => Err(Error::Scenario(format!(
                "cost kind {kind:?} cannot take {n} coefficients"
            ))),
        }
    }

    pub fn from_cost(cost: &CostFunction) -> Self {
        match cost {
            CostFunction::Linear(c) => Self {
                kind: CostKind::Linear,
                coeffs: vec![*c],
            },
            CostFunction::Quadratic(a, b) => Self {
                kind: CostKind::Quadratic,
                coeffs: vec![*a, *b],
            },
            CostFunction::Tabulated(v) => Self {
                kind: CostKind::Tabulated,
                coeffs: v.clone(),
            },
        }
    }
}

impl Scenario {
    /// Parses and checks the schema version. Syntax errors carry the line and
    /// column of the offending input.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(Error::Scenario(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                s.schema_version
            )));
        }
        Ok(s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn preset(name: &str) -> Result<Self> {
        PRESET_SOURCES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, src)| Self::from_toml_str(src))
            .unwrap_or_else(|| {
                Err(Error::Scenario(format!(
                    "unknown preset {name:?} (available: {})",
                    PRESETS.join(", ")
                )))
            })
    }

    /// Reads a scenario file, or a bundled preset when `spec` names one and
    /// no such file exists.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            return Self::from_toml_str(&text)
                .map_err(|e| Error::Scenario(format!("{}: {e}", path.display())));
        }
        if PRESETS.contains(&spec) {
            return Self::preset(spec);
        }
        Err(Error::Scenario(format!(
            "no scenario file {spec:?} and no preset of that name (presets: {})",
            PRESETS.join(", ")
        )))
    }

    /// Hex SHA-256 of the canonical serialization (comments and layout of the
    /// source file do not matter).
    pub fn canonical_hash(&self) -> Result<String> {
        let text = self.to_toml_string()?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn from_topology(topology: &NetworkTopology) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: None,
            files: topology
                .files()
                .iter()
                .map(|f| FileSpec {
                    id: f.id,
                    lambda: f.arrival_rate,
                    cost: CostSpec::from_cost(&f.cost),
                })
                .collect(),
            servers: topology
                .servers()
                .iter()
                .map(|s| ServerSpec {
                    id: s.id,
                    mu: s.capacity,
                })
                .collect(),
            edges: topology
                .edges()
                .map(|(file, server)| EdgeSpec { file, server })
                .collect(),
            experiment: ExperimentSpec::default(),
            index: IndexSpec::default(),
            optimal: OptimalSpec::default(),
        }
    }

    /// Builds the topology without checking the modelling assumptions.
    pub fn topology(&self) -> Result<NetworkTopology> {
        let files = self
            .files
            .iter()
            .map(|f| {
                Ok(FileType {
                    id: f.id,
                    arrival_rate: f.lambda,
                    cost: f.cost.to_cost()?,
                })
            })
            .collect::<Result<_>>()?;
        let servers = self
            .servers
            .iter()
            .map(|s| Server {
                id: s.id,
                capacity: s.mu,
            })
            .collect();
        NetworkTopology::new(
            files,
            servers,
            self.edges.iter().map(|e| (e.file, e.server)),
        )
    }

    /// Topology plus every static check: structure, modelling assumptions
    /// (costs checked up to the index buffer), settings and policy names.
    pub fn validate(&self) -> Result<NetworkTopology> {
        let topology = self.topology()?;
        let report = topology.validate(self.index.n_max as u32);
        if !report.is_valid() {
            return Err(Error::Topology(report.to_string()));
        }
        self.index_options()?;
        self.sim_config()?.validate(&topology)?;
        self.policy_kinds()?;
        if self.experiment.seed > i64::MAX as u64 {
            return Err(Error::Scenario("seed must be below 2^63".into()));
        }
        Ok(topology)
    }

    pub fn index_options(&self) -> Result<IndexOptions> {
        let i = &self.index;
        if !(i.epsilon > 0.0 && i.epsilon < 1.0) {
            return Err(Error::Scenario(format!(
                "index.epsilon {} not in (0, 1)",
                i.epsilon
            )));
        }
        Ok(IndexOptions {
            method: i.method.parse::<IndexMethod>()?,
            eta: i.eta,
            tol: i.tol,
            max_iter: i.max_iter,
            n_max: i.n_max,
            max_queue: i.max_queue,
            epsilon: i.epsilon,
        })
    }

    pub fn optimal_options(&self) -> OptimalOptions {
        OptimalOptions {
            buffer: self.optimal.buffer,
            tol: self.optimal.tol,
            max_sweeps: self.optimal.max_sweeps,
            epsilon: self.index.epsilon,
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let e = &self.experiment;
        Ok(SimConfig {
            warmup: e.warmup.unwrap_or(DEFAULT_WARMUP_FRACTION * e.horizon),
            ..SimConfig::new(e.horizon, e.seed, e.replications)
        })
    }

    pub fn policy_kinds(&self) -> Result<Vec<PolicyKind>> {
        if self.experiment.policies.is_empty() {
            return Err(Error::Scenario("experiment.policies is empty".into()));
        }
        self.experiment.policies.iter().map(|p| p.parse()).collect()
    }

    /// Instantiates the requested policies, building the index table and the
    /// optimal policy only when needed.
    pub fn build_policies(
        &self,
        topology: &NetworkTopology,
        kinds: &[PolicyKind],
    ) -> Result<Vec<Policy>> {
        let table = if kinds.contains(&PolicyKind::Whittle) {
            Some(build_index_table(topology, &self.index_options()?)?)
        } else {
            None
        };
        let optimal = if kinds.contains(&PolicyKind::Optimal) {
            Some(optimal_policy_vi(topology, &self.optimal_options())?)
        } else {
            None
        };
        Ok(kinds
            .iter()
            .map(|k| match k {
                PolicyKind::Whittle => Policy::Whittle(table.clone().expect("table built")),
                PolicyKind::Uniform => Policy::Uniform,
                PolicyKind::Weighted => Policy::Weighted,
                PolicyKind::Random => Policy::Random,
                PolicyKind::MaxWeight => Policy::MaxWeight,
                PolicyKind::Optimal => Policy::Optimal(optimal.clone().expect("optimal built")),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_encode_the_published_parameters() {
        let t = Scenario::preset("fig3").unwrap().validate().unwrap();
        let lambdas: Vec<f64> = t.files().iter().map(|f| f.arrival_rate).collect();
        assert_eq!(lambdas, [0.2, 0.1]);
        assert_eq!(t.file(1).cost, CostFunction::Linear(13.0));
        assert_eq!(t.file(2).cost, CostFunction::Linear(10.0));
        assert_eq!(t.num_edges(), 4);

        let t = Scenario::preset("fig5").unwrap().validate().unwrap();
        let lambdas: Vec<f64> = t.files().iter().map(|f| f.arrival_rate).collect();
        assert_eq!(lambdas, [0.1, 0.2, 0.1]);
        let mus: Vec<f64> = t.servers().iter().map(|s| s.capacity).collect();
        assert_eq!(mus, [0.2, 0.3]);
        assert_eq!(t.file(2).cost, CostFunction::Linear(20.0));

        let t = Scenario::preset("fig5-sparse").unwrap().validate().unwrap();
        let edges: Vec<_> = t.edges().collect();
        assert_eq!(edges, [(1, 1), (2, 1), (2, 2), (3, 2)]);

        let t = Scenario::preset("fig10").unwrap().validate().unwrap();
        assert_eq!(
            (t.num_files(), t.num_servers(), t.num_edges()),
            (10, 10, 20)
        );
        for i in 1..=10 {
            assert_eq!(t.servers_of(i), {
                let mut v = vec![i, i % 10 + 1];
                v.sort();
                v
            });
            let (l, c, m) = match i % 3 {
                1 => (0.2, 15.0, 0.2),
                2 => (0.3, 20.0, 0.3),
                _ => (0.1, 10.0, 0.2),
            };
            assert_eq!(t.file(i).arrival_rate, l);
            assert_eq!(t.file(i).cost, CostFunction::Linear(c));
            assert_eq!(t.server(i).capacity, m);
        }
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let mut text = PRESET_SOURCES[0].1.to_string();
        text.push_str("\n[extra]\nfoo = 1\n");
        let err = Scenario::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("extra") && err.contains("line"), "{err}");
        let text = PRESET_SOURCES[0]
            .1
            .replace("schema_version = 1", "schema_version = 2");
        assert!(Scenario::from_toml_str(&text).is_err());
        assert!(Scenario::preset("fig7").is_err());
    }

    #[test]
    fn empty_edges_fail_validation() {
        let mut s = Scenario::preset("fig3").unwrap();
        s.edges.clear();
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("no edges"), "{err}");
    }

    #[test]
    fn reserved_and_unknown_policy_names() {
        let mut s = Scenario::preset("fig3").unwrap();
        s.experiment.policies = vec!["balanced_fair".into()];
        assert!(matches!(s.validate(), Err(Error::UnsupportedPolicy(_))));
        s.experiment.policies = vec!["fastest".into()];
        assert!(matches!(s.validate(), Err(Error::UnknownPolicy(_))));
    }

    #[test]
    fn hash_ignores_layout_but_not_content() {
        let a = Scenario::preset("fig3").unwrap();
        let b = Scenario::from_toml_str(&a.to_toml_string().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.canonical_hash().unwrap(), b.canonical_hash().unwrap());
        let mut c = a.clone();
        c.experiment.seed += 1;
        assert_ne!(a.canonical_hash().unwrap(), c.canonical_hash().unwrap());
    }

    #[test]
    fn cost_coefficient_counts() {
        let bad = CostSpec {
            kind: CostKind::Quadratic,
            coeffs: vec![1.0],
        };
        assert!(bad.to_cost().is_err());
        let ok = CostSpec {
            kind: CostKind::Tabulated,
            coeffs: vec![0.0, 1.0, 3.0],
        };
        assert_eq!(CostSpec::from_cost(&ok.to_cost().unwrap()), ok);
    }
}
