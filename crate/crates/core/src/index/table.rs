use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{pair_parameters, NetworkTopology, DEFAULT_EPSILON};
use crate::report::fmt12;

use super::whittle::{
    whittle_index_direct, whittle_index_iterative, IterationSettings, DEFAULT_ETA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexMethod {
    #[default]
    Direct,
    Iterative,
}

impl fmt::Display for IndexMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IndexMethod::Direct => "direct",
            IndexMethod::Iterative => "iterative",
        })
    }
}

impl FromStr for IndexMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(IndexMethod::Direct),
            "iterative" => Ok(IndexMethod::Iterative),
            other => Err(Error::InvalidArgument(format!(
                "unknown index method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexOptions {
    pub method: IndexMethod,
    pub eta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub n_max: usize,
    pub max_queue: usize,
    pub epsilon: f64,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            method: IndexMethod::Direct,
            eta: DEFAULT_ETA,
            tol: 1e-6,
            max_iter: 100_000,
            n_max: 200,
            max_queue: 50,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Indices of one (file, server) edge for x = 1..=max_queue.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIndices {
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    /// The file has no other server (μ̂ = 0). Idling server k then never
    /// changes the passive fraction, so no finite charge makes idling
    /// worthwhile and the index is −∞ at every x.
    pub lone_server: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexTable {
    pub entries: BTreeMap<(usize, usize), PairIndices>,
    pub method: IndexMethod,
    pub max_queue: usize,
    pub n_max: usize,
}

impl IndexTable {
    pub fn len(&self) -> usize {
        self.entries.values().map(|p| p.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// λ(x) for the edge; queue lengths above `max_queue` are extrapolated
    /// linearly from the last two entries.
    pub fn lookup(&self, file: usize, server: usize, x: u32) -> Result<f64> {
        let missing = Error::MissingIndex { file, server, x };
        let pair = self.entries.get(&(file, server)).ok_or(missing)?;
        if x == 0 {
            return Err(Error::MissingIndex { file, server, x });
        }
        let v = &pair.values;
        let x = x as usize;
        if x <= v.len() {
            return Ok(v[x - 1]);
        }
        match v.len() {
            0 => Err(Error::MissingIndex {
                file,
                server,
                x: x as u32,
            }),
            1 => Ok(v[0]),
            n => {
                if pair.lone_server {
                    return Ok(f64::NEG_INFINITY);
                }
                let slope = v[n - 1] - v[n - 2];
                Ok(v[n - 1] + slope * (x - n) as f64)
            }
        }
    }

    /// Whether every edge's indices are non-increasing in x.
    pub fn monotone_pairs(&self) -> BTreeMap<(usize, usize), bool> {
        self.entries
            .iter()
            .map(|(&k, p)| (k, p.values.windows(2).all(|w| w[1] <= w[0])))
            .collect()
    }

    /// CSV with columns file, server, x, index, method, residual.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["file", "server", "x", "index", "method", "residual"])?;
        let method = self.method.to_string();
        for (&(file, server), pair) in &self.entries {
            for (i, (v, r)) in pair.values.iter().zip(&pair.residuals).enumerate() {
                w.write_record([
                    file.to_string(),
                    server.to_string(),
                    (i + 1).to_string(),
                    fmt12(*v),
                    method.clone(),
                    fmt12(*r),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Computes λ(x) for every edge and x = 1..=max_queue, in parallel across edges.
pub fn build_index_table(topology: &NetworkTopology, opts: &IndexOptions) -> Result<IndexTable> {
    if opts.max_queue == 0 {
        return Err(Error::InvalidArgument("max_queue must be positive".into()));
    }
    let edges: Vec<(usize, usize)> = topology.edges().collect();
    let solved: Vec<((usize, usize), PairIndices)> = edges
        .par_iter()
        .map(|&(file, server)| {
            pair_indices(topology, file, server, opts)
                .map(|p| ((file, server), p))
                .map_err(|e| e.for_pair(file, server))
        })
        .collect::<Result<_>>()?;
    Ok(IndexTable {
        entries: solved.into_iter().collect(),
        method: opts.method,
        max_queue: opts.max_queue,
        n_max: opts.n_max,
    })
}

fn pair_indices(
    topology: &NetworkTopology,
    file: usize,
    server: usize,
    opts: &IndexOptions,
) -> Result<PairIndices> {
    let params = pair_parameters(topology, file, server, opts.epsilon)?;
    let cost = &topology.file(file).cost;
    let n = opts.max_queue;
    if params.mu_hat == 0.0 {
        return Ok(PairIndices {
            values: vec![f64::NEG_INFINITY; n],
            residuals: vec![0.0; n],
            iterations: vec![0; n],
            lone_server: true,
        });
    }
    let mut out = PairIndices {
        values: Vec::with_capacity(n),
        residuals: Vec::with_capacity(n),
        iterations: Vec::with_capacity(n),
        lone_server: false,
    };
    let mut warm = 0.0;
    for x in 1..=n {
        match opts.method {
            IndexMethod::Direct => {
                let d = whittle_index_direct(&params, cost, x, opts.n_max)?;
                out.values.push(d.value);
                out.residuals.push(d.residual);
                out.iterations.push(0);
            }
            IndexMethod::Iterative => {
                let settings = IterationSettings {
                    eta: opts.eta,
                    tol: opts.tol,
                    max_iter: opts.max_iter,
                    initial: warm,
                };
                let it = whittle_index_iterative(&params, cost, x, settings, opts.n_max)?;
                let last = it.trace.len();
                let prev = if last >= 2 {
                    it.trace[last - 2]
                } else {
                    settings.initial
                };
                warm = it.value;
                out.values.push(it.value);
                out.residuals.push((it.value - prev).abs());
                out.iterations.push(it.iterations);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostFunction, FileType, Server};

    fn fig3() -> NetworkTopology {
        NetworkTopology::new(
            vec![
                FileType {
                    id: 1,
                    arrival_rate: 0.2,
                    cost: CostFunction::Linear(13.0),
                },
                FileType {
                    id: 2,
                    arrival_rate: 0.1,
                    cost: CostFunction::Linear(10.0),
                },
            ],
            vec![
                Server {
                    id: 1,
                    capacity: 0.2,
                },
                Server {
                    id: 2,
                    capacity: 0.2,
                },
            ],
            [(1, 1), (1, 2), (2, 1), (2, 2)],
        )
        .unwrap()
    }

    #[test]
    fn full_table_has_every_entry() {
        let t = build_index_table(&fig3(), &IndexOptions::default()).unwrap();
        assert_eq!(t.len(), 200);
        assert!(t.monotone_pairs().values().all(|&m| m));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 201);
        assert!(text.starts_with("file,server,x,index,method,residual"));
    }

    #[test]
    fn lookup_extrapolates_and_reports_missing() {
        let opts = IndexOptions {
            max_queue: 5,
            n_max: 60,
            ..Default::default()
        };
        let t = build_index_table(&fig3(), &opts).unwrap();
        let v4 = t.lookup(1, 1, 4).unwrap();
        let v5 = t.lookup(1, 1, 5).unwrap();
        let v8 = t.lookup(1, 1, 8).unwrap();
        assert!((v8 - (v5 + 3.0 * (v5 - v4))).abs() < 1e-9);
        assert!(matches!(
            t.lookup(3, 1, 1),
            Err(Error::MissingIndex {
                file: 3,
                server: 1,
                x: 1
            })
        ));
        assert!(t.lookup(1, 1, 0).is_err());
    }

    #[test]
    fn lone_server_edges_get_negative_infinity() {
        let t = NetworkTopology::new(
            vec![
                FileType {
                    id: 1,
                    arrival_rate: 0.1,
                    cost: CostFunction::Linear(10.0),
                },
                FileType {
                    id: 2,
                    arrival_rate: 0.2,
                    cost: CostFunction::Linear(20.0),
                },
            ],
            vec![
                Server {
                    id: 1,
                    capacity: 0.2,
                },
                Server {
                    id: 2,
                    capacity: 0.3,
                },
            ],
            [(1, 1), (2, 1), (2, 2)],
        )
        .unwrap();
        let table = build_index_table(
            &t,
            &IndexOptions {
                max_queue: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(table.entries[&(1, 1)].lone_server);
        assert_eq!(table.lookup(1, 1, 30).unwrap(), f64::NEG_INFINITY);
        assert!(table.lookup(2, 1, 3).unwrap().is_finite());
    }
}
