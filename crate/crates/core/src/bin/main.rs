use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pooled_whittle::index::{build_index_table, IndexTable};
use pooled_whittle::model::NetworkTopology;
use pooled_whittle::policy::Policy;
use pooled_whittle::report::{fmt12, round12};
use pooled_whittle::scenario::Scenario;
use pooled_whittle::sim::{self, CostEstimate, EventKind, SimConfig};
use pooled_whittle::verify::{run_suite, VerifyOptions};
use pooled_whittle::Error;

const PROPERTY_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "pooled-whittle",
    version,
    about = "Index-based server allocation for pooled content caches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the index table and write it as CSV.
    Index {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        index: IndexArgs,
    },
    /// Simulate the requested policies on common random numbers.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        index: IndexArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Comma-separated policy names.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        /// Write the event trace of replication 0 of the first policy.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the optimal policy table when `optimal` is simulated.
        #[arg(long)]
        optimal_out: Option<PathBuf>,
    },
    /// Run the analytic self-checks.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        /// Largest buffer used by the indexability sweep.
        #[arg(long)]
        sweep_nmax: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file or preset name.
    #[arg(long)]
    scenario: String,
    /// Index CSV (stdout when omitted) or result bundle JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    /// direct or iterative
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    /// Truncation level of the per-pair chain.
    #[arg(long)]
    nmax: Option<usize>,
}

impl IndexArgs {
    fn apply(&self, scenario: &mut Scenario) {
        if let Some(m) = &self.method {
            scenario.index.method = m.clone();
        }
        if let Some(eta) = self.eta {
            scenario.index.eta = eta;
        }
        if let Some(n) = self.nmax {
            scenario.index.n_max = n;
        }
    }
}

#[derive(Serialize)]
struct ResultBundle {
    scenario: Option<String>,
    provenance: Provenance,
    estimates: Vec<EstimateRecord>,
    differences: Vec<DifferenceRecord>,
    index_table: Vec<IndexRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    optimal: Option<OptimalRecord>,
}

#[derive(Serialize)]
struct Provenance {
    scenario_hash: String,
    scenario_toml: String,
    seed: u64,
    replications: usize,
    horizon: f64,
    warmup: f64,
    tool_version: &'static str,
}

#[derive(Serialize)]
struct EstimateRecord {
    policy: &'static str,
    mean: f64,
    /// Null when a single replication leaves no interval.
    ci_halfwidth: Option<f64>,
    per_replication: Vec<f64>,
}

#[derive(Serialize)]
struct DifferenceRecord {
    first: &'static str,
    second: &'static str,
    mean: f64,
    ci_halfwidth: Option<f64>,
}

#[derive(Serialize)]
struct IndexRecord {
    file: usize,
    server: usize,
    lone_server: bool,
    /// λ(1), λ(2), ... as strings so that -inf survives JSON.
    values: Vec<String>,
}

#[derive(Serialize)]
struct OptimalRecord {
    buffer: u32,
    average_cost: f64,
    sweeps: usize,
    span: f64,
}

fn estimate_record(policy: &'static str, e: &CostEstimate) -> EstimateRecord {
    EstimateRecord {
        policy,
        mean: round12(e.mean),
        ci_halfwidth: e.ci_halfwidth.map(round12),
        per_replication: e.per_replication.iter().copied().map(round12).collect(),
    }
}

fn index_records(table: &IndexTable) -> Vec<IndexRecord> {
    table
        .entries
        .iter()
        .map(|(&(file, server), p)| IndexRecord {
            file,
            server,
            lone_server: p.lone_server,
            values: p.values.iter().map(|&v| fmt12(v)).collect(),
        })
        .collect()
}

fn open_out(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn ci_text(ci: Option<f64>) -> String {
    ci.map_or_else(
        || "not available".to_string(),
        |h| format!("± {}", fmt12(h)),
    )
}

fn index_cmd(common: &Common, args: &IndexArgs) -> Result<u8, Error> {
    let mut scenario = Scenario::load(&common.scenario)?;
    args.apply(&mut scenario);
    let topology = scenario.validate()?;
    let table = build_index_table(&topology, &scenario.index_options()?)?;
    let mut out = open_out(common.out.as_deref())?;
    table.write_csv(&mut out)?;
    out.flush()?;
    for ((file, server), monotone) in table.monotone_pairs() {
        let note = if table.entries[&(file, server)].lone_server {
            "lone server"
        } else if monotone {
            "monotone"
        } else {
            "NOT monotone"
        };
        eprintln!("file {file} server {server}: {note}");
    }
    Ok(0)
}

fn write_trace(
    path: &Path,
    topology: &NetworkTopology,
    policy: &Policy,
    config: &SimConfig,
) -> Result<(), Error> {
    let config = SimConfig {
        replications: 1,
        record: true,
        ..config.clone()
    };
    let trace = sim::run_replication(topology, policy, &config, 0)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string(), "event".to_string(), "file".to_string()];
    header.extend((1..=topology.num_files()).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for ev in &trace.events {
        let (kind, file) = match ev.kind {
            EventKind::Arrival(f) => ("arrival", f),
            EventKind::Departure(f) => ("departure", f),
        };
        let mut row = vec![fmt12(ev.time), kind.to_string(), file.to_string()];
        row.extend(ev.state.iter().map(u32::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate_cmd(
    common: &Common,
    args: &IndexArgs,
    seed: Option<u64>,
    replications: Option<usize>,
    horizon: Option<f64>,
    policies: Option<&[String]>,
    trace: Option<&Path>,
    optimal_out: Option<&Path>,
) -> Result<u8, Error> {
    let mut scenario = Scenario::load(&common.scenario)?;
    args.apply(&mut scenario);
    if let Some(s) = seed {
        scenario.experiment.seed = s;
    }
    if let Some(r) = replications {
        scenario.experiment.replications = r;
    }
    if let Some(h) = horizon {
        scenario.experiment.horizon = h;
    }
    if let Some(p) = policies {
        scenario.experiment.policies = p.to_vec();
    }
    let topology = scenario.validate()?;
    let kinds = scenario.policy_kinds()?;
    let config = scenario.sim_config()?;
    let built = scenario.build_policies(&topology, &kinds)?;

    let (names, estimates, differences) = if built.len() == 1 {
        let outcome = sim::run(&topology, &built[0], &config)?;
        (vec![built[0].name()], vec![outcome.estimate], Vec::new())
    } else {
        let cmp = sim::compare(&topology, &built, &config)?;
        (cmp.names, cmp.estimates, cmp.differences)
    };

    println!("policy        mean cost");
    for (name, e) in names.iter().zip(&estimates) {
        println!("{name:<13} {} {}", fmt12(e.mean), ci_text(e.ci_halfwidth));
    }
    for d in differences.iter().filter(|d| d.first == 0) {
        println!(
            "{} - {}: {} {}",
            names[d.first],
            names[d.second],
            fmt12(d.estimate.mean),
            ci_text(d.estimate.ci_halfwidth)
        );
    }

    if let Some(path) = trace {
        write_trace(path, &topology, &built[0], &config)?;
    }
    let mut index_table = Vec::new();
    let mut optimal = None;
    for p in &built {
        match p {
            Policy::Whittle(t) if index_table.is_empty() => index_table = index_records(t),
            Policy::Optimal(o) => {
                if let Some(path) = optimal_out {
                    o.write_csv(BufWriter::new(File::create(path)?))?;
                }
                optimal = Some(OptimalRecord {
                    buffer: o.buffer(),
                    average_cost: round12(o.average_cost),
                    sweeps: o.sweeps,
                    span: round12(o.span),
                });
            }
            _ => {}
        }
    }

    let bundle = ResultBundle {
        scenario: scenario.name.clone(),
        provenance: Provenance {
            scenario_hash: scenario.canonical_hash()?,
            scenario_toml: scenario.to_toml_string()?,
            seed: config.seed,
            replications: config.replications,
            horizon: config.horizon,
            warmup: config.warmup,
            tool_version: env!("CARGO_PKG_VERSION"),
        },
        estimates: names
            .iter()
            .zip(&estimates)
            .map(|(n, e)| estimate_record(n, e))
            .collect(),
        differences: differences
            .iter()
            .map(|d| DifferenceRecord {
                first: names[d.first],
                second: names[d.second],
                mean: round12(d.estimate.mean),
                ci_halfwidth: d.estimate.ci_halfwidth.map(round12),
            })
            .collect(),
        index_table,
        optimal,
    };
    if let Some(path) = &common.out {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &bundle)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(0)
}

fn verify_cmd(seed: Option<u64>, sweep_nmax: Option<usize>) -> Result<u8, Error> {
    let mut opts = VerifyOptions::default();
    if let Some(s) = seed {
        opts.seed = s;
    }
    if let Some(n) = sweep_nmax {
        opts.sweep_n_max = n;
    }
    let report = run_suite(&opts)?;
    print!("{report}");
    Ok(if report.all_passed() {
        0
    } else {
        PROPERTY_FAILURE
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Index { common, index } => index_cmd(common, index),
        Command::Simulate {
            common,
            index,
            seed,
            replications,
            horizon,
            policies,
            trace,
            optimal_out,
        } => simulate_cmd(
            common,
            index,
            *seed,
            *replications,
            *horizon,
            policies.as_deref(),
            trace.as_deref(),
            optimal_out.as_deref(),
        ),
        Command::Verify { seed, sweep_nmax } => verify_cmd(*seed, *sweep_nmax),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
