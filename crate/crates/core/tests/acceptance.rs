//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use pooled_whittle::model::{CostFunction, FileType, NetworkTopology, Server};
use pooled_whittle::policy::{Policy, PolicyKind};
use pooled_whittle::scenario::Scenario;
use pooled_whittle::sim::{self, PolicyComparison, SimConfig};
use pooled_whittle::verify::{
    indexability_sweep_check, iterative_check, passive_mass_check, preset_pairs,
    stationary_oracle_check, structure_check, CheckResult, PresetPair, VerifyOptions,
    SUITE_PRESETS,
};

const NEAR_OPTIMAL_BOUND: f64 = 0.05;

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_check(check: pooled_whittle::Result<CheckResult>, budget: Option<Duration>) -> Outcome {
    match check {
        Ok(c) => {
            let in_time = budget.is_none_or(|b| c.seconds < b.as_secs_f64());
            let mut detail = format!(
                "{} cases, {} failures, {:.2}s; {}",
                c.cases,
                c.failures.len(),
                c.seconds,
                c.detail
            );
            if let Some(first) = c.failures.first() {
                detail.push_str(&format!("; first: {first}"));
            }
            if !in_time {
                detail.push_str("; over time budget");
            }
            Outcome {
                passed: c.passed() && in_time,
                detail,
            }
        }
        Err(e) => Outcome {
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn preset_suite_pairs() -> Vec<PresetPair> {
    SUITE_PRESETS
        .iter()
        .flat_map(|p| preset_pairs(p).expect("bundled preset"))
        .collect()
}

fn mm1_calibration() -> Outcome {
    let start = Instant::now();
    let topology = NetworkTopology::new(
        vec![FileType {
            id: 1,
            arrival_rate: 0.2,
            cost: CostFunction::Linear(1.0),
        }],
        vec![Server {
            id: 1,
            capacity: 0.4,
        }],
        [(1, 1)],
    )
    .expect("single queue");
    let outcome = match sim::run(&topology, &Policy::Uniform, &SimConfig::new(1e6, 11, 10)) {
        Ok(o) => o,
        Err(e) => {
            return Outcome {
                passed: false,
                detail: format!("error: {e}"),
            }
        }
    };
    let secs = start.elapsed().as_secs_f64();
    let err = (outcome.estimate.mean - 1.0).abs();
    Outcome {
        passed: err <= 0.02 && secs < 60.0,
        detail: format!(
            "mean {:.5}, relative error {:.4}, {secs:.2}s",
            outcome.estimate.mean, err
        ),
    }
}

fn compare_preset(preset: &str, kinds: &[PolicyKind]) -> pooled_whittle::Result<PolicyComparison> {
    let mut scenario = Scenario::preset(preset)?;
    scenario.experiment.policies = kinds.iter().map(|k| k.name().to_string()).collect();
    scenario.experiment.horizon = 1e5;
    scenario.experiment.warmup = None;
    scenario.experiment.replications = 20;
    let topology = scenario.validate()?;
    let policies = scenario.build_policies(&topology, kinds)?;
    sim::compare(&topology, &policies, &scenario.sim_config()?)
}

fn near_optimal() -> Outcome {
    let cmp = match compare_preset("fig3", &[PolicyKind::Whittle, PolicyKind::Optimal]) {
        Ok(c) => c,
        Err(e) => {
            return Outcome {
                passed: false,
                detail: format!("error: {e}"),
            }
        }
    };
    let diff = &cmp.difference(0, 1).expect("pair").estimate;
    let optimal = cmp.estimates[1].mean;
    let gap_upper = diff.upper() / optimal;
    Outcome {
        passed: diff.ci_halfwidth.is_some() && gap_upper <= NEAR_OPTIMAL_BOUND,
        detail: format!(
            "whittle {:.4}, optimal {:.4}, gap {:.4} (upper {:.4}, bound {NEAR_OPTIMAL_BOUND})",
            cmp.estimates[0].mean,
            optimal,
            diff.mean / optimal,
            gap_upper
        ),
    }
}

const HEURISTICS: [PolicyKind; 4] = [
    PolicyKind::Uniform,
    PolicyKind::Random,
    PolicyKind::Weighted,
    PolicyKind::MaxWeight,
];

/// Whittle against each heuristic: (beats all with CI separation, summary).
fn ordering(preset: &str) -> (bool, String) {
    let kinds: Vec<PolicyKind> = std::iter::once(PolicyKind::Whittle)
        .chain(HEURISTICS)
        .collect();
    let cmp = match compare_preset(preset, &kinds) {
        Ok(c) => c,
        Err(e) => return (false, format!("{preset}: error: {e}")),
    };
    let mut ok = true;
    let mut parts = vec![format!("whittle {:.2}", cmp.estimates[0].mean)];
    for j in 1..kinds.len() {
        let d = &cmp.difference(0, j).expect("pair").estimate;
        let better = cmp.estimates[0].mean < cmp.estimates[j].mean && d.significantly_negative();
        ok &= better;
        parts.push(format!(
            "{} {:.2}{}",
            cmp.names[j],
            cmp.estimates[j].mean,
            if better { "" } else { " (not separated)" }
        ));
    }
    (ok, format!("{preset}: {}", parts.join(", ")))
}

fn policy_ordering() -> Outcome {
    let start = Instant::now();
    let (a, da) = ordering("fig5");
    let (b, db) = ordering("fig10");
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        passed: a && b && secs < 600.0,
        detail: format!("{da}; {db}; {secs:.1}s"),
    }
}

fn determinism() -> Outcome {
    let run = || compare_preset("fig5", &[PolicyKind::Whittle, PolicyKind::MaxWeight]);
    match (run(), run()) {
        (Ok(a), Ok(b)) => {
            let bits = |c: &PolicyComparison| -> Vec<u64> {
                c.estimates
                    .iter()
                    .flat_map(|e| {
                        [e.mean, e.ci_halfwidth.unwrap_or(f64::NAN)]
                            .into_iter()
                            .chain(e.per_replication.iter().copied())
                    })
                    .map(f64::to_bits)
                    .collect()
            };
            let same = bits(&a) == bits(&b);
            Outcome {
                passed: same,
                detail: format!("{} values compared bitwise", bits(&a).len()),
            }
        }
        (Err(e), _) | (_, Err(e)) => Outcome {
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn cli_verify() -> Outcome {
    let start = Instant::now();
    match Command::new(env!("CARGO_BIN_EXE_pooled-whittle"))
        .arg("verify")
        .output()
    {
        Ok(out) => {
            let code = out.status.code();
            let stdout = String::from_utf8_lossy(&out.stdout);
            let fails = stdout.lines().filter(|l| l.starts_with("FAIL")).count();
            Outcome {
                passed: code == Some(0),
                detail: format!(
                    "exit {code:?}, {fails} failing checks, {:.1}s",
                    start.elapsed().as_secs_f64()
                ),
            }
        }
        Err(e) => Outcome {
            passed: false,
            detail: format!("could not launch: {e}"),
        },
    }
}

fn main() -> ExitCode {
    let opts = VerifyOptions::default();
    let pairs = preset_suite_pairs();
    let fig5 = preset_pairs("fig5").expect("bundled preset");

    let criteria: Vec<(&str, Criterion)> = vec![
        (
            "stationary distribution matches balance solve",
            Box::new(|| {
                from_check(
                    stationary_oracle_check(&opts),
                    Some(Duration::from_secs(10)),
                )
            }),
        ),
        (
            "passive mass increases with threshold",
            Box::new(|| from_check(passive_mass_check(&pairs, &opts), None)),
        ),
        (
            "value function structure",
            Box::new(|| from_check(structure_check(&pairs, &opts), None)),
        ),
        (
            "iterative index meets direct on fig5",
            Box::new(|| from_check(iterative_check(&fig5, &opts), None)),
        ),
        (
            "indexability sweep",
            Box::new(|| from_check(indexability_sweep_check(&pairs, &opts), None)),
        ),
        ("M/M/1 calibration", Box::new(mm1_calibration)),
        ("fig3 whittle near optimal", Box::new(near_optimal)),
        (
            "whittle beats heuristics on fig5 and fig10",
            Box::new(policy_ordering),
        ),
        ("bit-identical reruns", Box::new(determinism)),
        ("cli verify", Box::new(cli_verify)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.passed);
        println!(
            "{} {:>2} {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    // The sparse fig5 reading is reported but not gated.
    let (_, sparse) = ordering("fig5-sparse");
    println!("INFO    {sparse}");

    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
