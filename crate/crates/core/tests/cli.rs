use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pooled-whittle"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_bundle(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn index_writes_csv_and_monotonicity_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("index.csv");
    let o = cli(&[
        "index",
        "--scenario",
        "fig5",
        "--out",
        path(&out),
        "--nmax",
        "120",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("file,server,x,index,method,residual\n"));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("file 1 server 1: monotone"), "{stderr}");
}

#[test]
fn bundle_reproduces_from_its_own_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.json");
    let args = ["--horizon", "2000", "--replications", "3", "--seed", "99"];
    let o = cli(&[
        &["simulate", "--scenario", "fig3", "--out", path(&first)][..],
        &args[..],
    ]
    .concat());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let a = read_bundle(&first);
    let prov = &a["provenance"];
    assert_eq!(prov["seed"], 99);
    assert_eq!(prov["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(prov["scenario_hash"].as_str().unwrap().len(), 64);
    assert!(!a["index_table"].as_array().unwrap().is_empty());

    let scenario = dir.path().join("scenario.toml");
    std::fs::write(&scenario, prov["scenario_toml"].as_str().unwrap()).unwrap();
    let second = dir.path().join("b.json");
    let o = cli(&[
        "simulate",
        "--scenario",
        path(&scenario),
        "--out",
        path(&second),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let b = read_bundle(&second);
    assert_eq!(a["estimates"], b["estimates"]);
    assert_eq!(
        a["provenance"]["scenario_hash"],
        b["provenance"]["scenario_hash"]
    );
}

#[test]
fn single_replication_has_no_interval() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.json");
    let o = cli(&[
        "simulate",
        "--scenario",
        "fig5",
        "--policies",
        "whittle",
        "--replications",
        "1",
        "--horizon",
        "500",
        "--out",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("not available"));
    let b = read_bundle(&out);
    assert!(b["estimates"][0]["ci_halfwidth"].is_null());
    assert!(b["differences"].as_array().unwrap().is_empty());
}

#[test]
fn trace_and_optimal_tables_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let optimal = dir.path().join("optimal.csv");
    let o = cli(&[
        "simulate",
        "--scenario",
        "fig3",
        "--policies",
        "optimal,whittle",
        "--horizon",
        "300",
        "--replications",
        "2",
        "--trace",
        path(&trace),
        "--optimal-out",
        path(&optimal),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let t = std::fs::read_to_string(&trace).unwrap();
    assert!(t.starts_with("time,event,file,x1,x2\n"));
    assert!(t.lines().count() > 1);
    let p = std::fs::read_to_string(&optimal).unwrap();
    assert!(
        p.starts_with("x1,x2,server1,server2,value\n"),
        "{}",
        &p[..40]
    );
}

#[test]
fn empty_edge_scenario_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("empty.toml");
    std::fs::write(
        &scenario,
        "schema_version = 1\nfiles = [{ id = 1, lambda = 0.1, cost = { kind = \"linear\", coeffs = [1.0] } }]\n\
         servers = [{ id = 1, mu = 0.5 }]\nedges = []\n",
    )
    .unwrap();
    let o = cli(&["index", "--scenario", path(&scenario)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn bad_inputs_exit_with_validation_code() {
    for args in [
        &[
            "simulate",
            "--scenario",
            "fig3",
            "--policies",
            "balanced_fair",
        ][..],
        &["simulate", "--scenario", "fig3", "--policies", "fastest"][..],
        &["simulate", "--scenario", "no-such-preset"][..],
        &["index", "--scenario", "fig3", "--method", "newton"][..],
        &["frobnicate"][..],
    ] {
        assert_eq!(cli(args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn oversized_optimal_policy_is_refused() {
    let o = cli(&[
        "simulate",
        "--scenario",
        "fig10",
        "--policies",
        "optimal",
        "--horizon",
        "100",
    ]);
    assert_eq!(o.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("states"), "{stderr}");
}
