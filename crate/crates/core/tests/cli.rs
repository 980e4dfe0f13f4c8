//! Runs the `bars-lab` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bars_lab(id: &str, config: &str, seed: &str, out: &Path) -> Output {
    let cfg = out.with_extension("cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_bars-lab"))
        .args([id, "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()])
        .output()
        .unwrap()
}

fn summary(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

const COUPLING: &str = "[experiment]\nid = coupling\n\n[params]\ntrials = 400\nsteps = 16\n";

#[test]
fn same_config_and_seed_give_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        let o = bars_lab("coupling", COUPLING, "11", out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    bars_lab("coupling", COUPLING, "12", &c);
    let rows = |p: &Path| fs::read(p.join("rows.csv")).unwrap();
    assert_eq!(rows(&a), rows(&b));
    assert_ne!(rows(&a), rows(&c));
    let s = summary(&a);
    assert_eq!(s["schema_version"], 1);
    assert_eq!(s["claim"], "coupling-subgaussian-tail");
    assert_eq!(s["verdict"], true);
}

#[test]
fn failed_check_exits_one_and_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let cfg = "[experiment]\nid = gamma2\n[params]\ndims = 1, 2\nspacings = 0.01, 0.1\nslope_tolerance = 0.000001\n";
    let o = bars_lab("gamma2", cfg, "1", &out);
    assert_eq!(o.status.code(), Some(1));
    let s = summary(&out);
    assert_eq!(s["verdict"], false);
    assert_eq!(s["failing"], serde_json::json!(["dimension_slope"]));
    assert!(fs::read_to_string(out.join("rows.csv")).unwrap().lines().count() == 3);
}

#[test]
fn config_and_fixture_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = bars_lab("bars", "[experiment]\nid = bars\n[params]\nlamda_min = 0.1\n", "1", &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`lamda_min`"));
    let o = bars_lab("bars", "[experiment]\nid = bars\nfixture = nowhere\n", "1", &out);
    assert_eq!(o.status.code(), Some(2));
    let o = bars_lab("ratio", "[experiment]\nid = bars\n", "1", &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("rows.csv").exists());
}

#[test]
fn infeasible_run_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = bars_lab("bars", "[experiment]\nid = bars\n[params]\nrounds = 2\nsubgaussian = 1000000\n", "1", &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}
