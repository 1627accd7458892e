//! Black-box checks of the `smfe` binary: subcommands, exit codes, and the
//! consistency of `score-feature` with a finished run's report.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smfe"))
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn check_kg_reports_counts() {
    let kg = data_dir().join("demo.kg");
    let out = run_ok(&["check-kg", kg.to_str().unwrap()]);
    let text = stdout(&out);
    assert!(text.starts_with("OK:"), "{text}");
    assert!(text.contains("derivation rules"), "{text}");
    assert!(text.contains("triples"), "{text}");
}

#[test]
fn check_kg_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.kg");
    std::fs::write(&bad, "concept\n").unwrap();
    let out = bin().args(["check-kg", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn space_size_hand_example() {
    let out = run_ok(&["space-size", "--p", "2", "--unary", "2", "--binary", "1"]);
    assert_eq!(stdout(&out).trim(), "6");
}

#[test]
fn space_size_default_catalog_is_stable() {
    let a = stdout(&run_ok(&["space-size", "--p", "6"]));
    let b = stdout(&run_ok(&["space-size", "--p", "6"]));
    assert_eq!(a, b);
    let n: u64 = a.trim().parse().unwrap();
    assert!(n > 0);
}

#[test]
fn list_transforms_is_full_catalog_json() {
    let out = run_ok(&["list-transforms"]);
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let entries = parsed.as_array().unwrap();
    assert_eq!(entries.len(), 24);
    for e in entries {
        for key in ["id", "arity", "operands", "unit_law", "default_interp"] {
            assert!(e.get(key).is_some(), "{key} present");
        }
    }
    // The flag spelling prints the same catalog.
    let flagged = run_ok(&["--list-transforms"]);
    assert_eq!(out.stdout, flagged.stdout);
}

#[test]
fn run_then_score_feature_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let data = data_dir().join("bikeshare_sample.csv");
    let kg = data_dir().join("demo.kg");
    run_ok(&[
        "run",
        "--data",
        data.to_str().unwrap(),
        "--kg",
        kg.to_str().unwrap(),
        "--target",
        "count",
        "--episodes",
        "2",
        "--m",
        "2",
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    for name in ["report.json", "augmented.csv", "decomp.dot", "decomp.json", "importance.svg"] {
        assert!(out_dir.join(name).exists(), "{name} written");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    let per_feature = report["interpretability"]["per_feature"].as_object().unwrap();
    let (name, expected) = per_feature.iter().next().unwrap();
    let scored = run_ok(&["score-feature", name, "--out", out_dir.to_str().unwrap()]);
    let got: f64 = stdout(&scored).trim().parse().unwrap();
    assert!((0.0..=1.0).contains(&got));
    assert_eq!(got, expected.as_f64().unwrap(), "{name}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let data = data_dir().join("bikeshare_sample.csv");
    let kg = data_dir().join("demo.kg");
    let config = dir.path().join("job.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "data": data.to_str().unwrap(),
            "kg": kg.to_str().unwrap(),
            "target": "count",
            "episodes": 1,
            "m": 1,
            "seed": 1,
            "out": out_dir.to_str().unwrap(),
        })
        .to_string(),
    )
    .unwrap();
    run_ok(&["run", "--config", config.to_str().unwrap(), "--seed", "99"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["seed"], 99);
    assert_eq!(report["config"]["episodes"], 1);
}

#[test]
fn unknown_config_key_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("job.json");
    std::fs::write(&config, r#"{"data": "x", "bogus": 1}"#).unwrap();
    let out = bin()
        .args(["run", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn missing_required_fields_is_exit_2() {
    let out = bin().args(["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn no_subcommand_is_exit_2() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
