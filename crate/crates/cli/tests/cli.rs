//! Black-box tests of the `drs` binary and config-driven behaviors that sit
//! above single library calls.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drs_cli::config::ExperimentConfig;
use drs_cli::pipeline::run_pipeline;
use drs_core::selection::Algorithm;

fn drs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drs")).args(args).output().expect("spawn drs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const INSTANCE: &str = r#"{
    "n_concepts": 3,
    "budget": 1,
    "rho": 0.0,
    "pairs": [
        { "d": 1.9, "diff_mask": [0], "action_differs": true },
        { "d": 0.4, "diff_mask": [2], "action_differs": true }
    ]
}"#;

#[test]
fn select_solves_an_instance_file() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(dir.path(), "inst.json", INSTANCE);
    let out = drs(&["select", "--config", inst.to_str().unwrap(), "--algorithm", "drs"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["subset"]["selected"], serde_json::json!([0]));
    assert_eq!(result["objective"], 0.4);
    assert_eq!(result["optimality"], "exact");
}

#[test]
fn select_rejects_malformed_instances_and_unknown_algorithms() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{ "n_concepts": 1 }"#);
    assert!(!drs(&["select", "--config", bad.to_str().unwrap()]).status.success());

    let inst = write(dir.path(), "inst.json", INSTANCE);
    let out = drs(&["select", "--config", inst.to_str().unwrap(), "--algorithm", "psychic"]);
    assert!(!out.status.success());
    // variance needs rollout context the instance file cannot carry
    let out = drs(&["select", "--config", inst.to_str().unwrap(), "--algorithm", "variance"]);
    assert!(!out.status.success());
}

#[test]
fn hardness_reports_a_passing_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write(
        dir.path(),
        "cov.json",
        r#"{ "weights": [3.0, 5.0], "sets": [[0], [1], [0, 1]], "k": 1 }"#,
    );
    let out = drs(&["hardness", "--config", inst.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["selected_sets"], serde_json::json!([2]));
    assert_eq!(report["covered_weight"], 8.0);
}

const SMALL_PIPELINE: &str = r#"{
    "environment": { "name": "loop4", "distractors": 1 },
    "algorithms": ["drs", "random"],
    "k": { "absolute": 1 },
    "rho": 0.0,
    "seeds": [0, 1],
    "rollout_steps": 2000,
    "pair_label_steps": 500,
    "normalization": { "min": 0.0, "max": 10.0 }
}"#;

#[test]
fn pipeline_runs_are_deterministic_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", SMALL_PIPELINE);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let run = drs(&[
            "pipeline",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    for file in ["pipeline.csv", "pipeline.jsonl"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn pipeline_respects_seed_override_and_algorithm_filter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", SMALL_PIPELINE);
    let out = drs(&[
        "pipeline",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--algorithm",
        "drs",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1, "one algorithm, one seed: {text}");
    assert!(rows[0].starts_with("loop4,drs,7,"));
}

#[test]
fn invalid_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", &SMALL_PIPELINE.replace("[0, 1]", "[]"));
    assert!(!drs(&["pipeline", "--config", cfg.to_str().unwrap()]).status.success());

    // intervene requires a noise model in the config
    let cfg = write(dir.path(), "cfg2.json", SMALL_PIPELINE);
    assert!(!drs(&["intervene", "--config", cfg.to_str().unwrap()]).status.success());
}

#[test]
fn example1_emits_the_walkthrough_report() {
    let out = drs(&["example1"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["parity_policy_value"].as_f64().unwrap() - 9.5).abs() < 1e-6);
    assert!(
        report["third_policy_value"].as_f64().unwrap()
            < report["parity_policy_value"].as_f64().unwrap()
    );
    assert_eq!(report["drs_selected"], serde_json::json!([0]));
}

/// The key-door bank's direction bits are decision relevant: two states in
/// the same cell facing different ways need different turns, so budgeted
/// selection keeps at least one direction concept in most seeds.
#[test]
fn keydoor_selection_keeps_a_direction_concept() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/keydoor.json");
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.algorithms = vec![Algorithm::Drs];
    let records = run_pipeline(&cfg).unwrap();
    assert_eq!(records.len(), cfg.seeds.len());
    let with_direction = records
        .iter()
        .filter(|r| r.subset_labels.iter().any(|l| l.starts_with("dir_")))
        .count();
    assert!(
        2 * with_direction > records.len(),
        "direction concept kept in only {with_direction}/{} seeds",
        records.len()
    );
}
