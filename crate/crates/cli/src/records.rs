//! Result emission: one flat CSV for plots, one JSONL file for provenance.
//!
//! Both files are byte-deterministic for a given config and seed list:
//! floats print in shortest round-trip form, optional cells print empty,
//! and wall time stays out of them entirely (the CSV keeps an always-empty
//! column for a stable header; measured timings go to stderr).

use std::io::Write;
use std::path::{Path, PathBuf};

use drs_core::selection::{Algorithm, Optimality};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// One pipeline cell result (per algorithm, seed, and intervention level).
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub env: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub k: usize,
    pub rho_used: f64,
    pub epsilon: f64,
    pub raw_return: f64,
    pub normalized_return: f64,
    pub alpha: Option<f64>,
    pub return_post_intervention: Option<f64>,
    pub bound: f64,
    pub max_gap: f64,
    /// Selected concept indices and labels (provenance; not in the CSV).
    pub subset: Vec<usize>,
    pub subset_labels: Vec<String>,
    pub objective: f64,
    pub optimality: Optimality,
    pub accuracies: Option<Vec<f64>>,
    pub post_intervention_stderr: Option<f64>,
    /// Ground states whose code the abstract policy had never seen.
    pub defaulted_states: usize,
    /// Reported on stderr only; excluded from result files so reruns are
    /// byte-identical.
    #[serde(skip)]
    pub wall_time_ms: u128,
}

pub const CSV_HEADER: &str = "env,algorithm,seed,k,rho_used,epsilon,raw_return,\
normalized_return,alpha,return_post_intervention,bound,max_gap,wall_time_ms";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn csv_row(r: &RunRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},",
        r.env,
        r.algorithm,
        r.seed,
        r.k,
        r.rho_used,
        r.epsilon,
        r.raw_return,
        r.normalized_return,
        opt(r.alpha),
        opt(r.return_post_intervention),
        r.bound,
        r.max_gap,
    )
}

/// Identifier of the producing build, embedded in every JSONL record.
pub fn build_id() -> &'static str {
    option_env!("DRS_BUILD_ID").unwrap_or(concat!("drs-", env!("CARGO_PKG_VERSION")))
}

/// Hash of the exact config that produced a record.
pub fn config_hash(cfg: &ExperimentConfig) -> anyhow::Result<String> {
    let canonical = serde_json::to_string(cfg)?;
    Ok(format!("{:x}", Sha256::digest(canonical.as_bytes())))
}

#[derive(Serialize)]
struct FullRecord<'a> {
    config_hash: &'a str,
    build_id: &'a str,
    #[serde(flatten)]
    record: &'a RunRecord,
}

/// Writes `<stem>.csv` and `<stem>.jsonl` under `dir`; returns both paths.
pub fn write_outputs(
    dir: &Path,
    stem: &str,
    records: &[RunRecord],
    cfg: &ExperimentConfig,
) -> anyhow::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let hash = config_hash(cfg)?;

    let csv_path = dir.join(format!("{stem}.csv"));
    let mut csv = std::fs::File::create(&csv_path)?;
    writeln!(csv, "{CSV_HEADER}")?;
    for r in records {
        writeln!(csv, "{}", csv_row(r))?;
    }

    let jsonl_path = dir.join(format!("{stem}.jsonl"));
    let mut jsonl = std::fs::File::create(&jsonl_path)?;
    for record in records {
        let line = serde_json::to_string(&FullRecord {
            config_hash: &hash,
            build_id: build_id(),
            record,
        })?;
        writeln!(jsonl, "{line}")?;
    }
    Ok((csv_path, jsonl_path))
}
