//! `drs`: concept selection and abstract-policy experiments on tabular MDPs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use drs_cli::config::{ExperimentConfig, SweepAxis};
use drs_cli::pipeline::{baseline_result, run_pipeline, run_sweep, VI_TOL};
use drs_cli::records::{csv_row, write_outputs, RunRecord, CSV_HEADER};
use drs_core::concepts::{build_abstraction_index, q_distance, ConceptSubset};
use drs_core::hardness::{reduction_equivalence, CoverageInstance};
use drs_core::mdp::{greedy_policy, policy_value, value_iteration};
use drs_core::selection::{
    brute_force_select, build_instance, select_drs, select_drs_log, select_random, Algorithm,
    ObjectiveKind, SelectionInstance,
};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "drs",
    version,
    about = "Decision-relevant concept selection for tabular MDP policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one serialized selection instance and print the result.
    Select {
        /// Path to a selection-instance JSON file.
        #[arg(long)]
        config: PathBuf,
        /// One of: drs, drs-log, brute-force, random.
        #[arg(long, default_value = "drs")]
        algorithm: Algorithm,
        /// Seed for the random baseline (ignored by the exact solvers).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the result JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full experiment pipeline from a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep only these algorithms from the config's list (repeatable).
        #[arg(long)]
        algorithm: Vec<Algorithm>,
    },
    /// Run the pipeline once per value along one axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Which config list to walk: k, accuracy, or alpha.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        algorithm: Vec<Algorithm>,
    },
    /// Pipeline under noisy predictors with intervention levels (requires
    /// `accuracies` and a nonempty `alphas` list in the config).
    Intervene {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        algorithm: Vec<Algorithm>,
    },
    /// Build the two-action MDP for a weighted coverage instance and check
    /// that budgeted selection on it solves the coverage problem.
    Hardness {
        /// Path to a coverage-instance JSON file: {weights, sets, k}.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Walk through the four-state loop example end to end.
    Example1 {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Select { config, algorithm, seed, out } => select_cmd(&config, algorithm, seed, out),
        Command::Pipeline { config, seed, out, algorithm } => {
            let cfg = load_config(&config, seed, &algorithm)?;
            let start = Instant::now();
            let records = run_pipeline(&cfg)?;
            finish(&records, &cfg, out, "pipeline", start)
        }
        Command::Sweep { config, axis, seed, out, algorithm } => {
            let cfg = load_config(&config, seed, &algorithm)?;
            let start = Instant::now();
            let records = run_sweep(&cfg, axis)?;
            finish(&records, &cfg, out, &format!("sweep-{axis}"), start)
        }
        Command::Intervene { config, seed, out, algorithm } => {
            let cfg = load_config(&config, seed, &algorithm)?;
            if cfg.accuracies.is_none() || cfg.alphas.is_empty() {
                bail!("intervene needs `accuracies` and a nonempty `alphas` list in the config");
            }
            let start = Instant::now();
            let records = run_pipeline(&cfg)?;
            finish(&records, &cfg, out, "intervene", start)
        }
        Command::Hardness { config, out } => hardness_cmd(&config, out),
        Command::Example1 { out } => example1_cmd(out),
    }
}

fn load_config(path: &Path, seed: Option<u64>, filter: &[Algorithm]) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if !filter.is_empty() {
        cfg.algorithms.retain(|a| filter.contains(a));
    }
    Ok(cfg)
}

/// Writes CSV + JSONL under the output directory, or prints the CSV to
/// stdout when no directory is configured anywhere.
fn finish(
    records: &[RunRecord],
    cfg: &ExperimentConfig,
    out: Option<PathBuf>,
    stem: &str,
    start: Instant,
) -> anyhow::Result<()> {
    let elapsed = start.elapsed().as_millis();
    let dir = out.or_else(|| cfg.out.as_ref().map(PathBuf::from));
    match dir {
        Some(dir) => {
            let (csv, jsonl) = write_outputs(&dir, stem, records, cfg)?;
            eprintln!(
                "{} records in {} ms -> {}, {}",
                records.len(),
                elapsed,
                csv.display(),
                jsonl.display()
            );
        }
        None => {
            println!("{CSV_HEADER}");
            for r in records {
                println!("{}", csv_row(r));
            }
            eprintln!("{} records in {} ms", records.len(), elapsed);
        }
    }
    Ok(())
}

fn write_or_print(text: &str, out: Option<PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn select_cmd(
    config: &Path,
    algorithm: Algorithm,
    seed: u64,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config)
        .with_context(|| format!("reading instance {}", config.display()))?;
    let inst = SelectionInstance::from_json_str(&text)?;
    let start = Instant::now();
    let result = match algorithm {
        Algorithm::Drs => select_drs(&inst, false)?,
        Algorithm::DrsLog => select_drs_log(&inst)?,
        Algorithm::BruteForce => brute_force_select(&inst, ObjectiveKind::Hard, false)?,
        Algorithm::Random => baseline_result(
            &inst,
            algorithm,
            select_random(inst.n_concepts, inst.budget, seed)?,
            inst.rho,
        ),
        other => bail!("{other} needs environment context; use the pipeline command"),
    };
    eprintln!("solved in {} ms", start.elapsed().as_millis());
    write_or_print(&serde_json::to_string_pretty(&result)?, out)
}

fn hardness_cmd(config: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(config)
        .with_context(|| format!("reading instance {}", config.display()))?;
    let inst = CoverageInstance::from_json_str(&text)?;
    let start = Instant::now();
    let report = reduction_equivalence(&inst, VI_TOL)?;
    eprintln!("checked in {} ms", start.elapsed().as_millis());
    write_or_print(&serde_json::to_string_pretty(&report)?, out)
}

#[derive(Serialize)]
struct Example1Report {
    parity_policy_value: f64,
    third_policy_value: f64,
    optimal_value: f64,
    drs_selected: Vec<usize>,
    drs_selected_labels: Vec<String>,
}

/// Four-state loop: the parity concept alone supports a near-optimal
/// abstract policy, the third-position concept does not, and budget-1
/// selection picks parity.
fn example1_cmd(out: Option<PathBuf>) -> anyhow::Result<()> {
    use drs_core::abstraction::{lift_policy, uniform_weights, weighted_q_policy};

    let (mdp, bank) = drs_cli::envs::build_loop4(0)?;
    let q = value_iteration(&mdp, VI_TOL)?;
    let pi = greedy_policy(&q);
    let all_states: Vec<usize> = (0..mdp.n_states).collect();
    let optimal_value = mdp
        .mu
        .iter()
        .enumerate()
        .map(|(s, &m)| m * q.state_value(s))
        .sum();

    let single = |concept: usize| -> anyhow::Result<f64> {
        let subset = ConceptSubset::new(vec![concept], 1, bank.n_concepts())?;
        let index = build_abstraction_index(&bank, &subset, &all_states)?;
        let weights = uniform_weights(&index);
        let policy = weighted_q_policy(&q, &index, &weights)?;
        let lifted = lift_policy(&policy, &bank, &subset)?;
        Ok(policy_value(&mdp, &lifted.policy, VI_TOL)?)
    };
    let parity_policy_value = single(0)?;
    let third_policy_value = single(1)?;

    let d = q_distance(&q);
    let inst = build_instance(&bank, &d, &pi, &all_states, 1, 0.0)?;
    let sel = select_drs(&inst, false)?;
    let report = Example1Report {
        parity_policy_value,
        third_policy_value,
        optimal_value,
        drs_selected_labels: sel.subset.selected.iter().map(|&j| bank.labels[j].clone()).collect(),
        drs_selected: sel.subset.selected,
    };
    write_or_print(&serde_json::to_string_pretty(&report)?, out)
}
