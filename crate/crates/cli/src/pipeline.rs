//! End-to-end experiment runner.
//!
//! One *cell* = one `(algorithm, seed)` pair: estimate Q, roll out the
//! greedy policy to see which states occur, build a selection instance,
//! select a concept subset, construct and lift the abstract policy, score
//! it exactly, and (when a noise model is configured) measure returns under
//! noisy predictors at each intervention level. Cells run in parallel;
//! records come back in deterministic `(algorithm, seed, alpha)` order.

use std::time::Instant;

use anyhow::{bail, Context};
use drs_core::abstraction::{bound_check, lift_policy, visitation_weights, weighted_q_policy};
use drs_core::concepts::{
    build_abstraction_index, q_distance, sample_flip_sets, ConceptBank, ConceptSubset,
};
use drs_core::intervention::{
    apply_intervention, effective_horizon, evaluate_under_noise, plan_intervention,
};
use drs_core::mdp::{
    greedy_policy, policy_value, rollout, td_q, value_iteration, QTable, Rollout, TabularMdp,
};
use drs_core::selection::{
    brute_force_select, build_instance_with_labels, select_drs, select_drs_log, select_greedy,
    select_random, select_variance, Algorithm, ObjectiveKind, Optimality, SelectionInstance,
    SelectionResult,
};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Normalization, QEstimation, SweepAxis};
use crate::records::RunRecord;

/// Tolerance for every exact value computation in the pipeline.
pub const VI_TOL: f64 = 1e-10;

// Seed salts keep the per-cell random streams independent.
const LABEL_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const NOISE_SALT: u64 = 0x85eb_ca6b_27d4_eb2f;
const PLAN_SALT: u64 = 0xc2b2_ae3d_1656_67b1;
const EVAL_SALT: u64 = 0x2545_f491_4f6c_dd1d;

fn normalized(raw: f64, norm: &Normalization) -> f64 {
    ((raw - norm.min) / (norm.max - norm.min) * 100.0).clamp(0.0, 100.0)
}

/// Samples `total_steps` of experience as episodes of at most `horizon`
/// steps, each restarting from the start distribution. Without restarts a
/// deterministic policy in a loop-structured environment absorbs into a
/// single cycle and the observed-state set degenerates.
fn collect_rollout(
    mdp: &TabularMdp,
    pi: &drs_core::mdp::PolicyTable,
    total_steps: usize,
    horizon: usize,
    seed: u64,
) -> drs_core::Result<Rollout> {
    let mut merged =
        Rollout { steps: Vec::with_capacity(total_steps), visit_count: vec![0; mdp.n_states] };
    let mut remaining = total_steps;
    let mut episode: u64 = 0;
    while remaining > 0 {
        let len = remaining.min(horizon);
        let ep_seed = seed ^ (episode + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let r = rollout(mdp, pi, len, ep_seed)?;
        for (s, c) in r.visit_count.iter().enumerate() {
            merged.visit_count[s] += c;
        }
        merged.steps.extend(r.steps);
        remaining -= len;
        episode += 1;
    }
    Ok(merged)
}

/// Wraps a heuristic baseline's subset in the result shape the exact
/// solvers return. `optimality` records only whether the subset happens to
/// meet the requested coverage fraction.
pub fn baseline_result(
    inst: &SelectionInstance,
    algorithm: Algorithm,
    subset: ConceptSubset,
    rho_target: f64,
) -> SelectionResult {
    let objective = inst.hard_objective_of(&subset);
    let epsilon = inst.epsilon_of(&subset);
    let (covered, total) = inst.coverage_of(&subset);
    let rho_used = if total == 0 { 1.0 } else { covered as f64 / total as f64 };
    let optimality = if rho_used + 1e-9 >= rho_target {
        Optimality::Exact
    } else {
        Optimality::FallbackInfeasible
    };
    SelectionResult { algorithm, subset, objective, epsilon, rho_used, optimality }
}

fn run_algorithm(
    inst: &SelectionInstance,
    bank: &ConceptBank,
    q: &QTable,
    roll: &Rollout,
    algorithm: Algorithm,
    seed: u64,
    rho_target: f64,
) -> anyhow::Result<SelectionResult> {
    Ok(match algorithm {
        Algorithm::Random => {
            baseline_result(inst, algorithm, select_random(inst.n_concepts, inst.budget, seed)?, rho_target)
        }
        Algorithm::Variance => {
            baseline_result(inst, algorithm, select_variance(bank, roll, inst.budget)?, rho_target)
        }
        Algorithm::Greedy => {
            baseline_result(inst, algorithm, select_greedy(bank, q, roll, inst.budget)?, rho_target)
        }
        Algorithm::Drs => select_drs(inst, false)?,
        Algorithm::DrsLog => select_drs_log(inst)?,
        Algorithm::BruteForce => brute_force_select(inst, ObjectiveKind::Hard, false)?,
        Algorithm::DrsSupervised => {
            bail!("drs-supervised consumes labeled example files, not environments")
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    mdp: &TabularMdp,
    bank: &ConceptBank,
    exact_q: &QTable,
    k: usize,
    accs: Option<&[f64]>,
    horizon: usize,
    algorithm: Algorithm,
    seed: u64,
) -> anyhow::Result<Vec<RunRecord>> {
    let start = Instant::now();

    let q = match cfg.q_estimation {
        QEstimation::Exact => exact_q.clone(),
        QEstimation::Td { steps, step_size } => {
            td_q(mdp, &greedy_policy(exact_q), steps, step_size, seed)?.q
        }
    };
    let pi = greedy_policy(&q);
    let roll = collect_rollout(mdp, &pi, cfg.rollout_steps, horizon, seed)?;
    let label_roll = collect_rollout(mdp, &pi, cfg.pair_label_steps, horizon, seed ^ LABEL_SALT)?;
    let observed = roll.distinct_states();
    let labeled = label_roll.distinct_states();
    let d = q_distance(&q);

    let mut inst = build_instance_with_labels(bank, &d, &pi, &observed, &labeled, k, cfg.rho)?;
    inst.accuracies = accs.map(<[f64]>::to_vec);

    let sel = run_algorithm(&inst, bank, &q, &roll, algorithm, seed, cfg.rho)
        .with_context(|| format!("selection failed for {algorithm} seed {seed}"))?;

    let index = build_abstraction_index(bank, &sel.subset, &observed)?;
    let weights = visitation_weights(&index, &roll)?;
    let abstract_policy = weighted_q_policy(&q, &index, &weights)?;
    let lifted = lift_policy(&abstract_policy, bank, &sel.subset)?;
    let raw = policy_value(mdp, &lifted.policy, VI_TOL)?;
    let report = bound_check(mdp, &lifted, sel.epsilon, VI_TOL)?;

    let base = RunRecord {
        env: cfg.environment.tag().to_string(),
        algorithm,
        seed,
        k,
        rho_used: sel.rho_used,
        epsilon: sel.epsilon,
        raw_return: raw,
        normalized_return: normalized(raw, &cfg.normalization),
        alpha: None,
        return_post_intervention: None,
        bound: report.bound,
        max_gap: report.max_gap,
        subset: sel.subset.selected.clone(),
        subset_labels: sel.subset.selected.iter().map(|&j| bank.labels[j].clone()).collect(),
        objective: sel.objective,
        optimality: sel.optimality,
        accuracies: accs.map(<[f64]>::to_vec),
        post_intervention_stderr: None,
        defaulted_states: lifted.defaulted.len(),
        wall_time_ms: 0,
    };

    let mut records = match accs {
        Some(accs) if !cfg.alphas.is_empty() => {
            let noise = sample_flip_sets(bank, accs, seed ^ NOISE_SALT)?;
            let mut out = Vec::with_capacity(cfg.alphas.len());
            for &alpha in &cfg.alphas {
                let plan = plan_intervention(&sel.subset, alpha, seed ^ PLAN_SALT)?;
                let corrected = apply_intervention(&noise, &plan)?;
                // Same evaluation seed across alphas: estimates are paired,
                // so differences reflect only the corrected concepts.
                let est = evaluate_under_noise(
                    mdp,
                    bank,
                    &sel.subset,
                    &abstract_policy,
                    &corrected,
                    cfg.noise_regime,
                    cfg.episodes,
                    horizon,
                    seed ^ EVAL_SALT,
                )?;
                let mut r = base.clone();
                r.alpha = Some(alpha);
                r.return_post_intervention = Some(est.mean);
                r.post_intervention_stderr = Some(est.stderr);
                out.push(r);
            }
            out
        }
        _ => vec![base],
    };

    let elapsed = start.elapsed().as_millis();
    for r in &mut records {
        r.wall_time_ms = elapsed;
    }
    Ok(records)
}

/// Runs every `(algorithm, seed)` cell of the config and returns records in
/// config order (algorithms outer, seeds inner, intervention levels last).
pub fn run_pipeline(cfg: &ExperimentConfig) -> anyhow::Result<Vec<RunRecord>> {
    cfg.validate()?;
    let (mdp, bank) = cfg.environment.build()?;
    let k = cfg.k.resolve(bank.n_concepts())?;
    let accs = cfg.accuracies.as_ref().map(|a| a.resolve(bank.n_concepts())).transpose()?;
    if accs.is_none() && !cfg.alphas.is_empty() {
        bail!("alphas were given but no accuracies; interventions need a noise model");
    }
    let exact_q = value_iteration(&mdp, VI_TOL)?;
    let horizon = match cfg.horizon {
        Some(h) if h > 0 => h,
        Some(_) => bail!("horizon must be positive"),
        None => effective_horizon(mdp.gamma)?,
    };

    let cells: Vec<(Algorithm, u64)> = cfg
        .algorithms
        .iter()
        .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let nested: Vec<Vec<RunRecord>> = cells
        .par_iter()
        .map(|&(algorithm, seed)| {
            run_cell(cfg, &mdp, &bank, &exact_q, k, accs.as_deref(), horizon, algorithm, seed)
        })
        .collect::<anyhow::Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Reruns the pipeline once per value along the chosen axis; the axis value
/// is the outermost record order.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis) -> anyhow::Result<Vec<RunRecord>> {
    let variants: Vec<ExperimentConfig> = match axis {
        SweepAxis::K => {
            let ks = cfg.k_values.as_ref().context("k sweep needs k_values in the config")?;
            if ks.is_empty() {
                bail!("k_values is empty");
            }
            ks.iter()
                .map(|kv| {
                    let mut c = cfg.clone();
                    c.k = *kv;
                    c
                })
                .collect()
        }
        SweepAxis::Accuracy => {
            let vals = cfg
                .accuracy_values
                .as_ref()
                .context("accuracy sweep needs accuracy_values in the config")?;
            if vals.is_empty() {
                bail!("accuracy_values is empty");
            }
            vals.iter()
                .map(|&v| {
                    let mut c = cfg.clone();
                    c.accuracies = Some(crate::config::AccuracySpec::Scalar(v));
                    c
                })
                .collect()
        }
        SweepAxis::Alpha => {
            if cfg.alphas.is_empty() {
                bail!("alpha sweep needs alphas in the config");
            }
            if cfg.accuracies.is_none() {
                bail!("alpha sweep needs accuracies in the config");
            }
            cfg.alphas
                .iter()
                .map(|&a| {
                    let mut c = cfg.clone();
                    c.alphas = vec![a];
                    c
                })
                .collect()
        }
    };
    let nested: Vec<Vec<RunRecord>> =
        variants.par_iter().map(run_pipeline).collect::<anyhow::Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}
