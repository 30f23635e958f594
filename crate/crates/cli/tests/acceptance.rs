//! End-to-end acceptance suite. Every test is an independent gate: it
//! asserts its full claim at the stated tolerance and prints one
//! `ACCEPTANCE <n> <name>: PASS` line once the assertions hold.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::PathBuf;
use std::time::Instant;

use drs_cli::config::ExperimentConfig;
use drs_cli::pipeline::{run_pipeline, run_sweep};
use drs_cli::records::{write_outputs, RunRecord};
use drs_core::abstraction::{bound_check, lift_policy, uniform_weights, weighted_q_policy};
use drs_core::concepts::{
    abstraction_error, adversarial_perturbation, apply_noise, build_abstraction_index, q_distance,
    separation_probability, ConceptBank, ConceptSubset,
};
use drs_core::hardness::{reduction_equivalence, CoverageInstance};
use drs_core::mdp::{greedy_policy, policy_value, value_iteration, TabularMdp};
use drs_core::selection::synthetic::random_synthetic;
use drs_core::selection::{
    brute_force_select, build_instance, select_drs, select_drs_log, Algorithm, ObjectiveKind,
};
use drs_core::rng;
use rand::Rng;

fn pass(n: usize, name: &str) {
    println!("ACCEPTANCE {n} {name}: PASS");
}

fn workspace_config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

/// Four-state loop: the parity concept alone recovers the optimal return
/// 9.5; the third-position concept is strictly worse; budget-1 selection
/// finds parity. All under exact values, in under a second.
#[test]
fn acceptance_1_loop4_walkthrough() {
    let start = Instant::now();
    let (mdp, bank) = drs_cli::envs::build_loop4(0).unwrap();
    let q = value_iteration(&mdp, 1e-10).unwrap();
    let all: Vec<usize> = (0..mdp.n_states).collect();

    let value_of = |concept: usize| -> f64 {
        let subset = ConceptSubset::new(vec![concept], 1, bank.n_concepts()).unwrap();
        let index = build_abstraction_index(&bank, &subset, &all).unwrap();
        let policy = weighted_q_policy(&q, &index, &uniform_weights(&index)).unwrap();
        let lifted = lift_policy(&policy, &bank, &subset).unwrap();
        policy_value(&mdp, &lifted.policy, 1e-10).unwrap()
    };
    let parity = value_of(0);
    let third = value_of(1);
    assert!((parity - 9.5).abs() < 1e-3, "parity-concept policy value {parity}");
    assert!(third < parity - 1e-6, "third-position value {third} not strictly below {parity}");
    // Oracle value of the third-position abstraction, frozen: the merged
    // class {0,1,3} averages to action `left`, giving (9.1+9+10+9)/4... the
    // actual exact figure is 9.0725 = (9.1 + 8.19 + 10 + 9) / 4.
    assert!((third - 9.0725).abs() < 1e-3, "third-position value drifted: {third}");

    let pi = greedy_policy(&q);
    let d = q_distance(&q);
    let inst = build_instance(&bank, &d, &pi, &all, 1, 0.0).unwrap();
    let sel = select_drs(&inst, false).unwrap();
    assert_eq!(sel.subset.selected, vec![0], "budget-1 selection must pick parity");
    assert!(start.elapsed().as_secs_f64() < 1.0, "walkthrough exceeded 1 s");
    pass(1, "loop4-walkthrough");
}

/// Every subset of at most `budget` concepts, by index, smallest sets first
/// within the recursion (covers sizes 0..=budget).
fn for_each_subset(n: usize, budget: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(n: usize, budget: usize, start: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        f(cur);
        if cur.len() == budget {
            return;
        }
        for j in start..n {
            cur.push(j);
            rec(n, budget, j + 1, cur, f);
            cur.pop();
        }
    }
    rec(n, budget, 0, &mut Vec::new(), f);
}

/// Budgeted selection is exactly optimal: on 50 random instances the
/// branch-and-bound answer matches exhaustive enumeration bit for bit, in
/// both the relaxed and the ordered-separation mode, and the ordered mode
/// attains the true minimum abstraction error over all feasible subsets.
#[test]
fn acceptance_2_exact_selection_optimality() {
    let start = Instant::now();
    for i in 0..50u64 {
        let synth = random_synthetic(9_000 + i, 12, 4, 30);
        let inst = synth.instance(0.0);
        for ordered in [false, true] {
            let sel = select_drs(&inst, ordered).unwrap();
            let oracle = brute_force_select(&inst, ObjectiveKind::Hard, ordered).unwrap();
            assert_eq!(
                sel.subset.selected, oracle.subset.selected,
                "instance {i} ordered={ordered}"
            );
            assert_eq!(sel.objective.to_bits(), oracle.objective.to_bits());
            assert_eq!(sel.epsilon.to_bits(), oracle.epsilon.to_bits());
        }

        let ordered_sel = select_drs(&inst, true).unwrap();
        let mut min_eps = f64::INFINITY;
        for_each_subset(inst.n_concepts, inst.budget, &mut |subset| {
            let s = ConceptSubset::new(subset.to_vec(), inst.budget, inst.n_concepts).unwrap();
            min_eps = min_eps.min(inst.epsilon_of(&s));
        });
        assert_eq!(
            ordered_sel.epsilon.to_bits(),
            min_eps.to_bits(),
            "instance {i}: ordered mode missed the minimum abstraction error"
        );
    }
    assert!(start.elapsed().as_secs_f64() < 60.0, "optimality sweep exceeded 1 min");
    pass(2, "exact-selection-optimality");
}

/// Selecting on value estimates corrupted by up to `delta` per entry costs
/// at most `4 * delta` extra abstraction error, with zero violations over
/// 100 trials.
#[test]
fn acceptance_3_selection_robust_to_q_noise() {
    let deltas = [0.01, 0.05, 0.1, 0.2];
    let mut violations = 0;
    for trial in 0..100u64 {
        let delta = deltas[(trial % 4) as usize];
        let synth = random_synthetic(4_000 + trial, 10, 3, 20);
        let clean = synth.instance(0.0);
        let corrupted = synth.perturbed_instance(0.0, delta, 77 + trial);
        let clean_sel = select_drs(&clean, true).unwrap();
        let corrupted_sel = select_drs(&corrupted, true).unwrap();
        let eps_star = clean.epsilon_of(&clean_sel.subset);
        let eps_hat = clean.epsilon_of(&corrupted_sel.subset);
        if eps_hat > eps_star + 4.0 * delta + 1e-9 {
            violations += 1;
            eprintln!("trial {trial} delta {delta}: {eps_hat} > {eps_star} + 4d");
        }
    }
    assert_eq!(violations, 0, "{violations} robustness violations");
    pass(3, "selection-robust-to-q-noise");
}

fn random_mdp(seed: u64) -> TabularMdp {
    let mut r = rng::seeded(seed);
    let n = r.gen_range(2..=12);
    let a = r.gen_range(2..=4);
    let gamma = [0.8, 0.9, 0.95][r.gen_range(0..3)];
    let mut mu: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..1.0)).collect();
    let z: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|m| *m /= z);
    let rewards: Vec<Vec<f64>> =
        (0..n).map(|_| (0..a).map(|_| r.gen_range(0.0..1.0)).collect()).collect();
    let transitions: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|_| {
            (0..a)
                .map(|_| {
                    let mut row: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..1.0)).collect();
                    let z: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= z);
                    row
                })
                .collect()
        })
        .collect();
    TabularMdp::new(gamma, mu, rewards, transitions, vec![]).unwrap()
}

fn random_bank(seed: u64, n_states: usize) -> (ConceptBank, ConceptSubset) {
    let mut r = rng::seeded(seed ^ 0x00ab_cdef);
    let k = r.gen_range(2..=5);
    let matrix: Vec<Vec<u8>> =
        (0..k).map(|_| (0..n_states).map(|_| r.gen_range(0..2u8)).collect()).collect();
    let bank = ConceptBank { labels: (0..k).map(|j| format!("c{j}")).collect(), matrix };
    let size = r.gen_range(1..=k);
    let mut idxs: Vec<usize> = (0..k).collect();
    for i in 0..size {
        let j = r.gen_range(i..k);
        idxs.swap(i, j);
    }
    let mut selected = idxs[..size].to_vec();
    selected.sort_unstable();
    (bank, ConceptSubset::new(selected, size, k).unwrap())
}

/// The value shortfall of a lifted weighted-Q abstract policy never exceeds
/// `2 * epsilon / (1 - gamma)^2` on 200 random MDPs with random subsets.
#[test]
fn acceptance_4_abstraction_error_value_bound() {
    let mut violations = 0;
    for seed in 0..200u64 {
        let mdp = random_mdp(31_000 + seed);
        let (bank, subset) = random_bank(seed, mdp.n_states);
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let all: Vec<usize> = (0..mdp.n_states).collect();
        let index = build_abstraction_index(&bank, &subset, &all).unwrap();
        let policy = weighted_q_policy(&q, &index, &uniform_weights(&index)).unwrap();
        let lifted = lift_policy(&policy, &bank, &subset).unwrap();
        let eps = abstraction_error(&index, &q_distance(&q));
        let report = bound_check(&mdp, &lifted, eps, 1e-10).unwrap();
        if !report.pass {
            violations += 1;
            eprintln!("seed {seed}: gap {} > bound {}", report.max_gap, report.bound);
        }
    }
    assert_eq!(violations, 0, "{violations} bound violations");
    pass(4, "abstraction-error-value-bound");
}

/// When every predictor is imperfect, flipping the needed concepts at a
/// single state of the farthest pair collapses that pair into one abstract
/// class, driving the abstraction error exactly to the maximum distance.
#[test]
fn acceptance_5_adversarial_noise_attains_max_distance() {
    for seed in 0..100u64 {
        let mdp = random_mdp(52_000 + seed);
        let (bank, subset) = random_bank(1_000 + seed, mdp.n_states);
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let d = q_distance(&q);
        let mut r = rng::seeded(seed ^ 0x5eed);
        let accuracies: Vec<f64> =
            (0..bank.n_concepts()).map(|_| r.gen_range(0.5..0.999)).collect();
        let spec = adversarial_perturbation(&bank, &subset, &d, &accuracies).unwrap();
        assert!(
            spec.flip_sets.iter().all(|t| t.len() <= 1),
            "seed {seed}: flip sets must touch at most one state"
        );
        let noisy = apply_noise(&bank, &spec).unwrap();
        let all: Vec<usize> = (0..mdp.n_states).collect();
        let index = build_abstraction_index(&noisy, &subset, &all).unwrap();
        let eps = abstraction_error(&index, &d);
        let max_d = d.max_pair().unwrap().2;
        assert_eq!(eps.to_bits(), max_d.to_bits(), "seed {seed}: {eps} != {max_d}");
    }
    pass(5, "adversarial-noise-attains-max-distance");
}

/// Two independent predictions of a differing bit stay different with
/// probability `delta^2 + (1-delta)^2`: Monte Carlo agreement within 0.02
/// at 10^5 samples. With perfect predictors the noise-aware solver returns
/// the deterministic solver's objective on every shared instance.
#[test]
fn acceptance_6_separation_probability_constant() {
    for (i, &delta) in [0.0, 0.25, 0.5, 0.75, 1.0].iter().enumerate() {
        let mut r = rng::substream(123, i as u64);
        let samples = 100_000;
        let mut preserved = 0u64;
        for _ in 0..samples {
            let first_right = r.gen_range(0.0..1.0) < delta;
            let second_right = r.gen_range(0.0..1.0) < delta;
            if first_right == second_right {
                preserved += 1;
            }
        }
        let freq = preserved as f64 / samples as f64;
        let expected = separation_probability(delta).unwrap();
        assert!(
            (freq - expected).abs() < 0.02,
            "delta {delta}: observed {freq}, expected {expected}"
        );
    }

    for seed in 0..25u64 {
        let synth = random_synthetic(7_000 + seed, 10, 3, 20);
        for rho in [0.0, 0.75] {
            let mut inst = synth.instance(rho);
            inst.accuracies = Some(vec![1.0; inst.n_concepts]);
            let log_sel = select_drs_log(&inst).unwrap();
            let hard_sel = select_drs(&inst, false).unwrap();
            assert_eq!(log_sel.subset.selected, hard_sel.subset.selected, "seed {seed}");
            assert_eq!(log_sel.objective.to_bits(), hard_sel.objective.to_bits());
        }
    }
    pass(6, "separation-probability-constant");
}

/// Exhaustive grid of weighted coverage instances (n, m <= 6, k <= 3, three
/// seeded draws each = 270 instances): the closed-form expected return
/// matches the lifted policy's exact value, and budgeted concept selection
/// on the constructed MDP recovers the brute-force optimal covered weight.
#[test]
fn acceptance_7_coverage_reduction_equivalence() {
    let start = Instant::now();
    let mut checked = 0;
    for n in 1..=6usize {
        for m in 1..=6usize {
            for k in 1..=m.min(3) {
                for rep in 0..3u64 {
                    let seed = (((n * 7 + m) * 11 + k) as u64) * 131 + rep;
                    let mut r = rng::seeded(seed);
                    let weights: Vec<f64> = (0..n).map(|_| r.gen_range(0..10) as f64).collect();
                    let sets: Vec<Vec<usize>> = (0..m)
                        .map(|_| {
                            let mut set: Vec<usize> =
                                (0..n).filter(|_| r.gen_range(0..2) == 1).collect();
                            if set.is_empty() {
                                set.push(r.gen_range(0..n));
                            }
                            set
                        })
                        .collect();
                    let inst = CoverageInstance { weights, sets, k };
                    let report = reduction_equivalence(&inst, 1e-10).unwrap();
                    assert!(
                        (report.expected_return - report.scaled_policy_value).abs() <= 1e-6,
                        "n={n} m={m} k={k} rep={rep}: return mismatch {report:?}"
                    );
                    assert!(
                        (report.covered_weight - report.best_covered_weight).abs() <= 1e-6,
                        "n={n} m={m} k={k} rep={rep}: coverage suboptimal {report:?}"
                    );
                    assert!(report.pass, "n={n} m={m} k={k} rep={rep}: {report:?}");
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 270, "grid size changed");
    assert!(start.elapsed().as_secs_f64() < 120.0, "reduction grid exceeded 2 min");
    pass(7, "coverage-reduction-equivalence");
}

/// Statistical orderings on the key-door world, means over the configured
/// seeds (ties allowed): decision-driven selection is at least as good as
/// every baseline, and correcting half the predictors under noise does not
/// hurt relative to no correction.
#[test]
fn acceptance_8_keydoor_orderings() {
    let cfg = workspace_config("keydoor.json");
    let records = run_pipeline(&cfg).unwrap();
    let mean_of = |alg: Algorithm| -> f64 {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.algorithm == alg)
            .map(|r| r.normalized_return)
            .collect();
        assert_eq!(vals.len(), cfg.seeds.len(), "{alg}: one record per seed");
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let drs_mean = mean_of(Algorithm::Drs);
    for alg in [Algorithm::Random, Algorithm::Variance, Algorithm::Greedy] {
        let other = mean_of(alg);
        assert!(
            drs_mean + 1e-9 >= other,
            "{alg} mean {other} beats drs mean {drs_mean}"
        );
    }

    let icfg = workspace_config("keydoor_intervention.json");
    let irecords = run_pipeline(&icfg).unwrap();
    let alpha_mean = |alpha: f64| -> f64 {
        let vals: Vec<f64> = irecords
            .iter()
            .filter(|r| r.algorithm == Algorithm::Drs && r.alpha == Some(alpha))
            .map(|r| r.return_post_intervention.unwrap())
            .collect();
        assert_eq!(vals.len(), icfg.seeds.len(), "alpha {alpha}: one record per seed");
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let pre = alpha_mean(0.0);
    let post = alpha_mean(0.5);
    assert!(post + 1e-9 >= pre, "post-intervention mean {post} below pre mean {pre}");
    pass(8, "keydoor-orderings");
}

fn csv_bytes(records: &[RunRecord], cfg: &ExperimentConfig) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = write_outputs(dir.path(), "run", records, cfg).unwrap();
    std::fs::read(csv).unwrap()
}

/// Two fully independent executions of the same config produce
/// byte-identical CSV files, for both the pipeline and a sweep.
#[test]
fn acceptance_9_deterministic_outputs() {
    let cfg = workspace_config("keydoor.json");
    let first = csv_bytes(&run_pipeline(&cfg).unwrap(), &cfg);
    let second = csv_bytes(&run_pipeline(&cfg).unwrap(), &cfg);
    assert_eq!(first, second, "pipeline CSV differs between runs");

    let lcfg = workspace_config("loop4.json");
    let axis = drs_cli::config::SweepAxis::K;
    let sweep_first = csv_bytes(&run_sweep(&lcfg, axis).unwrap(), &lcfg);
    let sweep_second = csv_bytes(&run_sweep(&lcfg, axis).unwrap(), &lcfg);
    assert_eq!(sweep_first, sweep_second, "sweep CSV differs between runs");
    pass(9, "deterministic-outputs");
}
