//! Budgeted concept-subset selection.
//!
//! A [`SelectionInstance`] lists pairs of abstract states (grouped by full
//! bank codes) with their Q distance `d`, the concepts that could tell them
//! apart (`diff_mask`), and whether an optimal policy acts differently on
//! them. Selecting a subset `x` of at most `budget` concepts separates a
//! pair iff some selected concept lies in its mask; the solvers minimize the
//! total distance left unseparated, subject to covering at least a `rho`
//! fraction of the action-relevant pairs:
//!
//! - [`solver::select_drs`]: exact branch-and-bound on the hard objective
//!   `sum d * (1 - separated)`, optionally with the ordered-separation rule
//!   that makes the optimum minimize the worst unseparated distance.
//! - [`solver::select_drs_log`]: noise-aware variant where a selected
//!   concept separates a pair only with the probability that two independent
//!   predictions still disagree; residuals multiply across selected mask
//!   concepts.
//! - [`solver::brute_force_select`]: exhaustive oracle over all subsets
//!   within budget, same objectives and constraints.
//! - Baselines: uniform random, Bernoulli-variance ranking, and a
//!   within-class Q-spread heuristic.
//! - [`select_drs_supervised`]: label-separation variant that reads
//!   labeled concept vectors instead of an MDP.

pub mod solver;
pub mod synthetic;

pub use solver::{brute_force_select, select_drs, select_drs_log, ObjectiveKind};

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::concepts::{build_abstraction_index, ConceptBank, ConceptSubset, QDistance};
use crate::mdp::{PolicyTable, QTable, Rollout, State};
use crate::rng;
use crate::{invalid, Result};

/// One pair of abstract states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionPair {
    /// Largest Q distance between ground members of the two classes.
    pub d: f64,
    /// Sorted concepts whose bits differ between the two codes.
    pub diff_mask: Vec<usize>,
    /// Whether some cross pair of (labeled) ground members takes different
    /// actions under the reference policy.
    pub action_differs: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionInstance {
    pub n_concepts: usize,
    pub budget: usize,
    /// Required fraction of action-differing pairs to separate, in [0, 1].
    pub rho: f64,
    pub pairs: Vec<SelectionPair>,
    /// Per-concept predictor accuracies; required by the noise-aware solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracies: Option<Vec<f64>>,
}

impl SelectionInstance {
    pub fn validate(&self) -> Result<()> {
        if self.budget > self.n_concepts {
            return Err(invalid(format!(
                "budget {} exceeds {} concepts",
                self.budget, self.n_concepts
            )));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid(format!("rho {} outside [0, 1]", self.rho)));
        }
        for (i, pair) in self.pairs.iter().enumerate() {
            if !(pair.d >= 0.0 && pair.d.is_finite()) {
                return Err(invalid(format!("pair {i}: distance must be finite and >= 0")));
            }
            if pair.diff_mask.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("pair {i}: diff_mask must be sorted and unique")));
            }
            if pair.diff_mask.iter().any(|&j| j >= self.n_concepts) {
                return Err(invalid(format!("pair {i}: concept index out of range")));
            }
        }
        if let Some(acc) = &self.accuracies {
            if acc.len() != self.n_concepts {
                return Err(invalid("one accuracy per concept"));
            }
            if acc.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
                return Err(invalid("accuracies must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Whether `selected` separates the pair (some selected concept in the mask).
    fn pair_separated(pair: &SelectionPair, selected: &[bool]) -> bool {
        pair.diff_mask.iter().any(|&j| selected[j])
    }

    fn selected_mask(&self, subset: &ConceptSubset) -> Vec<bool> {
        let mut mask = vec![false; self.n_concepts];
        for &j in &subset.selected {
            mask[j] = true;
        }
        mask
    }

    /// Abstraction error the subset leaves behind: the largest distance over
    /// pairs it does not separate.
    pub fn epsilon_of(&self, subset: &ConceptSubset) -> f64 {
        let mask = self.selected_mask(subset);
        self.pairs
            .iter()
            .filter(|p| !Self::pair_separated(p, &mask))
            .map(|p| p.d)
            .fold(0.0, f64::max)
    }

    /// Hard objective: total distance left unseparated by the subset.
    pub fn hard_objective_of(&self, subset: &ConceptSubset) -> f64 {
        let mask = self.selected_mask(subset);
        self.pairs
            .iter()
            .filter(|p| !Self::pair_separated(p, &mask))
            .map(|p| p.d)
            .sum()
    }

    /// `(separated action-differing pairs, all action-differing pairs)`.
    pub fn coverage_of(&self, subset: &ConceptSubset) -> (usize, usize) {
        let mask = self.selected_mask(subset);
        let total = self.pairs.iter().filter(|p| p.action_differs).count();
        let covered = self
            .pairs
            .iter()
            .filter(|p| p.action_differs && Self::pair_separated(p, &mask))
            .count();
        (covered, total)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let inst: Self = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Builds the pair instance for a bank over a set of observed states: states
/// are grouped by their full-bank codes, one pair per distinct pair of
/// groups, `d` maxed over ground cross pairs, action flags from the supplied
/// policy.
pub fn build_instance(
    bank: &ConceptBank,
    d: &QDistance,
    pi: &PolicyTable,
    observed: &[State],
    k: usize,
    rho: f64,
) -> Result<SelectionInstance> {
    build_instance_with_labels(bank, d, pi, observed, observed, k, rho)
}

/// Like [`build_instance`], but the action-differs flag only consults ground
/// pairs whose two states both carry a policy label (distances still use all
/// observed states). Pairs with no labeled representative default to
/// `action_differs = false`.
pub fn build_instance_with_labels(
    bank: &ConceptBank,
    d: &QDistance,
    pi: &PolicyTable,
    observed: &[State],
    labeled: &[State],
    k: usize,
    rho: f64,
) -> Result<SelectionInstance> {
    let n_concepts = bank.n_concepts();
    if k > n_concepts {
        return Err(invalid(format!("budget {k} exceeds {n_concepts} concepts")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid(format!("rho {rho} outside [0, 1]")));
    }
    if d.n_states() != bank.n_states() {
        return Err(invalid("distance matrix and bank disagree on n_states"));
    }
    if pi.actions.len() != bank.n_states() {
        return Err(invalid("policy and bank disagree on n_states"));
    }
    let full = ConceptSubset::new((0..n_concepts).collect(), n_concepts, n_concepts)?;
    let index = build_abstraction_index(bank, &full, observed)?;
    let mut labeled: Vec<State> = labeled.to_vec();
    labeled.sort_unstable();
    labeled.dedup();
    let has_label = |s: State| labeled.binary_search(&s).is_ok();

    let mut pairs = Vec::new();
    for i in 0..index.classes.len() {
        for j in (i + 1)..index.classes.len() {
            let (zi, zj) = (&index.classes[i], &index.classes[j]);
            let diff_mask: Vec<usize> = (0..n_concepts)
                .filter(|&c| zi.code[c] != zj.code[c])
                .collect();
            let mut dist: f64 = 0.0;
            let mut action_differs = false;
            for &s in &zi.members {
                for &t in &zj.members {
                    dist = dist.max(d.get(s, t));
                    if !action_differs
                        && has_label(s)
                        && has_label(t)
                        && pi.action(s) != pi.action(t)
                    {
                        action_differs = true;
                    }
                }
            }
            pairs.push(SelectionPair { d: dist, diff_mask, action_differs });
        }
    }
    let inst = SelectionInstance { n_concepts, budget: k, rho, pairs, accuracies: None };
    inst.validate()?;
    Ok(inst)
}

/// Which selector produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Random,
    Variance,
    Greedy,
    Drs,
    DrsLog,
    DrsSupervised,
    BruteForce,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Algorithm::Random => "random",
            Algorithm::Variance => "variance",
            Algorithm::Greedy => "greedy",
            Algorithm::Drs => "drs",
            Algorithm::DrsLog => "drs-log",
            Algorithm::DrsSupervised => "drs-supervised",
            Algorithm::BruteForce => "brute-force",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Algorithm::Random),
            "variance" => Ok(Algorithm::Variance),
            "greedy" => Ok(Algorithm::Greedy),
            "drs" => Ok(Algorithm::Drs),
            "drs-log" => Ok(Algorithm::DrsLog),
            "drs-supervised" => Ok(Algorithm::DrsSupervised),
            "brute-force" => Ok(Algorithm::BruteForce),
            other => Err(invalid(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Whether the requested coverage fraction was met, or had to be lowered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimality {
    Exact,
    FallbackInfeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub algorithm: Algorithm,
    pub subset: ConceptSubset,
    /// Objective value attained (model-specific).
    pub objective: f64,
    /// Abstraction error left by the subset on this instance.
    pub epsilon: f64,
    /// Coverage fraction actually enforced (after any fallback decrements).
    pub rho_used: f64,
    pub optimality: Optimality,
}

/// Uniform random subset of exactly `k` of `n_concepts` concepts.
pub fn select_random(n_concepts: usize, k: usize, seed: u64) -> Result<ConceptSubset> {
    if k > n_concepts {
        return Err(invalid(format!("budget {k} exceeds {n_concepts} concepts")));
    }
    let mut rng = rng::seeded(seed);
    let selected: Vec<usize> = sample_indices(&mut rng, n_concepts, k).into_iter().collect();
    ConceptSubset::new(selected, k, n_concepts)
}

/// Ranks concepts by the visitation-weighted Bernoulli variance
/// `p_hat * (1 - p_hat)` of their bit and keeps the `k` largest
/// (smallest index on ties). High-variance concepts split the visited
/// states most evenly; nothing about decisions is consulted.
pub fn select_variance(bank: &ConceptBank, roll: &Rollout, k: usize) -> Result<ConceptSubset> {
    if k > bank.n_concepts() {
        return Err(invalid(format!("budget {k} exceeds {} concepts", bank.n_concepts())));
    }
    if roll.visit_count.len() != bank.n_states() {
        return Err(invalid("rollout and bank disagree on n_states"));
    }
    let total = roll.total_visits();
    if total == 0 {
        return Err(invalid("rollout must visit at least one state"));
    }
    let mut scored: Vec<(f64, usize)> = (0..bank.n_concepts())
        .map(|j| {
            let on: u64 = roll
                .visit_count
                .iter()
                .enumerate()
                .filter(|&(s, _)| bank.value(j, s) == 1)
                .map(|(_, &c)| c)
                .sum();
            let p = on as f64 / total as f64;
            (p * (1.0 - p), j)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ConceptSubset::new(scored.into_iter().take(k).map(|(_, j)| j).collect(), k, bank.n_concepts())
}

/// Ranks concepts by how tightly they group Q values: for each concept, the
/// population standard deviation of `Q(s, a)` over visited states with the
/// bit on plus the same with the bit off, summed over actions; keeps the `k`
/// smallest scores (smallest index on ties). Empty sides contribute zero.
pub fn select_greedy(
    bank: &ConceptBank,
    q: &QTable,
    roll: &Rollout,
    k: usize,
) -> Result<ConceptSubset> {
    if k > bank.n_concepts() {
        return Err(invalid(format!("budget {k} exceeds {} concepts", bank.n_concepts())));
    }
    if q.n_states() != bank.n_states() {
        return Err(invalid("Q table and bank disagree on n_states"));
    }
    if roll.visit_count.len() != bank.n_states() {
        return Err(invalid("rollout and bank disagree on n_states"));
    }
    let visited = roll.distinct_states();
    if visited.is_empty() {
        return Err(invalid("rollout must visit at least one state"));
    }
    let std_of = |states: &[State], a: usize| -> f64 {
        if states.len() < 2 {
            return 0.0;
        }
        let n = states.len() as f64;
        let mean: f64 = states.iter().map(|&s| q.values[s][a]).sum::<f64>() / n;
        let var: f64 =
            states.iter().map(|&s| (q.values[s][a] - mean).powi(2)).sum::<f64>() / n;
        var.sqrt()
    };
    let mut scored: Vec<(f64, usize)> = (0..bank.n_concepts())
        .map(|j| {
            let (on, off): (Vec<State>, Vec<State>) =
                visited.iter().partition(|&&s| bank.value(j, s) == 1);
            let score: f64 =
                (0..q.n_actions()).map(|a| std_of(&on, a) + std_of(&off, a)).sum();
            (score, j)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ConceptSubset::new(scored.into_iter().take(k).map(|(_, j)| j).collect(), k, bank.n_concepts())
}

/// Supervised variant: given labeled concept vectors, separates as many
/// label-differing example pairs as the budget allows (each such pair enters
/// with unit distance and counts as action-relevant).
pub fn select_drs_supervised(
    examples: &[(Vec<u8>, u64)],
    k: usize,
    rho: f64,
) -> Result<SelectionResult> {
    let first = examples.first().ok_or_else(|| invalid("need at least one example"))?;
    let n_concepts = first.0.len();
    if n_concepts == 0 {
        return Err(invalid("examples must have at least one concept"));
    }
    if examples.iter().any(|(v, _)| v.len() != n_concepts) {
        return Err(invalid("all example vectors must have equal length"));
    }
    if examples.iter().any(|(v, _)| v.iter().any(|&b| b > 1)) {
        return Err(invalid("example vectors must be bits"));
    }
    let mut pairs = Vec::new();
    for i in 0..examples.len() {
        for j in (i + 1)..examples.len() {
            if examples[i].1 == examples[j].1 {
                continue;
            }
            let diff_mask: Vec<usize> = (0..n_concepts)
                .filter(|&c| examples[i].0[c] != examples[j].0[c])
                .collect();
            pairs.push(SelectionPair { d: 1.0, diff_mask, action_differs: true });
        }
    }
    let inst = SelectionInstance { n_concepts, budget: k, rho, pairs, accuracies: None };
    inst.validate()?;
    let mut result = select_drs(&inst, false)?;
    result.algorithm = Algorithm::DrsSupervised;
    Ok(result)
}
