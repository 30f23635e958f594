//! Binary concept banks, code-based abstractions, Q distances, and a
//! flip-set noise model for imperfect concept predictors.
//!
//! A concept is a binary function of the state; a bank stacks `K` of them
//! into a bit matrix. A subset of concepts maps each state to a short code;
//! states sharing a code are indistinguishable to any policy that only sees
//! those concepts. The quality of that merge is measured against the
//! max-norm distance between Q rows: the abstraction error of an index is
//! the largest distance between two states that ended up in the same class.
//!
//! Predictor noise is modeled with explicit flip sets: concept `i` reports
//! the wrong bit exactly on the states in `T_i`. Sampling `T_i` uniformly
//! with `|T_i| = round((1 - delta_i) * n_states)` realizes a per-concept
//! accuracy of `delta_i`; an adversary may instead place the flips.

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::mdp::{QTable, State};
use crate::rng;
use crate::{invalid, Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConceptBank {
    pub labels: Vec<String>,
    /// `matrix[concept][state]`, entries 0 or 1.
    pub matrix: Vec<Vec<u8>>,
}

impl ConceptBank {
    pub fn new(labels: Vec<String>, matrix: Vec<Vec<u8>>) -> Result<Self> {
        let bank = Self { labels, matrix };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix.is_empty() {
            return Err(invalid("bank needs at least one concept"));
        }
        if self.labels.len() != self.matrix.len() {
            return Err(invalid("one label per concept row"));
        }
        let n = self.matrix[0].len();
        if n == 0 {
            return Err(invalid("bank needs at least one state"));
        }
        for (j, row) in self.matrix.iter().enumerate() {
            if row.len() != n {
                return Err(invalid(format!("concept {j}: row length {} != {n}", row.len())));
            }
            if row.iter().any(|&b| b > 1) {
                return Err(invalid(format!("concept {j}: entries must be bits")));
            }
        }
        Ok(())
    }

    pub fn n_concepts(&self) -> usize {
        self.matrix.len()
    }

    pub fn n_states(&self) -> usize {
        self.matrix[0].len()
    }

    pub fn value(&self, concept: usize, s: State) -> u8 {
        self.matrix[concept][s]
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let bank: Self = serde_json::from_str(text)?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// An ordered set of concept indices together with the budget it was chosen
/// under (`selected.len() <= budget`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSubset {
    /// Strictly increasing concept indices.
    pub selected: Vec<usize>,
    pub budget: usize,
}

impl ConceptSubset {
    pub fn new(mut selected: Vec<usize>, budget: usize, n_concepts: usize) -> Result<Self> {
        selected.sort_unstable();
        selected.dedup();
        if selected.len() > budget {
            return Err(invalid(format!(
                "{} concepts exceed budget {budget}",
                selected.len()
            )));
        }
        if let Some(&j) = selected.iter().find(|&&j| j >= n_concepts) {
            return Err(invalid(format!("concept index {j} out of range")));
        }
        Ok(Self { selected, budget })
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// The code a subset assigns to a state: the selected concepts' bits in
/// subset order.
pub fn encode(bank: &ConceptBank, subset: &ConceptSubset, s: State) -> Vec<u8> {
    subset.selected.iter().map(|&j| bank.value(j, s)).collect()
}

/// One equivalence class of an abstraction: the shared code and the member
/// states (ascending).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstractClass {
    pub code: Vec<u8>,
    pub members: Vec<State>,
}

/// Grouping of a set of observed states by their subset codes. Classes are
/// ordered by first appearance over ascending state index, so construction
/// is deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbstractionIndex {
    pub classes: Vec<AbstractClass>,
}

impl AbstractionIndex {
    pub fn n_distinct(&self) -> usize {
        self.classes.len()
    }

    /// Class index of a state, if it was among the observed states.
    pub fn class_of(&self, s: State) -> Option<usize> {
        self.classes.iter().position(|c| c.members.binary_search(&s).is_ok())
    }
}

/// Groups `observed` states by their codes under `subset`.
pub fn build_abstraction_index(
    bank: &ConceptBank,
    subset: &ConceptSubset,
    observed: &[State],
) -> Result<AbstractionIndex> {
    if observed.is_empty() {
        return Err(invalid("observed states must be nonempty"));
    }
    let mut observed: Vec<State> = observed.to_vec();
    observed.sort_unstable();
    observed.dedup();
    if let Some(&s) = observed.iter().find(|&&s| s >= bank.n_states()) {
        return Err(invalid(format!("observed state {s} out of range")));
    }
    let mut classes: Vec<AbstractClass> = Vec::new();
    for &s in &observed {
        let code = encode(bank, subset, s);
        match classes.iter_mut().find(|c| c.code == code) {
            Some(class) => class.members.push(s),
            None => classes.push(AbstractClass { code, members: vec![s] }),
        }
    }
    Ok(AbstractionIndex { classes })
}

/// Dense max-norm distances between Q rows: `d[s][s'] = max_a |Q(s,a) - Q(s',a)|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QDistance {
    pub d: Vec<Vec<f64>>,
}

impl QDistance {
    pub fn get(&self, s: State, t: State) -> f64 {
        self.d[s][t]
    }

    pub fn n_states(&self) -> usize {
        self.d.len()
    }

    /// Largest distance over distinct pairs, with the first pair (by `s < t`
    /// scan order) attaining it. `None` when fewer than two states exist.
    pub fn max_pair(&self) -> Option<(State, State, f64)> {
        let n = self.d.len();
        let mut best: Option<(State, State, f64)> = None;
        for s in 0..n {
            for t in (s + 1)..n {
                if best.is_none_or(|(_, _, b)| self.d[s][t] > b) {
                    best = Some((s, t, self.d[s][t]));
                }
            }
        }
        best
    }
}

/// Pairwise max-norm distances between the rows of a Q table.
pub fn q_distance(q: &QTable) -> QDistance {
    let n = q.n_states();
    let mut d = vec![vec![0.0; n]; n];
    for s in 0..n {
        for t in (s + 1)..n {
            let dist = q.values[s]
                .iter()
                .zip(&q.values[t])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            d[s][t] = dist;
            d[t][s] = dist;
        }
    }
    QDistance { d }
}

/// Largest distance between two states that share a class: how much the
/// abstraction can confuse the Q function. Zero when every class is a
/// singleton.
pub fn abstraction_error(index: &AbstractionIndex, d: &QDistance) -> f64 {
    let mut eps: f64 = 0.0;
    for class in &index.classes {
        for (i, &s) in class.members.iter().enumerate() {
            for &t in &class.members[i + 1..] {
                eps = eps.max(d.get(s, t));
            }
        }
    }
    eps
}

/// Probability that two independent predictions of a truly-differing concept
/// still differ, when each is correct with probability `delta`.
pub fn separation_probability(delta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(invalid(format!("accuracy {delta} outside [0, 1]")));
    }
    Ok(delta * delta + (1.0 - delta) * (1.0 - delta))
}

/// Noise model for concept predictors: concept `i` is reported flipped
/// exactly on the states in `flip_sets[i]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Per-concept accuracy `delta_i` in [0, 1].
    pub accuracies: Vec<f64>,
    /// Per-concept sorted state lists where the prediction is wrong.
    pub flip_sets: Vec<Vec<State>>,
    /// Seed the flip sets were sampled with (0 for constructed specs).
    pub seed: u64,
}

impl NoiseSpec {
    /// Perfect predictors: accuracy 1 and empty flip sets for `k` concepts.
    pub fn noiseless(k: usize) -> Self {
        Self { accuracies: vec![1.0; k], flip_sets: vec![Vec::new(); k], seed: 0 }
    }

    pub fn validate(&self, n_states: usize) -> Result<()> {
        if self.accuracies.len() != self.flip_sets.len() {
            return Err(invalid("one flip set per concept"));
        }
        if self.accuracies.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(invalid("accuracies must lie in [0, 1]"));
        }
        for (i, set) in self.flip_sets.iter().enumerate() {
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("flip set {i} must be sorted and unique")));
            }
            if set.iter().any(|&s| s >= n_states) {
                return Err(invalid(format!("flip set {i} has out-of-range states")));
            }
        }
        Ok(())
    }
}

/// Samples uniform flip sets realizing the given accuracies:
/// `|T_i| = round((1 - delta_i) * n_states)` states without replacement.
/// Deterministic given `seed`.
pub fn sample_flip_sets(bank: &ConceptBank, accuracies: &[f64], seed: u64) -> Result<NoiseSpec> {
    if accuracies.len() != bank.n_concepts() {
        return Err(invalid("one accuracy per concept"));
    }
    if accuracies.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
        return Err(invalid("accuracies must lie in [0, 1]"));
    }
    let n = bank.n_states();
    let mut rng = rng::seeded(seed);
    let mut flip_sets = Vec::with_capacity(accuracies.len());
    for &delta in accuracies {
        let t = ((1.0 - delta) * n as f64).round() as usize;
        let mut set: Vec<State> = sample_indices(&mut rng, n, t).into_iter().collect();
        set.sort_unstable();
        flip_sets.push(set);
    }
    Ok(NoiseSpec { accuracies: accuracies.to_vec(), flip_sets, seed })
}

/// The bank as seen through noisy predictors: every `(i, s)` with
/// `s in flip_sets[i]` is reported flipped. Applying the same spec twice
/// returns the original bank.
pub fn apply_noise(bank: &ConceptBank, spec: &NoiseSpec) -> Result<ConceptBank> {
    spec.validate(bank.n_states())?;
    if spec.accuracies.len() != bank.n_concepts() {
        return Err(invalid("spec covers a different number of concepts"));
    }
    let mut matrix = bank.matrix.clone();
    for (i, set) in spec.flip_sets.iter().enumerate() {
        for &s in set {
            matrix[i][s] ^= 1;
        }
    }
    Ok(ConceptBank { labels: bank.labels.clone(), matrix })
}

/// Worst-case noise against a chosen subset: single-state flips that merge a
/// maximally-distant pair of states.
///
/// Finds the first pair `(s, t)` attaining the largest distance, and flips,
/// at `s` only, every selected concept that distinguishes `s` from `t`. The
/// perturbed codes of `s` and `t` then agree, so the abstraction error under
/// the perturbed bank reaches the maximal distance no matter how small the
/// flip budget implied by the accuracies is, provided every needed concept
/// has accuracy strictly below 1. If the subset already merges the pair, all
/// flip sets are empty.
pub fn adversarial_perturbation(
    bank: &ConceptBank,
    subset: &ConceptSubset,
    d: &QDistance,
    accuracies: &[f64],
) -> Result<NoiseSpec> {
    if accuracies.len() != bank.n_concepts() {
        return Err(invalid("one accuracy per concept"));
    }
    if d.n_states() != bank.n_states() {
        return Err(invalid("distance matrix and bank disagree on n_states"));
    }
    let (s, t, _) = d
        .max_pair()
        .ok_or_else(|| invalid("need at least two states"))?;
    let needed: Vec<usize> = subset
        .selected
        .iter()
        .copied()
        .filter(|&j| bank.value(j, s) != bank.value(j, t))
        .collect();
    if let Some(&j) = needed.iter().find(|&&j| accuracies[j] >= 1.0) {
        return Err(Error::Infeasible(format!(
            "concept {j} must flip at state {s} but its accuracy is 1"
        )));
    }
    let mut flip_sets = vec![Vec::new(); bank.n_concepts()];
    for &j in &needed {
        flip_sets[j] = vec![s];
    }
    Ok(NoiseSpec { accuracies: accuracies.to_vec(), flip_sets, seed: 0 })
}
