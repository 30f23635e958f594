//! Exact solvers for the selection objectives.
//!
//! Both the branch-and-bound solvers and the brute-force oracle run on a
//! compacted view of the instance: pairs with identical `(diff_mask,
//! action_differs)` behave identically under every subset, so they are
//! merged with summed distances and a multiplicity count. Compaction and the
//! leaf evaluation are shared between solver and oracle, which keeps float
//! summation order identical on both routes; what differs is the search.
//!
//! Branch-and-bound walks concepts in index order, branching on inclusion
//! (include-first). The bound at a node is the objective with every
//! undecided concept included while ignoring the budget; since adding
//! concepts never increases the objective and never decreases coverage,
//! that bound is admissible, and a node whose maximal coverage misses the
//! requirement can be discarded. Ties are broken toward the
//! lexicographically smallest subset (sorted index lists, prefixes first):
//! a subtree is pruned at an equal bound only if the incumbent is already
//! lexicographically no larger than everything the subtree can produce.

use itertools::Itertools;

use crate::concepts::{separation_probability, ConceptSubset};
use crate::selection::{Algorithm, Optimality, SelectionInstance, SelectionResult};
use crate::{invalid, Error, Result};

/// Which objective the exact solvers optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// A selected mask concept separates its pairs outright.
    Hard,
    /// Separation survives predictor noise only with the disagreement
    /// probability of each selected mask concept; residuals multiply.
    NoiseAware,
}

/// Slack for coverage comparisons (absorbs the 0.05 fallback decrement's
/// binary representation error).
const COV_SLACK: f64 = 1e-9;

/// Largest subset count the brute-force oracle will enumerate.
const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Exact branch-and-bound for the hard objective. With `enforce_p1c`, pair
/// separations must follow the distance order (larger distances separate
/// first), which turns the optimum into a minimizer of the worst unseparated
/// distance.
pub fn select_drs(inst: &SelectionInstance, enforce_p1c: bool) -> Result<SelectionResult> {
    solve(inst, ObjectiveKind::Hard, enforce_p1c, SearchStrategy::BranchAndBound, Algorithm::Drs)
}

/// Exact branch-and-bound for the noise-aware objective; requires per-concept
/// accuracies on the instance. An accuracy of 1 makes a concept separate its
/// pairs exactly, recovering the hard objective.
pub fn select_drs_log(inst: &SelectionInstance) -> Result<SelectionResult> {
    solve(inst, ObjectiveKind::NoiseAware, false, SearchStrategy::BranchAndBound, Algorithm::DrsLog)
}

/// Exhaustive oracle: enumerates every subset within budget and returns the
/// best under the same objective and constraints as the corresponding
/// solver. Refuses instances with more than 10^6 candidate subsets.
pub fn brute_force_select(
    inst: &SelectionInstance,
    kind: ObjectiveKind,
    enforce_p1c: bool,
) -> Result<SelectionResult> {
    let subsets = subsets_within_budget(inst.n_concepts, inst.budget);
    if subsets > BRUTE_FORCE_LIMIT {
        return Err(Error::Unsupported(format!(
            "{subsets} candidate subsets exceed the enumeration limit of {BRUTE_FORCE_LIMIT}"
        )));
    }
    solve(inst, kind, enforce_p1c, SearchStrategy::Enumerate, Algorithm::BruteForce)
}

fn subsets_within_budget(n: usize, k: usize) -> u128 {
    let mut total: u128 = 0;
    let mut choose: u128 = 1;
    for i in 0..=k.min(n) {
        if i > 0 {
            choose = choose.saturating_mul((n - i + 1) as u128) / i as u128;
        }
        total = total.saturating_add(choose);
        if total > BRUTE_FORCE_LIMIT {
            break;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SearchStrategy {
    BranchAndBound,
    Enumerate,
}

fn solve(
    inst: &SelectionInstance,
    kind: ObjectiveKind,
    enforce_p1c: bool,
    strategy: SearchStrategy,
    algorithm: Algorithm,
) -> Result<SelectionResult> {
    inst.validate()?;
    if kind == ObjectiveKind::NoiseAware && enforce_p1c {
        return Err(invalid("ordered separation is only defined for the hard objective"));
    }
    let compact = CompactInstance::build(inst, kind)?;
    let mut rho_used = inst.rho;
    loop {
        let required = rho_used * compact.n_action_pairs;
        let found = match strategy {
            SearchStrategy::BranchAndBound => {
                branch_and_bound(&compact, kind, enforce_p1c, inst.budget, required)
            }
            SearchStrategy::Enumerate => {
                enumerate_all(&compact, kind, enforce_p1c, inst.budget, required)
            }
        };
        if let Some((selected, eval)) = found {
            let subset = ConceptSubset::new(selected, inst.budget, inst.n_concepts)?;
            let optimality = if rho_used == inst.rho {
                Optimality::Exact
            } else {
                Optimality::FallbackInfeasible
            };
            return Ok(SelectionResult {
                algorithm,
                subset,
                objective: eval.objective,
                epsilon: eval.epsilon,
                rho_used,
                optimality,
            });
        }
        // Coverage infeasible at this rho; relax and retry. rho = 0 is
        // always feasible, so the loop terminates.
        debug_assert!(rho_used > 0.0);
        rho_used = (rho_used - 0.05).max(0.0);
        if rho_used < 1e-12 {
            rho_used = 0.0;
        }
    }
}

/// Pairs merged by identical `(diff_mask, action_differs)`.
struct CompactInstance {
    masks: Vec<Vec<usize>>,
    /// Sum of distances of the merged raw pairs.
    d_sum: Vec<f64>,
    /// Largest single distance among them (for the abstraction error).
    d_max: Vec<f64>,
    /// Number of raw action-differing pairs merged into the group.
    action_count: Vec<f64>,
    n_concepts: usize,
    /// Total number of raw action-differing pairs.
    n_action_pairs: f64,
    /// Groups containing each concept.
    incidence: Vec<Vec<usize>>,
    /// Per-concept residual factor `1 - p_j` (noise-aware only).
    factors: Option<Vec<f64>>,
    /// All raw distances ascending, with prefix sums (ordered mode).
    sorted_d: Vec<f64>,
    prefix_d: Vec<f64>,
    /// Raw distances of action-differing pairs, ascending (ordered mode).
    sorted_action_d: Vec<f64>,
}

impl CompactInstance {
    fn build(inst: &SelectionInstance, kind: ObjectiveKind) -> Result<Self> {
        let factors = match kind {
            ObjectiveKind::Hard => None,
            ObjectiveKind::NoiseAware => {
                let acc = inst.accuracies.as_ref().ok_or_else(|| {
                    invalid("the noise-aware objective needs per-concept accuracies")
                })?;
                let f: Vec<f64> = acc
                    .iter()
                    .map(|&delta| separation_probability(delta).map(|p| 1.0 - p))
                    .collect::<Result<_>>()?;
                Some(f)
            }
        };

        let mut masks: Vec<Vec<usize>> = Vec::new();
        let mut keys: std::collections::HashMap<(Vec<usize>, bool), usize> =
            std::collections::HashMap::new();
        let mut d_sum: Vec<f64> = Vec::new();
        let mut d_max: Vec<f64> = Vec::new();
        let mut action_count: Vec<f64> = Vec::new();
        let mut is_action = Vec::new();
        for pair in &inst.pairs {
            let key = (pair.diff_mask.clone(), pair.action_differs);
            let g = *keys.entry(key).or_insert_with(|| {
                masks.push(pair.diff_mask.clone());
                d_sum.push(0.0);
                d_max.push(0.0);
                action_count.push(0.0);
                is_action.push(pair.action_differs);
                masks.len() - 1
            });
            d_sum[g] += pair.d;
            d_max[g] = d_max[g].max(pair.d);
            if pair.action_differs {
                action_count[g] += 1.0;
            }
        }
        let n_action_pairs: f64 = action_count.iter().sum();
        let mut incidence = vec![Vec::new(); inst.n_concepts];
        for (g, mask) in masks.iter().enumerate() {
            for &j in mask {
                incidence[j].push(g);
            }
        }
        let mut sorted_d: Vec<f64> = inst.pairs.iter().map(|p| p.d).collect();
        sorted_d.sort_by(f64::total_cmp);
        let mut prefix_d = Vec::with_capacity(sorted_d.len() + 1);
        prefix_d.push(0.0);
        for &d in &sorted_d {
            prefix_d.push(prefix_d.last().unwrap() + d);
        }
        let mut sorted_action_d: Vec<f64> =
            inst.pairs.iter().filter(|p| p.action_differs).map(|p| p.d).collect();
        sorted_action_d.sort_by(f64::total_cmp);
        Ok(Self {
            masks,
            d_sum,
            d_max,
            action_count,
            n_concepts: inst.n_concepts,
            n_action_pairs,
            incidence,
            factors,
            sorted_d,
            prefix_d,
            sorted_action_d,
        })
    }

    fn n_groups(&self) -> usize {
        self.masks.len()
    }

    /// Total distance of raw pairs with `d <= eps`: the ordered-mode
    /// objective as a function of the attained abstraction error.
    fn ordered_objective(&self, eps: f64) -> f64 {
        let upto = self.sorted_d.partition_point(|&d| d <= eps);
        self.prefix_d[upto]
    }

    /// Number of raw action-differing pairs with `d > eps`: the ordered-mode
    /// coverage as a function of the attained abstraction error.
    fn ordered_coverage(&self, eps: f64) -> f64 {
        (self.sorted_action_d.len() - self.sorted_action_d.partition_point(|&d| d <= eps)) as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct Eval {
    objective: f64,
    coverage: f64,
    epsilon: f64,
}

/// Objective, coverage, and abstraction error of a fully decided subset.
/// Single evaluation path shared by the leafs of the search and by the
/// brute-force oracle.
fn evaluate(
    compact: &CompactInstance,
    kind: ObjectiveKind,
    enforce_p1c: bool,
    selected: &[bool],
) -> Eval {
    // Abstraction error always uses outright separation.
    let mut epsilon: f64 = 0.0;
    for g in 0..compact.n_groups() {
        if !compact.masks[g].iter().any(|&j| selected[j]) {
            epsilon = epsilon.max(compact.d_max[g]);
        }
    }
    if enforce_p1c {
        return Eval {
            objective: compact.ordered_objective(epsilon),
            coverage: compact.ordered_coverage(epsilon),
            epsilon,
        };
    }
    match kind {
        ObjectiveKind::Hard => {
            let mut objective = 0.0;
            let mut coverage = 0.0;
            for g in 0..compact.n_groups() {
                if compact.masks[g].iter().any(|&j| selected[j]) {
                    coverage += compact.action_count[g];
                } else {
                    objective += compact.d_sum[g];
                }
            }
            Eval { objective, coverage, epsilon }
        }
        ObjectiveKind::NoiseAware => {
            let factors = compact.factors.as_ref().expect("factors built for noise-aware");
            let mut objective = 0.0;
            let mut coverage = 0.0;
            for g in 0..compact.n_groups() {
                let mut residual = 1.0;
                for &j in &compact.masks[g] {
                    if selected[j] {
                        residual *= factors[j];
                    }
                }
                objective += compact.d_sum[g] * residual;
                coverage += compact.action_count[g] * (1.0 - residual);
            }
            Eval { objective, coverage, epsilon }
        }
    }
}

/// Incremental per-group state during the search. Only exclusions mutate it:
/// bounds evaluate "every not-yet-excluded concept included", so the
/// still-possible separator set per group is all that matters. The integer
/// counters reverse exactly; the noise-aware log-residuals roll back through
/// a snapshot stack so backtracking restores bit-identical floats.
struct SearchState<'a> {
    compact: &'a CompactInstance,
    kind: ObjectiveKind,
    enforce_p1c: bool,
    /// Not-yet-excluded mask concepts per group.
    pot_hits: Vec<u32>,
    /// Noise-aware: log-residual over not-yet-excluded mask concepts with a
    /// positive factor, plus the count of exact-zero factors among them.
    pot_log: Vec<f64>,
    pot_zero: Vec<u32>,
    undo: Vec<(usize, f64, u32)>,
    undo_marks: Vec<usize>,
}

impl<'a> SearchState<'a> {
    fn new(compact: &'a CompactInstance, kind: ObjectiveKind, enforce_p1c: bool) -> Self {
        let g = compact.n_groups();
        let mut state = Self {
            compact,
            kind,
            enforce_p1c,
            pot_hits: compact.masks.iter().map(|m| m.len() as u32).collect(),
            pot_log: vec![0.0; g],
            pot_zero: vec![0; g],
            undo: Vec::new(),
            undo_marks: Vec::new(),
        };
        if let Some(factors) = &compact.factors {
            for (gi, mask) in compact.masks.iter().enumerate() {
                for &j in mask {
                    if factors[j] == 0.0 {
                        state.pot_zero[gi] += 1;
                    } else {
                        state.pot_log[gi] += factors[j].ln();
                    }
                }
            }
        }
        state
    }

    fn exclude(&mut self, j: usize) {
        for &g in &self.compact.incidence[j] {
            self.pot_hits[g] -= 1;
        }
        if self.kind == ObjectiveKind::NoiseAware {
            self.undo_marks.push(self.undo.len());
            let f = self.compact.factors.as_ref().unwrap()[j];
            for &g in &self.compact.incidence[j] {
                self.undo.push((g, self.pot_log[g], self.pot_zero[g]));
                if f == 0.0 {
                    self.pot_zero[g] -= 1;
                } else {
                    self.pot_log[g] -= f.ln();
                }
            }
        }
    }

    fn undo_exclude(&mut self, j: usize) {
        for &g in &self.compact.incidence[j] {
            self.pot_hits[g] += 1;
        }
        if self.kind == ObjectiveKind::NoiseAware {
            let mark = self.undo_marks.pop().expect("rollback without snapshot");
            while self.undo.len() > mark {
                let (g, pl, pz) = self.undo.pop().unwrap();
                self.pot_log[g] = pl;
                self.pot_zero[g] = pz;
            }
        }
    }

    /// Objective if every undecided concept were included (budget ignored):
    /// a lower bound on any completion of this node.
    fn bound_objective(&self) -> f64 {
        if self.enforce_p1c {
            return self.compact.ordered_objective(self.min_epsilon());
        }
        match self.kind {
            ObjectiveKind::Hard => {
                let mut bound = 0.0;
                for g in 0..self.compact.n_groups() {
                    if self.pot_hits[g] == 0 {
                        bound += self.compact.d_sum[g];
                    }
                }
                bound
            }
            ObjectiveKind::NoiseAware => {
                let mut bound = 0.0;
                for g in 0..self.compact.n_groups() {
                    if self.pot_zero[g] == 0 {
                        bound += self.compact.d_sum[g] * self.pot_log[g].exp();
                    }
                }
                bound
            }
        }
    }

    /// Coverage if every undecided concept were included: an upper bound.
    fn bound_coverage(&self) -> f64 {
        if self.enforce_p1c {
            return self.compact.ordered_coverage(self.min_epsilon());
        }
        match self.kind {
            ObjectiveKind::Hard => {
                let mut cov = 0.0;
                for g in 0..self.compact.n_groups() {
                    if self.pot_hits[g] > 0 {
                        cov += self.compact.action_count[g];
                    }
                }
                cov
            }
            ObjectiveKind::NoiseAware => {
                let mut cov = 0.0;
                for g in 0..self.compact.n_groups() {
                    let residual =
                        if self.pot_zero[g] > 0 { 0.0 } else { self.pot_log[g].exp() };
                    cov += self.compact.action_count[g] * (1.0 - residual);
                }
                cov
            }
        }
    }

    /// Smallest abstraction error any completion can reach: the largest
    /// distance among groups with no possible separator left.
    fn min_epsilon(&self) -> f64 {
        let mut eps: f64 = 0.0;
        for g in 0..self.compact.n_groups() {
            if self.pot_hits[g] == 0 {
                eps = eps.max(self.compact.d_max[g]);
            }
        }
        eps
    }

    /// Safety margin for bound comparisons; nonzero only where the bound is
    /// assembled from drifting float accumulators.
    fn bound_margin(&self, best: f64) -> f64 {
        match self.kind {
            ObjectiveKind::Hard => 0.0,
            ObjectiveKind::NoiseAware => 1e-12 * (1.0 + best.abs()),
        }
    }
}

fn branch_and_bound(
    compact: &CompactInstance,
    kind: ObjectiveKind,
    enforce_p1c: bool,
    budget: usize,
    required_cov: f64,
) -> Option<(Vec<usize>, Eval)> {
    let mut state = SearchState::new(compact, kind, enforce_p1c);
    let mut chosen: Vec<usize> = Vec::new();
    let mut selected = vec![false; compact.n_concepts];
    let mut best: Option<(Vec<usize>, Eval)> = None;
    recurse(
        0,
        budget,
        required_cov,
        &mut state,
        &mut chosen,
        &mut selected,
        &mut best,
    );
    best
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    depth: usize,
    budget_left: usize,
    required_cov: f64,
    state: &mut SearchState<'_>,
    chosen: &mut Vec<usize>,
    selected: &mut Vec<bool>,
    best: &mut Option<(Vec<usize>, Eval)>,
) {
    // Looser than the leaf feasibility check: the interior coverage bound
    // for the noise-aware objective comes from log accumulators and may sit
    // a hair below the direct product a leaf computes.
    if state.bound_coverage() < required_cov - 2.0 * COV_SLACK {
        return;
    }
    let bound = state.bound_objective();
    if let Some((best_subset, best_eval)) = best {
        if bound > best_eval.objective + state.bound_margin(best_eval.objective) {
            return;
        }
        // Equal bound: everything below extends `chosen`, so nothing here
        // can be lexicographically smaller than an incumbent that already
        // compares <= to the prefix. Hard-objective bounds and leaf values
        // share exact float identities; noise-aware ones drift, so there the
        // tie prune is skipped and ties are explored.
        if state.kind == ObjectiveKind::Hard
            && bound == best_eval.objective
            && best_subset.as_slice() <= chosen.as_slice()
        {
            return;
        }
    }
    if depth == state.compact.n_concepts {
        let eval = evaluate(state.compact, state.kind, state.enforce_p1c, selected);
        if eval.coverage < required_cov - COV_SLACK {
            return;
        }
        let improves = match best {
            None => true,
            Some((best_subset, best_eval)) => {
                eval.objective < best_eval.objective
                    || (eval.objective == best_eval.objective
                        && chosen.as_slice() < best_subset.as_slice())
            }
        };
        if improves {
            *best = Some((chosen.clone(), eval));
        }
        return;
    }
    if budget_left > 0 {
        chosen.push(depth);
        selected[depth] = true;
        recurse(depth + 1, budget_left - 1, required_cov, state, chosen, selected, best);
        selected[depth] = false;
        chosen.pop();
    }
    state.exclude(depth);
    recurse(depth + 1, budget_left, required_cov, state, chosen, selected, best);
    state.undo_exclude(depth);
}

fn enumerate_all(
    compact: &CompactInstance,
    kind: ObjectiveKind,
    enforce_p1c: bool,
    budget: usize,
    required_cov: f64,
) -> Option<(Vec<usize>, Eval)> {
    let mut best: Option<(Vec<usize>, Eval)> = None;
    let mut selected = vec![false; compact.n_concepts];
    for size in 0..=budget.min(compact.n_concepts) {
        for combo in (0..compact.n_concepts).combinations(size) {
            selected.iter_mut().for_each(|b| *b = false);
            for &j in &combo {
                selected[j] = true;
            }
            let eval = evaluate(compact, kind, enforce_p1c, &selected);
            if eval.coverage < required_cov - COV_SLACK {
                continue;
            }
            let improves = match &best {
                None => true,
                Some((best_subset, best_eval)) => {
                    eval.objective < best_eval.objective
                        || (eval.objective == best_eval.objective
                            && combo.as_slice() < best_subset.as_slice())
                }
            };
            if improves {
                best = Some((combo, eval));
            }
        }
    }
    best
}
