//! Reduction from budgeted weighted set coverage to concept selection.
//!
//! A coverage instance (weighted elements, sets, budget `k`) maps to a small
//! episodic MDP plus a concept bank so that picking concepts under the
//! selection objective is exactly picking sets under coverage:
//!
//! - one start state fans out uniformly to `2n` terminal states, a left and
//!   a right twin per element `i`;
//! - the left twin pays `w_i` under action 0, the right twin pays `w_i`
//!   under action 1, so the twins sit exactly `w_i` apart in Q distance and
//!   an optimal policy must tell them apart to act well;
//! - concept `j` fires exactly on the right twins of the elements in set
//!   `j`, so a subset of concepts separates twin `i` iff the matching sets
//!   cover element `i`.
//!
//! Unseparated twins collapse into the start state's class, which prefers
//! action 0 (every left twin pulls that way), so the right twin of each
//! uncovered element forfeits its reward. The expected return of the
//! abstraction-induced policy is then an affine function of the covered
//! weight, making the two optimization problems interchangeable.

use serde::{Deserialize, Serialize};

use crate::abstraction::{lift_policy, uniform_weights, weighted_q_policy};
use crate::concepts::{build_abstraction_index, ConceptBank, ConceptSubset};
use crate::mdp::{value_iteration, policy_value, State, TabularMdp};
use crate::selection::{select_drs, SelectionInstance, SelectionPair};
use crate::{invalid, Error, Result};

/// Largest subset count the coverage oracle will enumerate.
const COVERAGE_LIMIT: u128 = 1_000_000;

/// Weighted maximum-coverage instance: pick at most `k` sets maximizing the
/// total weight of covered elements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageInstance {
    pub weights: Vec<f64>,
    pub sets: Vec<Vec<usize>>,
    pub k: usize,
}

impl CoverageInstance {
    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(invalid("need at least one element"));
        }
        if self.weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        if self.sets.is_empty() {
            return Err(invalid("need at least one set"));
        }
        if self.k > self.sets.len() {
            return Err(invalid(format!("budget {} exceeds {} sets", self.k, self.sets.len())));
        }
        for (j, set) in self.sets.iter().enumerate() {
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("set {j} must be sorted and unique")));
            }
            if set.iter().any(|&e| e >= self.weights.len()) {
                return Err(invalid(format!("set {j} has out-of-range elements")));
            }
        }
        Ok(())
    }

    pub fn n_elements(&self) -> usize {
        self.weights.len()
    }

    /// Total weight of elements covered by the chosen sets.
    pub fn covered_weight(&self, chosen: &[usize]) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|&(e, _)| chosen.iter().any(|&j| self.sets[j].binary_search(&e).is_ok()))
            .map(|(_, &w)| w)
            .sum()
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

/// State layout of the reduction MDP.
pub fn left_twin(i: usize) -> State {
    1 + 2 * i
}

pub fn right_twin(i: usize) -> State {
    2 + 2 * i
}

/// Builds the episodic MDP and bank described in the module docs: state 0
/// starts, both actions fan out uniformly over the `2n` terminal twins,
/// twin rewards encode the element weights, and concept `j` marks the right
/// twins of set `j`.
pub fn coverage_to_mdp(inst: &CoverageInstance) -> Result<(TabularMdp, ConceptBank)> {
    inst.validate()?;
    let n = inst.n_elements();
    let n_states = 1 + 2 * n;
    let mut mu = vec![0.0; n_states];
    mu[0] = 1.0;
    let mut rewards = vec![vec![0.0; 2]; n_states];
    let mut transitions = vec![vec![vec![0.0; n_states]; 2]; n_states];
    let arrival = 1.0 / (2 * n) as f64;
    for a in 0..2 {
        for i in 0..n {
            transitions[0][a][left_twin(i)] = arrival;
            transitions[0][a][right_twin(i)] = arrival;
        }
    }
    for i in 0..n {
        rewards[left_twin(i)][0] = inst.weights[i];
        rewards[right_twin(i)][1] = inst.weights[i];
        for a in 0..2 {
            transitions[left_twin(i)][a][left_twin(i)] = 1.0;
            transitions[right_twin(i)][a][right_twin(i)] = 1.0;
        }
    }
    let terminals: Vec<State> = (1..n_states).collect();
    let mdp = TabularMdp::new(1.0, mu, rewards, transitions, terminals)?;

    let labels = (0..inst.sets.len()).map(|j| format!("set_{j}")).collect();
    let mut matrix = vec![vec![0u8; n_states]; inst.sets.len()];
    for (j, set) in inst.sets.iter().enumerate() {
        for &e in set {
            matrix[j][right_twin(e)] = 1;
        }
    }
    let bank = ConceptBank::new(labels, matrix)?;
    Ok((mdp, bank))
}

/// The selection instance the reduction hands to the solver: one pair per
/// element, twin distance `w_i`, separable by exactly the sets containing
/// the element, action-relevant iff the weight is positive.
pub fn element_pairs_instance(inst: &CoverageInstance) -> Result<SelectionInstance> {
    inst.validate()?;
    let pairs = inst
        .weights
        .iter()
        .enumerate()
        .map(|(e, &w)| {
            let diff_mask: Vec<usize> = inst
                .sets
                .iter()
                .enumerate()
                .filter(|(_, set)| set.binary_search(&e).is_ok())
                .map(|(j, _)| j)
                .collect();
            SelectionPair { d: w, diff_mask, action_differs: w > 0.0 }
        })
        .collect();
    let selection = SelectionInstance {
        n_concepts: inst.sets.len(),
        budget: inst.k,
        rho: 0.0,
        pairs,
        accuracies: None,
    };
    selection.validate()?;
    Ok(selection)
}

/// Exhaustive maximum coverage: best covered weight over all subsets of at
/// most `k` sets, lexicographically smallest subset on ties. Refuses
/// instances with more than 10^6 candidate subsets.
pub fn brute_force_coverage(inst: &CoverageInstance) -> Result<(Vec<usize>, f64)> {
    inst.validate()?;
    let m = inst.sets.len();
    let mut count: u128 = 0;
    let mut choose: u128 = 1;
    for i in 0..=inst.k {
        if i > 0 {
            choose = choose.saturating_mul((m - i + 1) as u128) / i as u128;
        }
        count = count.saturating_add(choose);
    }
    if count > COVERAGE_LIMIT {
        return Err(Error::Unsupported(format!(
            "{count} candidate subsets exceed the enumeration limit of {COVERAGE_LIMIT}"
        )));
    }
    use itertools::Itertools;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for size in 0..=inst.k {
        for combo in (0..m).combinations(size) {
            let weight = inst.covered_weight(&combo);
            let improves = match &best {
                None => true,
                Some((subset, w)) => {
                    weight > *w || (weight == *w && combo.as_slice() < subset.as_slice())
                }
            };
            if improves {
                best = Some((combo, weight));
            }
        }
    }
    Ok(best.expect("at least the empty subset"))
}

/// Expected episodic return of the policy induced by choosing `chosen`:
/// every left twin pays out, covered right twins pay out, and the
/// `1/(2n)` arrival weight turns that into `(total + covered) / 2` after
/// scaling by `n`.
pub fn expected_return(inst: &CoverageInstance, chosen: &[usize]) -> f64 {
    let total: f64 = inst.weights.iter().sum();
    0.5 * (total + inst.covered_weight(chosen))
}

/// One end-to-end consistency check of the reduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionReport {
    pub n_elements: usize,
    pub n_sets: usize,
    pub budget: usize,
    /// Twin Q distances equal the element weights exactly.
    pub distances_match: bool,
    pub selected_sets: Vec<usize>,
    pub covered_weight: f64,
    pub best_covered_weight: f64,
    /// Affine coverage payoff `(total + covered) / 2` of the selection.
    pub expected_return: f64,
    /// `n * policy_value` of the lifted abstract policy, which the payoff
    /// formula must reproduce.
    pub scaled_policy_value: f64,
    pub pass: bool,
}

/// Runs the whole reduction: builds the MDP and bank, checks the twin
/// distances, solves selection exactly, compares its covered weight to the
/// coverage oracle, and verifies that the lifted abstract policy's value is
/// the predicted affine function of the covered weight.
pub fn reduction_equivalence(inst: &CoverageInstance, tol: f64) -> Result<ReductionReport> {
    let (mdp, bank) = coverage_to_mdp(inst)?;
    let q = value_iteration(&mdp, tol)?;

    let mut distances_match = true;
    for (i, &w) in inst.weights.iter().enumerate() {
        let (l, r) = (left_twin(i), right_twin(i));
        let d = q.values[l]
            .iter()
            .zip(&q.values[r])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if (d - w).abs() > 1e-9 {
            distances_match = false;
        }
    }

    let selection = element_pairs_instance(inst)?;
    let result = select_drs(&selection, false)?;
    let chosen = result.subset.selected.clone();
    let covered = inst.covered_weight(&chosen);
    let (_, best_covered) = brute_force_coverage(inst)?;

    let subset = ConceptSubset::new(chosen.clone(), inst.k, inst.sets.len())?;
    let observed: Vec<State> = (0..mdp.n_states).collect();
    let index = build_abstraction_index(&bank, &subset, &observed)?;
    let policy = weighted_q_policy(&q, &index, &uniform_weights(&index))?;
    let lifted = lift_policy(&policy, &bank, &subset)?;
    let value = policy_value(&mdp, &lifted.policy, tol)?;
    let scaled = inst.n_elements() as f64 * value;
    let expected = expected_return(inst, &chosen);

    let pass = distances_match
        && (covered - best_covered).abs() <= 1e-6
        && (expected - scaled).abs() <= 1e-6;
    Ok(ReductionReport {
        n_elements: inst.n_elements(),
        n_sets: inst.sets.len(),
        budget: inst.k,
        distances_match,
        selected_sets: chosen,
        covered_weight: covered,
        best_covered_weight: best_covered,
        expected_return: expected,
        scaled_policy_value: scaled,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_element_instance() -> CoverageInstance {
        CoverageInstance {
            weights: vec![3.0, 5.0],
            sets: vec![vec![0], vec![1], vec![0, 1]],
            k: 1,
        }
    }

    #[test]
    fn reduction_mdp_has_the_documented_shape() {
        let inst = two_element_instance();
        let (mdp, bank) = coverage_to_mdp(&inst).unwrap();
        assert_eq!(mdp.n_states, 5);
        assert_eq!(mdp.gamma, 1.0);
        assert!(mdp.is_terminal(left_twin(0)) && mdp.is_terminal(right_twin(1)));
        assert!(!mdp.is_terminal(0));
        assert_eq!(mdp.rewards[left_twin(1)], vec![5.0, 0.0]);
        assert_eq!(mdp.rewards[right_twin(1)], vec![0.0, 5.0]);
        // Concepts fire on right twins only.
        assert_eq!(bank.value(2, right_twin(0)), 1);
        assert_eq!(bank.value(2, left_twin(0)), 0);
        assert_eq!(bank.value(0, right_twin(1)), 0);
        assert_eq!(bank.value(0, 0), 0);
    }

    #[test]
    fn twin_distances_equal_the_weights() {
        let inst = two_element_instance();
        let (mdp, _) = coverage_to_mdp(&inst).unwrap();
        let q = value_iteration(&mdp, 1e-12).unwrap();
        for (i, &w) in inst.weights.iter().enumerate() {
            let d = q.values[left_twin(i)]
                .iter()
                .zip(&q.values[right_twin(i)])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert_abs_diff_eq!(d, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn selection_on_the_reduction_solves_coverage() {
        let inst = two_element_instance();
        let selection = element_pairs_instance(&inst).unwrap();
        let result = select_drs(&selection, false).unwrap();
        // The combined set covers weight 8; nothing else reaches it.
        assert_eq!(result.subset.selected, vec![2]);
        assert_abs_diff_eq!(result.objective, 0.0, epsilon = 1e-12);
        let (best, weight) = brute_force_coverage(&inst).unwrap();
        assert_eq!(best, vec![2]);
        assert_abs_diff_eq!(weight, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn report_ties_all_three_quantities_together() {
        let report = reduction_equivalence(&two_element_instance(), 1e-12).unwrap();
        assert!(report.pass);
        assert!(report.distances_match);
        assert_abs_diff_eq!(report.covered_weight, 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.best_covered_weight, 8.0, epsilon = 1e-12);
        // Total weight 8, covered 8: expected episodic payoff (8 + 8) / 2.
        assert_abs_diff_eq!(report.expected_return, 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.scaled_policy_value, 8.0, epsilon = 1e-9);
    }

    #[test]
    fn uncovered_weight_is_forfeited_by_the_induced_policy() {
        // Budget 1 with disjoint singletons: the best single set covers 5.
        let inst = CoverageInstance {
            weights: vec![3.0, 5.0],
            sets: vec![vec![0], vec![1]],
            k: 1,
        };
        let report = reduction_equivalence(&inst, 1e-12).unwrap();
        assert!(report.pass);
        assert_eq!(report.selected_sets, vec![1]);
        assert_abs_diff_eq!(report.covered_weight, 5.0, epsilon = 1e-12);
        // (8 + 5) / 2 on either route.
        assert_abs_diff_eq!(report.expected_return, 6.5, epsilon = 1e-12);
        assert_abs_diff_eq!(report.scaled_policy_value, 6.5, epsilon = 1e-9);
    }

    #[test]
    fn zero_weight_elements_are_not_action_relevant() {
        let inst = CoverageInstance {
            weights: vec![0.0, 2.0],
            sets: vec![vec![0, 1]],
            k: 1,
        };
        let selection = element_pairs_instance(&inst).unwrap();
        assert!(!selection.pairs[0].action_differs);
        assert!(selection.pairs[1].action_differs);
        assert!(reduction_equivalence(&inst, 1e-12).unwrap().pass);
    }

    #[test]
    fn coverage_ties_break_lexicographically() {
        let inst = CoverageInstance {
            weights: vec![4.0],
            sets: vec![vec![0], vec![0]],
            k: 1,
        };
        let (best, weight) = brute_force_coverage(&inst).unwrap();
        assert_eq!(best, vec![0]);
        assert_abs_diff_eq!(weight, 4.0, epsilon = 1e-12);
        let result = select_drs(&element_pairs_instance(&inst).unwrap(), false).unwrap();
        assert_eq!(result.subset.selected, vec![0]);
    }

    #[test]
    fn oversized_coverage_instances_are_refused() {
        let inst = CoverageInstance {
            weights: vec![1.0],
            sets: vec![vec![0]; 64],
            k: 32,
        };
        assert!(matches!(brute_force_coverage(&inst), Err(Error::Unsupported(_))));
    }

    #[test]
    fn instances_validate_their_shape() {
        let mut inst = two_element_instance();
        inst.sets[0] = vec![5];
        assert!(inst.validate().is_err());
        let unsorted = CoverageInstance {
            weights: vec![1.0, 1.0],
            sets: vec![vec![1, 0]],
            k: 1,
        };
        assert!(unsorted.validate().is_err());
        let over_budget = CoverageInstance {
            weights: vec![1.0],
            sets: vec![vec![0]],
            k: 2,
        };
        assert!(over_budget.validate().is_err());
    }

    #[test]
    fn coverage_instance_json_round_trip() {
        let inst = two_element_instance();
        let text = inst.to_json_string().unwrap();
        let back = CoverageInstance::from_json_str(&text).unwrap();
        assert_eq!(back.sets, inst.sets);
        assert_eq!(back.weights, inst.weights);
    }
}
