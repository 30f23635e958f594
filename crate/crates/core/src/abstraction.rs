//! Policies over abstract states and their lift back to the ground MDP.
//!
//! An abstract policy assigns one action per concept code. Two
//! constructions are provided:
//!
//! - weighted-Q: per class, act greedily on the weight-averaged Q row of
//!   the members;
//! - induced-MDP: aggregate rewards and transitions into an abstract MDP
//!   with the class weights, solve it exactly, and read off its greedy
//!   policy.
//!
//! Lifting maps every ground state through its code to the abstract action;
//! states whose code was never abstracted fall back to action 0 and are
//! reported. [`bound_check`] compares the lifted policy's shortfall against
//! the worst-case guarantee `2 * epsilon / (1 - gamma)^2` implied by the
//! abstraction error.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::concepts::{encode, AbstractionIndex, ConceptBank, ConceptSubset};
use crate::mdp::{
    argmax_min_index, greedy_policy, policy_q, value_iteration, PolicyTable, QTable, Rollout,
    State, TabularMdp,
};
use crate::{invalid, Error, Result};

/// Slack added to the guarantee when checking it against a measured gap;
/// absorbs value-iteration tolerance on both sides of the comparison.
const PASS_SLACK: f64 = 1e-8;

/// How an abstract policy was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    WeightedQ,
    InducedMdp,
}

/// One action per abstract code.
#[derive(Debug, Clone)]
pub struct AbstractPolicy {
    pub action_of_code: HashMap<Vec<u8>, usize>,
    pub construction: Construction,
}

/// Per-class weights over class members, aligned with
/// [`AbstractionIndex::classes`]; each row sums to one.
pub type ClassWeights = Vec<Vec<f64>>;

pub fn uniform_weights(index: &AbstractionIndex) -> ClassWeights {
    index
        .classes
        .iter()
        .map(|z| vec![1.0 / z.members.len() as f64; z.members.len()])
        .collect()
}

/// Weights members by their rollout visit share within the class; classes
/// never visited fall back to uniform.
pub fn visitation_weights(index: &AbstractionIndex, roll: &Rollout) -> Result<ClassWeights> {
    let weights = index
        .classes
        .iter()
        .map(|z| {
            if z.members.iter().any(|&s| s >= roll.visit_count.len()) {
                return Err(invalid("rollout does not cover the abstraction's states"));
            }
            let total: u64 = z.members.iter().map(|&s| roll.visit_count[s]).sum();
            if total == 0 {
                return Ok(vec![1.0 / z.members.len() as f64; z.members.len()]);
            }
            Ok(z.members
                .iter()
                .map(|&s| roll.visit_count[s] as f64 / total as f64)
                .collect())
        })
        .collect::<Result<ClassWeights>>()?;
    Ok(weights)
}

fn validate_weights(index: &AbstractionIndex, weights: &ClassWeights) -> Result<()> {
    if weights.len() != index.classes.len() {
        return Err(invalid("one weight row per abstract class"));
    }
    for (z, row) in index.classes.iter().zip(weights) {
        if row.len() != z.members.len() {
            return Err(invalid("one weight per class member"));
        }
        if row.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("class weights sum to {sum}, expected 1")));
        }
    }
    Ok(())
}

/// Greedy policy on the weighted average of the members' Q rows, one action
/// per class (smallest index on ties).
pub fn weighted_q_policy(
    q: &QTable,
    index: &AbstractionIndex,
    weights: &ClassWeights,
) -> Result<AbstractPolicy> {
    validate_weights(index, weights)?;
    let mut action_of_code = HashMap::with_capacity(index.classes.len());
    for (z, row) in index.classes.iter().zip(weights) {
        if z.members.iter().any(|&s| s >= q.n_states()) {
            return Err(invalid("Q table does not cover the abstraction's states"));
        }
        let mut scores = vec![0.0; q.n_actions()];
        for (&s, &w) in z.members.iter().zip(row) {
            for (a, score) in scores.iter_mut().enumerate() {
                *score += w * q.values[s][a];
            }
        }
        action_of_code.insert(z.code.clone(), argmax_min_index(&scores));
    }
    Ok(AbstractPolicy { action_of_code, construction: Construction::WeightedQ })
}

/// Aggregates the ground MDP over the abstraction (weighted rewards and
/// transition rows per class), solves the abstract MDP, and returns its
/// greedy policy together with the abstract model. Fails if any member
/// transitions to a state outside the abstraction, if the start distribution
/// puts mass outside it, or if a class mixes terminal and non-terminal
/// members.
pub fn induced_mdp_policy(
    mdp: &TabularMdp,
    index: &AbstractionIndex,
    weights: &ClassWeights,
    tol: f64,
) -> Result<(AbstractPolicy, TabularMdp)> {
    validate_weights(index, weights)?;
    let mut class_of: HashMap<State, usize> = HashMap::new();
    for (zi, z) in index.classes.iter().enumerate() {
        for &s in &z.members {
            if s >= mdp.n_states {
                return Err(invalid("abstraction refers to states outside the MDP"));
            }
            class_of.insert(s, zi);
        }
    }
    for (s, &mu) in mdp.mu.iter().enumerate() {
        if mu > 0.0 && !class_of.contains_key(&s) {
            return Err(invalid(format!("start state {s} is not covered by the abstraction")));
        }
    }
    let nz = index.classes.len();
    let na = mdp.n_actions;
    let mut rewards = vec![vec![0.0; na]; nz];
    let mut transitions = vec![vec![vec![0.0; nz]; na]; nz];
    let mut mu = vec![0.0; nz];
    let mut terminals = Vec::new();
    for (zi, (z, row)) in index.classes.iter().zip(weights).enumerate() {
        let terminal_members = z.members.iter().filter(|&&s| mdp.is_terminal(s)).count();
        if terminal_members > 0 {
            if terminal_members < z.members.len() {
                return Err(invalid(format!(
                    "class {zi} mixes terminal and non-terminal states"
                )));
            }
            terminals.push(zi);
        }
        for (&s, &w) in z.members.iter().zip(row) {
            mu[zi] += mdp.mu[s];
            for a in 0..na {
                rewards[zi][a] += w * mdp.rewards[s][a];
                for (t, &p) in mdp.transitions[s][a].iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let &zt = class_of.get(&t).ok_or_else(|| {
                        invalid(format!(
                            "state {s} transitions to {t}, which the abstraction does not cover"
                        ))
                    })?;
                    transitions[zi][a][zt] += w * p;
                }
            }
        }
    }
    let abstract_mdp = TabularMdp::new(mdp.gamma, mu, rewards, transitions, terminals)?;
    let q = value_iteration(&abstract_mdp, tol)?;
    let pi = greedy_policy(&q);
    let action_of_code = index
        .classes
        .iter()
        .enumerate()
        .map(|(zi, z)| (z.code.clone(), pi.action(zi)))
        .collect();
    Ok((
        AbstractPolicy { action_of_code, construction: Construction::InducedMdp },
        abstract_mdp,
    ))
}

/// An abstract policy mapped back to ground states.
#[derive(Debug, Clone)]
pub struct LiftedPolicy {
    pub policy: PolicyTable,
    pub construction: Construction,
    /// States whose code had no abstract action; they received action 0.
    pub defaulted: Vec<State>,
}

/// Maps each ground state through its code under `subset`. Codes the policy
/// has never seen get action 0 and are recorded in `defaulted`.
pub fn lift_policy(
    ap: &AbstractPolicy,
    bank: &ConceptBank,
    subset: &ConceptSubset,
) -> Result<LiftedPolicy> {
    if subset.selected.iter().any(|&j| j >= bank.n_concepts()) {
        return Err(invalid("subset refers to concepts outside the bank"));
    }
    let mut actions = Vec::with_capacity(bank.n_states());
    let mut defaulted = Vec::new();
    for s in 0..bank.n_states() {
        let code = encode(bank, subset, s);
        match ap.action_of_code.get(&code) {
            Some(&a) => actions.push(a),
            None => {
                actions.push(0);
                defaulted.push(s);
            }
        }
    }
    Ok(LiftedPolicy {
        policy: PolicyTable { actions },
        construction: ap.construction,
        defaulted,
    })
}

/// Outcome of comparing a lifted policy's shortfall to the abstraction-error
/// guarantee.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub epsilon: f64,
    pub gamma: f64,
    /// Worst-case value shortfall permitted: `2 * epsilon / (1 - gamma)^2`.
    pub bound: f64,
    /// Largest per-state shortfall `V*(s) - V_lift(s)` actually measured.
    pub max_gap: f64,
    pub pass: bool,
}

/// Measures `max_s V*(s) - V_lift(s)` exactly (to the value-iteration
/// tolerance `tol`) and checks it against `2 * epsilon / (1 - gamma)^2`.
/// Only meaningful for the weighted-Q construction; induced-MDP policies are
/// refused because their aggregated dynamics follow different assumptions.
pub fn bound_check(
    mdp: &TabularMdp,
    lifted: &LiftedPolicy,
    epsilon: f64,
    tol: f64,
) -> Result<BoundReport> {
    if lifted.construction == Construction::InducedMdp {
        return Err(Error::Unsupported(
            "the shortfall guarantee applies to weighted-Q abstract policies only".into(),
        ));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon must be finite and nonnegative"));
    }
    if mdp.gamma >= 1.0 {
        return Err(invalid("the guarantee needs a discount factor below 1"));
    }
    let q_star = value_iteration(mdp, tol)?;
    let q_pi = policy_q(mdp, &lifted.policy, tol)?;
    let mut max_gap = f64::NEG_INFINITY;
    for s in 0..mdp.n_states {
        let gap = q_star.state_value(s) - q_pi.values[s][lifted.policy.action(s)];
        max_gap = max_gap.max(gap);
    }
    let bound = 2.0 * epsilon / ((1.0 - mdp.gamma) * (1.0 - mdp.gamma));
    Ok(BoundReport {
        epsilon,
        gamma: mdp.gamma,
        bound,
        max_gap,
        pass: max_gap <= bound + PASS_SLACK,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{abstraction_error, build_abstraction_index, q_distance};
    use crate::fixtures::{random_mdp, ring4, ring4_bank};
    use crate::mdp::{policy_value, rollout};
    use approx::assert_abs_diff_eq;

    fn ring_setup(concept: usize) -> (TabularMdp, ConceptBank, ConceptSubset, AbstractionIndex) {
        let mdp = ring4();
        let bank = ring4_bank();
        let subset = ConceptSubset::new(vec![concept], 1, 2).unwrap();
        let index = build_abstraction_index(&bank, &subset, &[0, 1, 2, 3]).unwrap();
        (mdp, bank, subset, index)
    }

    #[test]
    fn parity_abstraction_recovers_the_optimal_value() {
        let (mdp, bank, subset, index) = ring_setup(0);
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let ap = weighted_q_policy(&q, &index, &uniform_weights(&index)).unwrap();
        let lifted = lift_policy(&ap, &bank, &subset).unwrap();
        assert!(lifted.defaulted.is_empty());
        let value = policy_value(&mdp, &lifted.policy, 1e-10).unwrap();
        assert_abs_diff_eq!(value, 9.5, epsilon = 1e-6);
    }

    #[test]
    fn lossy_abstraction_pays_a_measured_price() {
        let (mdp, bank, subset, index) = ring_setup(1);
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let ap = weighted_q_policy(&q, &index, &uniform_weights(&index)).unwrap();
        let lifted = lift_policy(&ap, &bank, &subset).unwrap();
        let value = policy_value(&mdp, &lifted.policy, 1e-10).unwrap();
        // Merging states 0, 1, 3 drags the merged class to the move action,
        // so states 0 and 1 lose value: (9.1 + 8.19 + 10 + 9) / 4.
        assert_abs_diff_eq!(value, 9.0725, epsilon = 1e-6);
        assert!(value < 9.5 - 1e-3);
    }

    #[test]
    fn induced_model_agrees_with_weighted_q_on_the_ring() {
        let (mdp, bank, subset, index) = ring_setup(0);
        let weights = uniform_weights(&index);
        let (ap, abstract_mdp) = induced_mdp_policy(&mdp, &index, &weights, 1e-10).unwrap();
        assert_eq!(abstract_mdp.n_states, 2);
        let lifted = lift_policy(&ap, &bank, &subset).unwrap();
        let value = policy_value(&mdp, &lifted.policy, 1e-10).unwrap();
        assert_abs_diff_eq!(value, 9.5, epsilon = 1e-6);
    }

    #[test]
    fn induced_model_requires_closed_abstractions() {
        let mdp = ring4();
        let bank = ring4_bank();
        let subset = ConceptSubset::new(vec![0, 1], 2, 2).unwrap();
        // States 0 and 1 transition into 2 and 3, whose codes are absent.
        let index = build_abstraction_index(&bank, &subset, &[0, 1]).unwrap();
        let err = induced_mdp_policy(&mdp, &index, &uniform_weights(&index), 1e-10);
        assert!(err.is_err());
    }

    #[test]
    fn visitation_weights_follow_the_rollout() {
        let (mdp, _, _, index) = ring_setup(0);
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let pi = greedy_policy(&q);
        let roll = rollout(&mdp, &pi, 5_000, 3).unwrap();
        let weights = visitation_weights(&index, &roll).unwrap();
        // Class order: {0, 2} then {1, 3}; the optimal policy stays on 0/2.
        assert_eq!(weights.len(), 2);
        let z0: f64 = weights[0].iter().sum();
        assert_abs_diff_eq!(z0, 1.0, epsilon = 1e-12);
        // States 1 and 3 are hit only on restarts; both weights stay valid.
        assert!(weights[1].iter().all(|&w| (0.0..=1.0).contains(&w)));
    }

    #[test]
    fn unvisited_classes_fall_back_to_uniform_weights() {
        let (_, _, _, index) = ring_setup(0);
        let roll = Rollout { steps: vec![], visit_count: vec![7, 0, 3, 0] };
        let weights = visitation_weights(&index, &roll).unwrap();
        assert_abs_diff_eq!(weights[0][0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(weights[0][1], 0.3, epsilon = 1e-12);
        assert_eq!(weights[1], vec![0.5, 0.5]);
    }

    #[test]
    fn lifting_flags_codes_the_policy_never_saw() {
        let (mdp, bank, subset, _) = ring_setup(0);
        let index = build_abstraction_index(&bank, &subset, &[0]).unwrap();
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let ap = weighted_q_policy(&q, &index, &uniform_weights(&index)).unwrap();
        let lifted = lift_policy(&ap, &bank, &subset).unwrap();
        assert_eq!(lifted.defaulted, vec![1, 3]);
        assert_eq!(lifted.policy.action(1), 0);
    }

    #[test]
    fn weight_rows_must_match_classes_and_sum_to_one() {
        let (mdp, _, _, index) = ring_setup(0);
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let bad_len = vec![vec![1.0], vec![0.5, 0.5]];
        assert!(weighted_q_policy(&q, &index, &bad_len).is_err());
        let bad_sum = vec![vec![0.9, 0.2], vec![0.5, 0.5]];
        assert!(weighted_q_policy(&q, &index, &bad_sum).is_err());
        assert!(weighted_q_policy(&q, &index, &vec![vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn bound_check_accepts_the_ring_abstractions() {
        for concept in [0, 1] {
            let (mdp, bank, subset, index) = ring_setup(concept);
            let q = value_iteration(&mdp, 1e-10).unwrap();
            let ap = weighted_q_policy(&q, &index, &uniform_weights(&index)).unwrap();
            let lifted = lift_policy(&ap, &bank, &subset).unwrap();
            let eps = abstraction_error(&index, &q_distance(&q));
            let report = bound_check(&mdp, &lifted, eps, 1e-10).unwrap();
            assert!(report.pass, "concept {concept}: gap {} > bound {}", report.max_gap, report.bound);
            assert!(report.max_gap >= -1e-8);
        }
    }

    #[test]
    fn bound_check_holds_across_random_abstractions() {
        for seed in 0..30u64 {
            let mdp = random_mdp(seed, 8, 3, 0.9);
            let bank = crate::fixtures::random_bank(seed, 3, mdp.n_states);
            let subset = ConceptSubset::new(vec![seed as usize % 3], 1, 3).unwrap();
            let observed: Vec<State> = (0..mdp.n_states).collect();
            let index = build_abstraction_index(&bank, &subset, &observed).unwrap();
            let q = value_iteration(&mdp, 1e-10).unwrap();
            let ap = weighted_q_policy(&q, &index, &uniform_weights(&index)).unwrap();
            let lifted = lift_policy(&ap, &bank, &subset).unwrap();
            let eps = abstraction_error(&index, &q_distance(&q));
            let report = bound_check(&mdp, &lifted, eps, 1e-10).unwrap();
            assert!(report.pass, "seed {seed}: gap {} > bound {}", report.max_gap, report.bound);
        }
    }

    #[test]
    fn bound_check_rejects_induced_policies_and_undiscounted_mdps() {
        let (mdp, bank, subset, index) = ring_setup(0);
        let weights = uniform_weights(&index);
        let (ap, _) = induced_mdp_policy(&mdp, &index, &weights, 1e-10).unwrap();
        let lifted = lift_policy(&ap, &bank, &subset).unwrap();
        assert!(matches!(bound_check(&mdp, &lifted, 0.0, 1e-10), Err(Error::Unsupported(_))));
        let q = value_iteration(&mdp, 1e-10).unwrap();
        let wq = weighted_q_policy(&q, &index, &weights).unwrap();
        let wq_lifted = lift_policy(&wq, &bank, &subset).unwrap();
        assert!(bound_check(&mdp, &wq_lifted, -1.0, 1e-10).is_err());
    }
}
