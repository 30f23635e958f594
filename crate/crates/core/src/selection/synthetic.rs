//! Randomized synthetic instances for exercising the solvers.
//!
//! A synthetic instance is an abstract-state table rather than a full MDP:
//! distinct concept codes with a Q row per code. That is exactly the
//! information selection consumes, so tests can sweep instance shapes
//! without building environments.

use rand::Rng;

use crate::mdp::argmax_min_index;
use crate::rng;
use crate::selection::{SelectionInstance, SelectionPair};

/// Abstract states (distinct codes) with their action values.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub codes: Vec<Vec<u8>>,
    pub q_rows: Vec<Vec<f64>>,
    pub n_concepts: usize,
    pub budget: usize,
}

/// Draws a synthetic instance: 2..=`max_concepts` concepts, 2..=`max_states`
/// distinct codes (capped by the number of codes that exist), 2..=4 actions
/// with values uniform in [0, 10), and a budget of 1..=`max_budget`.
pub fn random_synthetic(
    seed: u64,
    max_concepts: usize,
    max_budget: usize,
    max_states: usize,
) -> SyntheticInstance {
    assert!(max_concepts >= 2 && max_states >= 2 && max_budget >= 1);
    let mut r = rng::seeded(seed);
    let n_concepts = r.gen_range(2..=max_concepts);
    let code_space = 1usize << n_concepts.min(20);
    let n_states = r.gen_range(2..=max_states.min(code_space));
    let n_actions = r.gen_range(2..=4);
    let mut codes: Vec<Vec<u8>> = Vec::with_capacity(n_states);
    let mut seen = std::collections::HashSet::new();
    while codes.len() < n_states {
        let code: Vec<u8> = (0..n_concepts).map(|_| r.gen_range(0..2u8)).collect();
        if seen.insert(code.clone()) {
            codes.push(code);
        }
    }
    let q_rows = (0..n_states)
        .map(|_| (0..n_actions).map(|_| r.gen_range(0.0..10.0)).collect())
        .collect();
    let budget = r.gen_range(1..=max_budget.min(n_concepts));
    SyntheticInstance { codes, q_rows, n_concepts, budget }
}

impl SyntheticInstance {
    /// Selection instance with exact distances (max action-value gap per
    /// code pair) and greedy-action disagreement flags.
    pub fn instance(&self, rho: f64) -> SelectionInstance {
        self.instance_from_rows(rho, &self.q_rows)
    }

    /// Same instance with per-concept predictor accuracies drawn uniformly
    /// from [0.5, 1).
    pub fn instance_with_accuracies(&self, rho: f64, seed: u64) -> SelectionInstance {
        let mut inst = self.instance(rho);
        let mut r = rng::substream(seed, 11);
        inst.accuracies = Some((0..self.n_concepts).map(|_| r.gen_range(0.5..1.0)).collect());
        inst
    }

    /// Instance built from value estimates corrupted by independent uniform
    /// noise in [-delta, delta] per entry. Distances and action flags both
    /// come from the corrupted values, as they would when selecting against
    /// an estimated Q.
    pub fn perturbed_instance(&self, rho: f64, delta: f64, seed: u64) -> SelectionInstance {
        let mut r = rng::seeded(seed);
        let noisy: Vec<Vec<f64>> = self
            .q_rows
            .iter()
            .map(|row| row.iter().map(|&v| v + r.gen_range(-delta..=delta)).collect())
            .collect();
        self.instance_from_rows(rho, &noisy)
    }

    fn instance_from_rows(&self, rho: f64, rows: &[Vec<f64>]) -> SelectionInstance {
        let n = self.codes.len();
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                let diff_mask: Vec<usize> = (0..self.n_concepts)
                    .filter(|&c| self.codes[i][c] != self.codes[j][c])
                    .collect();
                let action_differs = argmax_min_index(&rows[i]) != argmax_min_index(&rows[j]);
                pairs.push(SelectionPair { d, diff_mask, action_differs });
            }
        }
        SelectionInstance {
            n_concepts: self.n_concepts,
            budget: self.budget,
            rho,
            pairs,
            accuracies: None,
        }
    }
}
