//! Rollouts through noisy concept predictors, and targeted corrections.
//!
//! The policy here never sees ground states: each step encodes the current
//! state through the selected concepts, corrupts that code with the noise
//! model, and asks the abstract policy for an action. An intervention buys
//! back a fraction of the selected concepts and makes their predictors
//! exact, which is the operational payoff of a small selected subset.

use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptBank, ConceptSubset, NoiseSpec};
use crate::abstraction::AbstractPolicy;
use crate::mdp::{State, TabularMdp};
use crate::rng;
use crate::{invalid, Result};
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample as sample_indices;
use rand::Rng;

/// How predictor errors materialize during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseRegime {
    /// Each concept is wrong exactly on its sampled flip set, every visit.
    FixedFlipSets,
    /// Each concept is wrong independently per step with probability
    /// `1 - accuracy`.
    PerStepBernoulli,
}

/// Concepts whose predictors get corrected to ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub corrected: Vec<usize>,
    pub alpha: f64,
}

/// Picks `round(alpha * |subset|)` of the selected concepts uniformly at
/// random (without replacement) for correction.
pub fn plan_intervention(
    subset: &ConceptSubset,
    alpha: f64,
    seed: u64,
) -> Result<InterventionPlan> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let m = (alpha * subset.selected.len() as f64).round() as usize;
    let mut rng = rng::seeded(seed);
    let mut corrected: Vec<usize> = sample_indices(&mut rng, subset.selected.len(), m)
        .into_iter()
        .map(|i| subset.selected[i])
        .collect();
    corrected.sort_unstable();
    Ok(InterventionPlan { corrected, alpha })
}

/// Applies a plan to a noise model: corrected concepts become exact (empty
/// flip set, accuracy 1).
pub fn apply_intervention(noise: &NoiseSpec, plan: &InterventionPlan) -> Result<NoiseSpec> {
    let mut out = noise.clone();
    for &j in &plan.corrected {
        if j >= out.accuracies.len() {
            return Err(invalid(format!("plan corrects concept {j} outside the noise model")));
        }
        out.accuracies[j] = 1.0;
        out.flip_sets[j].clear();
    }
    Ok(out)
}

/// Monte Carlo estimate of a discounted return.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Steps after which a reward contributes less than 1e-6 of its magnitude.
pub fn effective_horizon(gamma: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("effective horizon needs a discount factor below 1"));
    }
    if gamma == 0.0 {
        return Ok(1);
    }
    Ok((1e-6f64.ln() / gamma.ln()).ceil() as usize)
}

/// Discounted return of the abstract policy when every observation passes
/// through the noise model. Per episode: start from the MDP's start
/// distribution, encode the state through `subset`, corrupt the code under
/// `regime`, act on the abstract policy (action 0 for unknown codes), and
/// stop at `horizon` steps or right after acting in a terminal state.
///
/// Episode `i` draws environment randomness from substream `2 * i` of `seed`
/// and predictor randomness from substream `2 * i + 1`, so two evaluations
/// with the same seed see identical environments regardless of the noise.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_under_noise(
    mdp: &TabularMdp,
    bank: &ConceptBank,
    subset: &ConceptSubset,
    policy: &AbstractPolicy,
    noise: &NoiseSpec,
    regime: NoiseRegime,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<ReturnEstimate> {
    if episodes == 0 || horizon == 0 {
        return Err(invalid("need at least one episode and one step"));
    }
    if bank.n_states() != mdp.n_states {
        return Err(invalid("bank and MDP disagree on n_states"));
    }
    noise.validate(mdp.n_states)?;
    if noise.accuracies.len() != bank.n_concepts() {
        return Err(invalid("noise model and bank disagree on n_concepts"));
    }
    if subset.selected.iter().any(|&j| j >= bank.n_concepts()) {
        return Err(invalid("subset refers to concepts outside the bank"));
    }

    let start = WeightedIndex::new(&mdp.mu).map_err(|e| invalid(format!("start weights: {e}")))?;
    let mut samplers: Vec<Vec<Option<WeightedIndex<f64>>>> =
        vec![vec![None; mdp.n_actions]; mdp.n_states];
    let mut returns = Vec::with_capacity(episodes);
    let mut code = vec![0u8; subset.selected.len()];
    for ep in 0..episodes {
        let mut env = rng::substream(seed, 2 * ep as u64);
        let mut pred = rng::substream(seed, 2 * ep as u64 + 1);
        let mut s: State = start.sample(&mut env);
        let mut total = 0.0;
        let mut discount = 1.0;
        for _ in 0..horizon {
            for (slot, &j) in code.iter_mut().zip(&subset.selected) {
                let truth = bank.value(j, s);
                let flipped = match regime {
                    NoiseRegime::FixedFlipSets => noise.flip_sets[j].binary_search(&s).is_ok(),
                    NoiseRegime::PerStepBernoulli => {
                        pred.gen_range(0.0..1.0) < 1.0 - noise.accuracies[j]
                    }
                };
                *slot = truth ^ u8::from(flipped);
            }
            let a = policy.action_of_code.get(&code).copied().unwrap_or(0);
            total += discount * mdp.rewards[s][a];
            discount *= mdp.gamma;
            if mdp.is_terminal(s) {
                break;
            }
            let sampler = samplers[s][a].get_or_insert_with(|| {
                WeightedIndex::new(&mdp.transitions[s][a]).expect("validated transition row")
            });
            s = sampler.sample(&mut env);
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let stderr = if returns.len() < 2 {
        0.0
    } else {
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Ok(ReturnEstimate { mean, stderr })
}
