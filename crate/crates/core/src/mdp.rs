//! Tabular MDPs and exact/sampling solvers.
//!
//! A [`TabularMdp`] is a dense transition tensor plus a reward table, a start
//! distribution, a discount, and an optional set of terminal states. Terminal
//! semantics: the agent still picks one action in a terminal state and
//! collects `R(s, a)`, but nothing is bootstrapped afterwards and rollouts
//! restart from the start distribution. `gamma = 1` is accepted only for
//! episodic MDPs (at least one terminal state); everything else is the usual
//! infinite-horizon discounted setting with `gamma < 1`.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{invalid, Error, Result};

pub type State = usize;
pub type Action = usize;

/// Sweep cap for the iterative solvers.
const MAX_SWEEPS: usize = 200_000;

/// Exploration rate mixed into the behavior policy by [`td_q`].
const TD_EXPLORE: f64 = 0.1;

/// Tolerance for "sums to one" checks on distributions.
const DIST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// Start distribution over states.
    pub mu: Vec<f64>,
    /// `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
    /// `transitions[s][a][s']`, each row a distribution.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// Sorted indices of terminal states (may be empty).
    #[serde(default)]
    pub terminals: Vec<State>,
}

impl TabularMdp {
    pub fn new(
        gamma: f64,
        mu: Vec<f64>,
        rewards: Vec<Vec<f64>>,
        transitions: Vec<Vec<Vec<f64>>>,
        terminals: Vec<State>,
    ) -> Result<Self> {
        let n_states = mu.len();
        let n_actions = rewards.first().map_or(0, Vec::len);
        let mut terminals = terminals;
        terminals.sort_unstable();
        terminals.dedup();
        let mdp = Self { n_states, n_actions, gamma, mu, rewards, transitions, terminals };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks every structural invariant; called by constructors and after
    /// deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(invalid("need at least one state and one action"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.gamma == 1.0 && self.terminals.is_empty() {
            return Err(invalid("gamma = 1 requires terminal states (episodic MDP)"));
        }
        check_distribution("mu", &self.mu, self.n_states)?;
        if self.rewards.len() != self.n_states
            || self.rewards.iter().any(|row| row.len() != self.n_actions)
        {
            return Err(invalid("rewards must be n_states x n_actions"));
        }
        if self.transitions.len() != self.n_states {
            return Err(invalid("transitions must have one row set per state"));
        }
        for (s, per_action) in self.transitions.iter().enumerate() {
            if per_action.len() != self.n_actions {
                return Err(invalid(format!("state {s}: transition rows != n_actions")));
            }
            for (a, row) in per_action.iter().enumerate() {
                check_distribution(&format!("transitions[{s}][{a}]"), row, self.n_states)?;
            }
        }
        if let Some(&t) = self.terminals.iter().find(|&&t| t >= self.n_states) {
            return Err(invalid(format!("terminal state {t} out of range")));
        }
        Ok(())
    }

    pub fn is_terminal(&self, s: State) -> bool {
        self.terminals.binary_search(&s).is_ok()
    }

    /// 1 where value bootstrapping continues past each state, 0 at terminals.
    fn continuation(&self) -> Vec<f64> {
        (0..self.n_states).map(|s| if self.is_terminal(s) { 0.0 } else { 1.0 }).collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mdp: Self = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_distribution(name: &str, row: &[f64], len: usize) -> Result<()> {
    if row.len() != len {
        return Err(invalid(format!("{name}: length {} != {len}", row.len())));
    }
    if row.iter().any(|&p| !(0.0..=1.0 + DIST_TOL).contains(&p) || p.is_nan()) {
        return Err(invalid(format!("{name}: entries must lie in [0, 1]")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(invalid(format!("{name}: sums to {sum}, not 1")));
    }
    Ok(())
}

/// Where a Q table came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QSource {
    Exact,
    TdApproximate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTable {
    /// `values[s][a]`.
    pub values: Vec<Vec<f64>>,
    pub source: QSource,
}

impl QTable {
    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn n_actions(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Smallest-index argmax over actions.
    pub fn greedy_action(&self, s: State) -> Action {
        argmax_min_index(&self.values[s])
    }

    /// `max_a Q(s, a)`.
    pub fn state_value(&self, s: State) -> f64 {
        self.values[s].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Max-norm difference against another table of the same shape.
    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Smallest-index argmax; total order via `f64::total_cmp` on finite inputs.
pub(crate) fn argmax_min_index(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTable {
    /// One action per state.
    pub actions: Vec<Action>,
}

impl PolicyTable {
    pub fn new(actions: Vec<Action>, n_actions: usize) -> Result<Self> {
        if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(invalid(format!("action {a} out of range")));
        }
        Ok(Self { actions })
    }

    pub fn action(&self, s: State) -> Action {
        self.actions[s]
    }
}

/// A sampled trajectory plus per-state visit counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rollout {
    /// `(state, action, reward)` per step, in order.
    pub steps: Vec<(State, Action, f64)>,
    /// How often each state appeared in `steps`.
    pub visit_count: Vec<u64>,
}

impl Rollout {
    /// Sorted list of states that were visited at least once.
    pub fn distinct_states(&self) -> Vec<State> {
        self.visit_count
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn total_visits(&self) -> u64 {
        self.visit_count.iter().sum()
    }
}

/// Exact optimal Q via value iteration.
///
/// Stops once the max-norm Bellman residual is at or below `tol`; the
/// returned table's own residual is then at most `tol` as well (each extra
/// sweep contracts it by `gamma`).
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(invalid("tol must be positive"));
    }
    mdp.validate()?;
    let cont = mdp.continuation();
    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    let mut next = q.clone();
    for _ in 0..MAX_SWEEPS {
        let v: Vec<f64> = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut residual: f64 = 0.0;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let mut future = 0.0;
                if cont[s] != 0.0 {
                    for (sp, &p) in mdp.transitions[s][a].iter().enumerate() {
                        if p > 0.0 {
                            future += p * v[sp];
                        }
                    }
                }
                let updated = mdp.rewards[s][a] + mdp.gamma * future;
                residual = residual.max((updated - q[s][a]).abs());
                next[s][a] = updated;
            }
        }
        std::mem::swap(&mut q, &mut next);
        if residual <= tol {
            return Ok(QTable { values: q, source: QSource::Exact });
        }
    }
    Err(Error::IterationLimit(MAX_SWEEPS))
}

/// Greedy policy for a Q table, smallest action index on ties.
pub fn greedy_policy(q: &QTable) -> PolicyTable {
    PolicyTable { actions: (0..q.n_states()).map(|s| q.greedy_action(s)).collect() }
}

/// Exact Q of a fixed deterministic policy (iterative policy evaluation,
/// same stopping rule as [`value_iteration`]).
pub fn policy_q(mdp: &TabularMdp, pi: &PolicyTable, tol: f64) -> Result<QTable> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(invalid("tol must be positive"));
    }
    mdp.validate()?;
    if pi.actions.len() != mdp.n_states {
        return Err(invalid("policy length != n_states"));
    }
    if let Some(&a) = pi.actions.iter().find(|&&a| a >= mdp.n_actions) {
        return Err(invalid(format!("policy action {a} out of range")));
    }
    let cont = mdp.continuation();
    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    let mut next = q.clone();
    for _ in 0..MAX_SWEEPS {
        let v: Vec<f64> = q.iter().zip(&pi.actions).map(|(row, &a)| row[a]).collect();
        let mut residual: f64 = 0.0;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let mut future = 0.0;
                if cont[s] != 0.0 {
                    for (sp, &p) in mdp.transitions[s][a].iter().enumerate() {
                        if p > 0.0 {
                            future += p * v[sp];
                        }
                    }
                }
                let updated = mdp.rewards[s][a] + mdp.gamma * future;
                residual = residual.max((updated - q[s][a]).abs());
                next[s][a] = updated;
            }
        }
        std::mem::swap(&mut q, &mut next);
        if residual <= tol {
            return Ok(QTable { values: q, source: QSource::Exact });
        }
    }
    Err(Error::IterationLimit(MAX_SWEEPS))
}

/// Start-weighted value of a deterministic policy: `sum_s mu(s) Q_pi(s, pi(s))`.
pub fn policy_value(mdp: &TabularMdp, pi: &PolicyTable, tol: f64) -> Result<f64> {
    let q = policy_q(mdp, pi, tol)?;
    Ok(mdp
        .mu
        .iter()
        .enumerate()
        .map(|(s, &w)| w * q.values[s][pi.action(s)])
        .sum())
}

/// Samples a trajectory of `steps` steps under a deterministic policy.
///
/// Starts from the start distribution and restarts from it after acting in a
/// terminal state, so episodic chains are emulated as continuing ones.
/// Deterministic given `seed`.
pub fn rollout(mdp: &TabularMdp, pi: &PolicyTable, steps: usize, seed: u64) -> Result<Rollout> {
    mdp.validate()?;
    if pi.actions.len() != mdp.n_states {
        return Err(invalid("policy length != n_states"));
    }
    if steps == 0 {
        return Err(invalid("steps must be positive"));
    }
    let mut rng = rng::seeded(seed);
    let start = WeightedIndex::new(&mdp.mu).map_err(|e| invalid(format!("mu: {e}")))?;
    // Sampler per (s, a); only rows that are actually used get built.
    let mut samplers: Vec<Vec<Option<WeightedIndex<f64>>>> =
        vec![(0..mdp.n_actions).map(|_| None).collect(); mdp.n_states];

    let mut out = Vec::with_capacity(steps);
    let mut visit = vec![0u64; mdp.n_states];
    let mut s = start.sample(&mut rng);
    for _ in 0..steps {
        let a = pi.action(s);
        out.push((s, a, mdp.rewards[s][a]));
        visit[s] += 1;
        s = if mdp.is_terminal(s) {
            start.sample(&mut rng)
        } else {
            let sampler = &mut samplers[s][a];
            if sampler.is_none() {
                *sampler = Some(
                    WeightedIndex::new(&mdp.transitions[s][a])
                        .map_err(|e| invalid(format!("transitions[{s}][{a}]: {e}")))?,
                );
            }
            sampler.as_ref().unwrap().sample(&mut rng)
        };
    }
    Ok(Rollout { steps: out, visit_count: visit })
}

/// Output of [`td_q`]: the averaged double-estimator table plus the state-action
/// pairs that were never tried (these keep their zero initialization).
#[derive(Debug, Clone)]
pub struct TdEstimate {
    pub q: QTable,
    pub unvisited: Vec<(State, Action)>,
}

/// Tabular double-estimator TD learning of the optimal Q.
///
/// Two tables are kept; each transition updates one of them (fair coin)
/// toward `r + gamma * Q_other(s', argmax_a Q_chosen(s', a))`, which
/// decouples action choice from value estimation and removes the
/// max-overestimation bias. Behavior is the supplied policy with an 0.1
/// uniform-exploration mix so every action keeps being tried. Constant step
/// size, deterministic given `seed`; the returned table is the average of
/// the two estimators.
pub fn td_q(
    mdp: &TabularMdp,
    pi_behavior: &PolicyTable,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<TdEstimate> {
    mdp.validate()?;
    if pi_behavior.actions.len() != mdp.n_states {
        return Err(invalid("policy length != n_states"));
    }
    if steps == 0 {
        return Err(invalid("steps must be positive"));
    }
    if !(step_size > 0.0 && step_size <= 1.0) {
        return Err(invalid("step_size must lie in (0, 1]"));
    }
    let mut rng = rng::seeded(seed);
    let start = WeightedIndex::new(&mdp.mu).map_err(|e| invalid(format!("mu: {e}")))?;
    let mut samplers: Vec<Vec<Option<WeightedIndex<f64>>>> =
        vec![(0..mdp.n_actions).map(|_| None).collect(); mdp.n_states];

    let mut qa = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    let mut qb = qa.clone();
    let mut tried = vec![vec![false; mdp.n_actions]; mdp.n_states];
    let mut s = start.sample(&mut rng);
    for _ in 0..steps {
        let a = if rng.gen::<f64>() < TD_EXPLORE {
            rng.gen_range(0..mdp.n_actions)
        } else {
            pi_behavior.action(s)
        };
        tried[s][a] = true;
        let r = mdp.rewards[s][a];
        let (sp, ended) = if mdp.is_terminal(s) {
            (start.sample(&mut rng), true)
        } else {
            let sampler = &mut samplers[s][a];
            if sampler.is_none() {
                *sampler = Some(
                    WeightedIndex::new(&mdp.transitions[s][a])
                        .map_err(|e| invalid(format!("transitions[{s}][{a}]: {e}")))?,
                );
            }
            (sampler.as_ref().unwrap().sample(&mut rng), false)
        };
        let update_a = rng.gen::<bool>();
        let (learner, scorer) = if update_a { (&mut qa, &mut qb) } else { (&mut qb, &mut qa) };
        let target = if ended {
            r
        } else {
            let pick = argmax_min_index(&learner[sp]);
            r + mdp.gamma * scorer[sp][pick]
        };
        learner[s][a] += step_size * (target - learner[s][a]);
        s = sp;
    }

    let values: Vec<Vec<f64>> = qa
        .iter()
        .zip(&qb)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| 0.5 * (x + y)).collect())
        .collect();
    let unvisited = tried
        .iter()
        .enumerate()
        .flat_map(|(s, row)| {
            row.iter().enumerate().filter(|(_, &t)| !t).map(move |(a, _)| (s, a))
        })
        .collect();
    Ok(TdEstimate { q: QTable { values, source: QSource::TdApproximate }, unvisited })
}
