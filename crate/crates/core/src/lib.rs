//! Toolkit for selecting small, decision-relevant subsets of binary state
//! concepts for tabular MDP policies.
//!
//! The crate is organized around a pipeline:
//!
//! - [`mdp`]: tabular MDPs, exact solvers (value iteration, policy
//!   evaluation), seeded rollouts, and a tabular double-estimator TD learner.
//! - [`concepts`]: binary concept banks, abstraction indices built from
//!   concept codes, Q-based state distances, abstraction error, and a
//!   flip-set noise model for imperfect concept predictors.
//! - [`selection`]: budgeted concept-subset selection. Exact branch-and-bound
//!   solvers for the hard and noise-aware objectives, three baselines, a
//!   supervised variant, and a brute-force oracle.
//! - [`abstraction`]: abstract policies over concept codes, lifting to ground
//!   policies, and suboptimality bound checks.
//! - [`intervention`]: correcting a fraction of noisy concept predictors and
//!   measuring the return difference under paired random streams.
//! - [`hardness`]: reduction from weighted maximum coverage to concept
//!   selection on a purpose-built episodic MDP.

pub mod abstraction;
pub mod concepts;
pub mod hardness;
pub mod intervention;
pub mod mdp;
pub mod rng;
pub mod selection;

#[cfg(test)]
pub(crate) mod fixtures;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument failed (shape, range, or consistency).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// An iterative solver hit its sweep limit before converging.
    #[error("no convergence after {0} sweeps")]
    IterationLimit(usize),
    /// No solution exists under the stated constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// The operation refuses inputs it cannot handle exactly.
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
