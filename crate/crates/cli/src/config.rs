//! Experiment configuration: JSON in, validated settings out.

use anyhow::{bail, Context};
use drs_core::concepts::ConceptBank;
use drs_core::intervention::NoiseRegime;
use drs_core::mdp::TabularMdp;
use drs_core::selection::Algorithm;
use serde::{Deserialize, Serialize};

use crate::envs;

/// Which environment to build, with its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum EnvSpec {
    Loop4 {
        #[serde(default)]
        distractors: usize,
    },
    Keydoor {
        width: usize,
        height: usize,
    },
    Chain {
        n: usize,
    },
}

impl EnvSpec {
    pub fn build(&self) -> drs_core::Result<(TabularMdp, ConceptBank)> {
        match *self {
            EnvSpec::Loop4 { distractors } => envs::build_loop4(distractors),
            EnvSpec::Keydoor { width, height } => envs::build_keydoor(width, height),
            EnvSpec::Chain { n } => envs::build_chain(n),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            EnvSpec::Loop4 { .. } => "loop4",
            EnvSpec::Keydoor { .. } => "keydoor",
            EnvSpec::Chain { .. } => "chain",
        }
    }
}

/// Budget either as an absolute concept count or a fraction of the bank.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetSpec {
    Absolute(usize),
    Fraction(f64),
}

impl BudgetSpec {
    pub fn resolve(&self, n_concepts: usize) -> anyhow::Result<usize> {
        let k = match *self {
            BudgetSpec::Absolute(k) => k,
            BudgetSpec::Fraction(f) => {
                if !(0.0..=1.0).contains(&f) {
                    bail!("budget fraction {f} outside [0, 1]");
                }
                (f * n_concepts as f64).round() as usize
            }
        };
        if k > n_concepts {
            bail!("budget {k} exceeds the bank's {n_concepts} concepts");
        }
        Ok(k)
    }
}

/// Predictor accuracies: one value for every concept, or per concept.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AccuracySpec {
    Scalar(f64),
    PerConcept(Vec<f64>),
}

impl AccuracySpec {
    pub fn resolve(&self, n_concepts: usize) -> anyhow::Result<Vec<f64>> {
        let accs = match self {
            AccuracySpec::Scalar(a) => vec![*a; n_concepts],
            AccuracySpec::PerConcept(v) => {
                if v.len() != n_concepts {
                    bail!("{} accuracies for {} concepts", v.len(), n_concepts);
                }
                v.clone()
            }
        };
        if accs.iter().any(|a| !(0.0..=1.0).contains(a)) {
            bail!("accuracies must lie in [0, 1]");
        }
        Ok(accs)
    }
}

/// How to obtain the Q estimate driving distances and action labels.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QEstimation {
    #[default]
    Exact,
    Td {
        steps: usize,
        step_size: f64,
    },
}

/// Reward extremes used to map raw returns onto [0, 100].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

fn default_rollout_steps() -> usize {
    20_000
}

fn default_pair_label_steps() -> usize {
    1_000
}

fn default_episodes() -> usize {
    200
}

fn default_regime() -> NoiseRegime {
    NoiseRegime::FixedFlipSets
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub environment: EnvSpec,
    pub algorithms: Vec<Algorithm>,
    pub k: BudgetSpec,
    pub rho: f64,
    /// Predictor accuracies; absent means perfect predictors (no noisy or
    /// intervened evaluations are run).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracies: Option<AccuracySpec>,
    /// Intervention fractions; one record per value when accuracies are set.
    #[serde(default)]
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Rollout budget for distance estimation (which states are observed).
    #[serde(default = "default_rollout_steps")]
    pub rollout_steps: usize,
    /// Smaller rollout budget for action labels on pairs.
    #[serde(default = "default_pair_label_steps")]
    pub pair_label_steps: usize,
    /// Monte Carlo episodes per noisy evaluation.
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    /// Steps per episode; defaults to the discount's effective horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub q_estimation: QEstimation,
    pub normalization: Normalization,
    #[serde(default = "default_regime")]
    pub noise_regime: NoiseRegime,
    /// Sweep values for the budget axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_values: Option<Vec<BudgetSpec>>,
    /// Sweep values for the accuracy axis (scalar per cell).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_values: Option<Vec<f64>>,
    /// Output directory; the CLI's --out flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must be nonempty");
        }
        if !(0.0..=1.0).contains(&self.rho) {
            bail!("rho {} outside [0, 1]", self.rho);
        }
        if self.normalization.min >= self.normalization.max {
            bail!(
                "normalization min {} must lie below max {}",
                self.normalization.min,
                self.normalization.max
            );
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            bail!("alphas must lie in [0, 1]");
        }
        if self.rollout_steps == 0 || self.pair_label_steps == 0 || self.episodes == 0 {
            bail!("rollout_steps, pair_label_steps, and episodes must be positive");
        }
        if let QEstimation::Td { steps, step_size } = self.q_estimation {
            if steps == 0 || !(step_size > 0.0 && step_size <= 1.0) {
                bail!("td estimation needs positive steps and a step size in (0, 1]");
            }
        }
        if self.algorithms.contains(&Algorithm::DrsLog) && self.accuracies.is_none() {
            bail!("drs-log needs accuracies in the config");
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which config list a sweep walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    K,
    Accuracy,
    Alpha,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::K => "k",
            SweepAxis::Accuracy => "accuracy",
            SweepAxis::Alpha => "alpha",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "environment": {"name": "loop4"},
            "algorithms": ["drs", "random"],
            "k": {"absolute": 1},
            "rho": 0.0,
            "seeds": [0, 1],
            "normalization": {"min": 0.0, "max": 10.0}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(&minimal_json()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.rollout_steps, 20_000);
        assert_eq!(cfg.pair_label_steps, 1_000);
        assert_eq!(cfg.episodes, 200);
        assert!(matches!(cfg.q_estimation, QEstimation::Exact));
        assert!(matches!(cfg.noise_regime, NoiseRegime::FixedFlipSets));
        assert!(cfg.accuracies.is_none());
        assert_eq!(cfg.environment.tag(), "loop4");
    }

    #[test]
    fn budget_fractions_round_against_the_bank() {
        assert_eq!(BudgetSpec::Fraction(0.25).resolve(16).unwrap(), 4);
        assert_eq!(BudgetSpec::Fraction(0.25).resolve(2).unwrap(), 1);
        assert_eq!(BudgetSpec::Absolute(3).resolve(16).unwrap(), 3);
        assert!(BudgetSpec::Absolute(20).resolve(16).is_err());
        assert!(BudgetSpec::Fraction(1.5).resolve(16).is_err());
    }

    #[test]
    fn accuracy_specs_expand_per_concept() {
        assert_eq!(AccuracySpec::Scalar(0.8).resolve(3).unwrap(), vec![0.8; 3]);
        let per = AccuracySpec::PerConcept(vec![0.5, 1.0]);
        assert_eq!(per.resolve(2).unwrap(), vec![0.5, 1.0]);
        assert!(per.resolve(3).is_err());
        assert!(AccuracySpec::Scalar(1.2).resolve(2).is_err());
    }

    #[test]
    fn scalar_and_vector_accuracies_both_deserialize() {
        let scalar: AccuracySpec = serde_json::from_str("0.85").unwrap();
        assert!(matches!(scalar, AccuracySpec::Scalar(_)));
        let vector: AccuracySpec = serde_json::from_str("[0.9, 1.0]").unwrap();
        assert!(matches!(vector, AccuracySpec::PerConcept(_)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg: ExperimentConfig = serde_json::from_str(&minimal_json()).unwrap();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());

        let mut cfg: ExperimentConfig = serde_json::from_str(&minimal_json()).unwrap();
        cfg.rho = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg: ExperimentConfig = serde_json::from_str(&minimal_json()).unwrap();
        cfg.normalization = Normalization { min: 5.0, max: 5.0 };
        assert!(cfg.validate().is_err());

        let mut cfg: ExperimentConfig = serde_json::from_str(&minimal_json()).unwrap();
        cfg.algorithms.push(Algorithm::DrsLog);
        assert!(cfg.validate().is_err(), "drs-log without accuracies");
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg: ExperimentConfig = serde_json::from_str(&minimal_json()).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.seeds, cfg.seeds);
    }
}
