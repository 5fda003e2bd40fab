//! Run configuration: one TOML file, secrets from the environment.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grouping::{GroupingParams, Reduction, DEFAULT_DELTA, DEFAULT_EPSILON, DEFAULT_K_MIN};
use crate::rewards::{RewardParams, DEFAULT_ALPHA, DEFAULT_GAMMA};
use crate::rollout::{
    Limits, Mode, DEFAULT_BUDGET, DEFAULT_CANDIDATES, DEFAULT_GROUP_SIZE, DEFAULT_TOP_K,
};
use crate::textmetrics::DEFAULT_CUTOFFS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RetrieverConfig {
    /// In-process BM25 over the configured corpus.
    #[default]
    Builtin,
    Remote { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyConfig {
    /// Either inline turns or a JSON file holding an array of turns.
    Scripted {
        #[serde(default)]
        turns: Vec<String>,
        #[serde(default)]
        script: Option<PathBuf>,
    },
    RemoteChat {
        endpoint: String,
        model: String,
        #[serde(default = "default_temperature")]
        temperature: f64,
        /// Environment variable holding the bearer token.
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub mode: Mode,
    pub group_size: usize,
    pub candidates: usize,
    pub top_k: usize,
    pub budget: usize,
    pub delta: f64,
    pub k_min: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub cutoffs: Vec<usize>,
    pub reduction: Reduction,
    pub workers: usize,
    pub max_attempts: u32,
    pub seed: u64,
    pub retriever: RetrieverConfig,
    pub main_policy: Option<PolicyConfig>,
    pub ranker_policy: Option<PolicyConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            questions: None,
            mode: Mode::Standard,
            group_size: DEFAULT_GROUP_SIZE,
            candidates: DEFAULT_CANDIDATES,
            top_k: DEFAULT_TOP_K,
            budget: DEFAULT_BUDGET,
            delta: DEFAULT_DELTA,
            k_min: DEFAULT_K_MIN,
            gamma: DEFAULT_GAMMA,
            alpha: DEFAULT_ALPHA,
            epsilon: DEFAULT_EPSILON,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
            reduction: Reduction::default(),
            workers: 1,
            max_attempts: 3,
            seed: 0,
            retriever: RetrieverConfig::default(),
            main_policy: None,
            ranker_policy: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConfigViolation {
    #[error("top_k ({k}) exceeds candidates ({n})")]
    TopKExceedsCandidates { k: usize, n: usize },
    #[error("top_k must be at least 1")]
    TopKZero,
    #[error("delta must lie in (0, 1], got {0}")]
    DeltaRange(f64),
    #[error("k_min must be at least 1")]
    KMinZero,
    #[error("budget must be at least 1")]
    BudgetZero,
    #[error("group_size must be at least 1")]
    GroupSizeZero,
    #[error("cutoffs must be a non-empty list of positive integers")]
    Cutoffs,
    #[error("epsilon must lie in (0, 1), got {0}")]
    EpsilonRange(f64),
    #[error("alpha must be non-negative, got {0}")]
    AlphaNegative(f64),
    #[error("mode {0:?} needs a ranker_policy")]
    MissingRankerPolicy(Mode),
    #[error("workers must be at least 1")]
    WorkersZero,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(#[from] ConfigViolation),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks parameter ranges. Policy presence is only checked for the
    /// ranker, since offline subcommands need no agent policy.
    pub fn validate(&self) -> Result<(), ConfigViolation> {
        use ConfigViolation::*;
        if self.top_k == 0 {
            return Err(TopKZero);
        }
        if self.top_k > self.candidates {
            return Err(TopKExceedsCandidates { k: self.top_k, n: self.candidates });
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(DeltaRange(self.delta));
        }
        if self.k_min == 0 {
            return Err(KMinZero);
        }
        if self.budget == 0 {
            return Err(BudgetZero);
        }
        if self.group_size == 0 {
            return Err(GroupSizeZero);
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Cutoffs);
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(EpsilonRange(self.epsilon));
        }
        if self.alpha < 0.0 || self.alpha.is_nan() {
            return Err(AlphaNegative(self.alpha));
        }
        if self.workers == 0 {
            return Err(WorkersZero);
        }
        if self.mode.uses_ranker() && self.ranker_policy.is_none() {
            return Err(MissingRankerPolicy(self.mode));
        }
        Ok(())
    }

    pub fn limits(&self) -> Limits {
        Limits { budget: self.budget, n: self.candidates, k: self.top_k }
    }

    pub fn reward_params(&self) -> RewardParams {
        RewardParams { alpha: self.alpha, gamma: self.gamma, cutoffs: self.cutoffs.clone() }
    }

    pub fn grouping_params(&self) -> GroupingParams {
        GroupingParams { delta: self.delta, k_min: self.k_min }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.group_size, cfg.candidates, cfg.top_k, cfg.budget), (8, 50, 5, 6));
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn named_violations() {
        let err = RunConfig::from_toml("top_k = 10\ncandidates = 5").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(ConfigViolation::TopKExceedsCandidates { k: 10, n: 5 })));
        assert!(err.to_string().contains("top_k (10) exceeds candidates (5)"));
        assert!(matches!(
            RunConfig::from_toml("delta = 0.0"),
            Err(ConfigError::Invalid(ConfigViolation::DeltaRange(_)))
        ));
        assert!(matches!(
            RunConfig::from_toml("mode = \"ranker\""),
            Err(ConfigError::Invalid(ConfigViolation::MissingRankerPolicy(Mode::Ranker)))
        ));
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn policies_and_hash() {
        let text = r#"
mode = "ranker"
seed = 7

[retriever]
kind = "remote"
url = "http://localhost:8000/retrieve"

[main_policy]
kind = "remote-chat"
endpoint = "http://localhost:8001/v1"
model = "agent"
api_key_env = "AGENT_KEY"

[ranker_policy]
kind = "scripted"
turns = ["<reason>r</reason><rerank>[1]</rerank>"]
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert!(matches!(cfg.main_policy, Some(PolicyConfig::RemoteChat { temperature, .. }) if temperature == 1.0));
        let mut other = cfg.clone();
        assert_eq!(cfg.hash(), other.hash());
        other.seed = 8;
        assert_ne!(cfg.hash(), other.hash());
    }
}
