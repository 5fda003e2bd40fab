//! Agent reward, composite ranker reward, and the trajectory filter applied
//! before ranker rewards are computed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rollout::{RankerCall, Trajectory};
use crate::textmetrics::{answer_f1, relevance_reward, RelevanceLabels, DEFAULT_CUTOFFS};

pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Format penalty; a violation scores `-alpha`.
    pub alpha: f64,
    /// Relevance threshold above which the trajectory reward is added.
    pub gamma: f64,
    pub cutoffs: Vec<usize>,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, gamma: DEFAULT_GAMMA, cutoffs: DEFAULT_CUTOFFS.to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Main,
    Ranker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardCase {
    FormatViolation,
    RelOnly,
    RelPlusMain,
    MainOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub subject: Subject,
    pub r_main: f64,
    pub r_rel: f64,
    pub r_total: f64,
    pub case: RewardCase,
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("candidate set has no answer-bearing document but relevance reward is {r_rel}")]
    Inconsistent { r_rel: f64 },
    #[error("trajectory {0} has no agent reward; compute it before ranker rewards")]
    MissingMainReward(String),
}

/// Answer F1 against the gold aliases, or `-alpha` on a format violation.
pub fn main_reward(traj: &Trajectory, params: &RewardParams) -> RewardRecord {
    let (r_main, case) = if traj.format.is_ok() {
        let pred = traj.answer.as_deref().unwrap_or_default();
        (answer_f1(pred, &traj.golden_answers), RewardCase::MainOnly)
    } else {
        (-params.alpha, RewardCase::FormatViolation)
    };
    RewardRecord {
        subject: Subject::Main,
        r_main,
        r_rel: 0.0,
        r_total: r_main,
        case,
        alpha: params.alpha,
        gamma: params.gamma,
    }
}

/// The four-way composite rule. `format_ok` is the ranker call's own format
/// flag. The boundary `r_rel == gamma` takes the relevance-only branch.
pub fn composite_reward(
    format_ok: bool,
    i_ans: bool,
    r_rel: f64,
    r_main: f64,
    params: &RewardParams,
) -> Result<RewardRecord, RewardError> {
    let (case, r_total) = if !format_ok {
        (RewardCase::FormatViolation, -params.alpha)
    } else if i_ans && r_rel <= params.gamma {
        (RewardCase::RelOnly, r_rel)
    } else if i_ans {
        (RewardCase::RelPlusMain, r_rel + r_main)
    } else if r_rel == 0.0 {
        (RewardCase::MainOnly, r_main)
    } else {
        return Err(RewardError::Inconsistent { r_rel });
    };
    Ok(RewardRecord {
        subject: Subject::Ranker,
        r_main,
        r_rel: if format_ok { r_rel } else { 0.0 },
        r_total,
        case,
        alpha: params.alpha,
        gamma: params.gamma,
    })
}

/// Mean Hit@k of the ranker's output list. Answer-bearing candidates the
/// ranker left out of its top-k never count as hits.
pub fn ranking_relevance(call: &RankerCall, cutoffs: &[usize]) -> f64 {
    let Some(ranking) = &call.exchange.ranking else { return 0.0 };
    let labels = RelevanceLabels::new(
        ranking
            .iter()
            .enumerate()
            .filter(|(_, &idx)| call.d_plus.contains(&(idx - 1)))
            .map(|(rank, _)| rank),
        ranking.len(),
    );
    relevance_reward(ranking.len(), &labels, cutoffs)
}

pub fn ranker_reward(
    call: &RankerCall,
    r_main: f64,
    params: &RewardParams,
) -> Result<RewardRecord, RewardError> {
    let r_rel = ranking_relevance(call, &params.cutoffs);
    composite_reward(call.exchange.format.is_ok(), call.i_ans, r_rel, r_main, params)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub kept: usize,
    pub filtered: usize,
}

/// Drops trajectories whose agent broke format; their ranker calls take no
/// part in ranker training.
pub fn filter_for_ranker_training(trajectories: Vec<Trajectory>) -> (Vec<Trajectory>, FilterStats) {
    let (kept, dropped): (Vec<_>, Vec<_>) =
        trajectories.into_iter().partition(|t| t.format.is_ok());
    let stats = FilterStats { kept: kept.len(), filtered: dropped.len() };
    (kept, stats)
}

/// Fills in every reward field in place: the agent reward on each trajectory,
/// and the composite reward on each trainable ranker call of trajectories
/// that pass the filter.
pub fn assign_rewards(
    trajectories: &mut [Trajectory],
    params: &RewardParams,
) -> Result<FilterStats, RewardError> {
    let mut stats = FilterStats::default();
    for t in trajectories.iter_mut() {
        let main = main_reward(t, params);
        t.filtered_for_ranker = !t.format.is_ok();
        if t.filtered_for_ranker {
            stats.filtered += 1;
            for call in &mut t.ranker_calls {
                call.reward = None;
            }
        } else {
            stats.kept += 1;
            for call in &mut t.ranker_calls {
                call.reward = Some(ranker_reward(call, main.r_main, params)?);
            }
        }
        t.main_reward = Some(main);
    }
    Ok(stats)
}
