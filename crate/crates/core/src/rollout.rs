//! The multi-turn search loop and its batch orchestration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Policy, TransportError};
use crate::protocol::{
    self, render_observation, Action, ChatMessage, FormatFlag, ProtocolError, Violation,
    TEMPLATE_VERSION,
};
use crate::retrieval::{
    annotate, oracle_observe, rerank, retriever_top_k, CandidateSet, Observation, RankerExchange,
    Retriever,
};
use crate::rewards::RewardRecord;

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const DEFAULT_BUDGET: usize = 6;
pub const DEFAULT_CANDIDATES: usize = 50;
pub const DEFAULT_TOP_K: usize = 5;

/// How the observation for a search step is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Fixed retrieval: the retriever's own top-k.
    Standard,
    /// Same observation as `Standard`; labels the ranker-free baseline.
    RetrievalOnly,
    /// Answer-bearing candidates promoted to the top.
    Oracle,
    /// Trainable generative ranker; its calls are GRPO training units.
    Ranker,
    /// Generative ranker kept frozen; calls are recorded but not trained.
    FixedRanker,
}

impl Mode {
    pub fn uses_ranker(self) -> bool {
        matches!(self, Mode::Ranker | Mode::FixedRanker)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub budget: usize,
    pub n: usize,
    pub k: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, n: DEFAULT_CANDIDATES, k: DEFAULT_TOP_K }
    }
}

/// One line of the questions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub question: String,
    pub golden_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based.
    pub index: usize,
    pub thought: String,
    pub sub_query: String,
    pub candidates: CandidateSet,
    pub observation: Observation,
    pub ranker_call_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerCall {
    pub id: String,
    pub question_id: String,
    pub trajectory_id: String,
    pub rollout: usize,
    pub step: usize,
    pub original_question: String,
    pub sub_query: String,
    pub n: usize,
    pub i_ans: bool,
    pub d_plus: Vec<usize>,
    #[serde(flatten)]
    pub exchange: RankerExchange,
    /// Recorded under a frozen ranker; never grouped for training.
    pub frozen: bool,
    #[serde(default)]
    pub reward: Option<RewardRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema_version: u32,
    pub template_version: String,
    pub id: String,
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub question: String,
    pub golden_answers: Vec<String>,
    /// 1-based index within the group.
    pub rollout: usize,
    pub mode: Mode,
    pub steps: Vec<Step>,
    pub final_thought: Option<String>,
    pub answer: Option<String>,
    pub format: FormatFlag,
    /// The answer (or its failure) came from the budget-exhaustion turn.
    pub forced_answer: bool,
    /// Full conversation, prompt first, for audit and export.
    pub messages: Vec<ChatMessage>,
    pub ranker_calls: Vec<RankerCall>,
    #[serde(default)]
    pub main_reward: Option<RewardRecord>,
    #[serde(default)]
    pub filtered_for_ranker: bool,
    /// Hash of the run configuration that produced this record.
    #[serde(default)]
    pub config_hash: String,
}

impl Trajectory {
    pub fn dataset_tag(&self) -> &str {
        self.dataset.as_deref().unwrap_or("default")
    }
}

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("mode {0:?} needs a ranker policy")]
    MissingRanker(Mode),
}

/// A rollout that kept failing after orchestration-level retries.
#[derive(Debug, Error)]
#[error("question {question_id} rollout {rollout} failed after {attempts} attempt(s): {source}")]
pub struct RolloutFailure {
    pub question_id: String,
    pub rollout: usize,
    pub attempts: u32,
    pub source: RolloutError,
}

pub struct Engine<'a> {
    pub retriever: &'a dyn Retriever,
    pub main: &'a dyn Policy,
    pub ranker: Option<&'a dyn Policy>,
    pub mode: Mode,
    pub limits: Limits,
}

pub fn trajectory_id(question_id: &str, rollout: usize) -> String {
    format!("{question_id}#{rollout}")
}

impl Engine<'_> {
    fn observe(
        &self,
        q: &Question,
        sub_query: &str,
    ) -> Result<(CandidateSet, Observation, Option<RankerExchange>), RolloutError> {
        let Limits { n, k, .. } = self.limits;
        let candidates = annotate(self.retriever.retrieve(sub_query, n)?, &q.golden_answers);
        let (observation, exchange) = match self.mode {
            Mode::Standard | Mode::RetrievalOnly => (retriever_top_k(&candidates, k), None),
            Mode::Oracle => (oracle_observe(&candidates, k), None),
            Mode::Ranker | Mode::FixedRanker => {
                let ranker = self.ranker.ok_or(RolloutError::MissingRanker(self.mode))?;
                rerank(&q.question, &candidates, ranker, k)?
            }
        };
        Ok((candidates, observation, exchange))
    }

    /// Runs one trajectory. The first malformed agent turn ends it with f = 0.
    /// After `budget` searches the agent gets one forced-answer turn.
    pub fn run_trajectory(&self, q: &Question, rollout: usize) -> Result<Trajectory, RolloutError> {
        if self.mode.uses_ranker() && self.ranker.is_none() {
            return Err(RolloutError::MissingRanker(self.mode));
        }
        let id = trajectory_id(&q.id, rollout);
        let mut messages = vec![ChatMessage::user(protocol::render_main_prompt(&q.question)?)];
        let mut steps: Vec<Step> = Vec::new();
        let mut ranker_calls = Vec::new();
        let mut format = FormatFlag::OK;
        let mut final_thought = None;
        let mut answer = None;
        let mut forced_answer = false;

        loop {
            let forced = steps.len() >= self.limits.budget;
            if forced {
                forced_answer = true;
                messages.push(ChatMessage::user(protocol::FORCE_ANSWER_INSTRUCTION));
            }
            let reply = self.main.generate(&messages)?;
            messages.push(ChatMessage::assistant(reply.clone()));
            let turn = match protocol::parse_main_turn(&reply) {
                Ok(turn) => turn,
                Err(v) => {
                    format = FormatFlag::violated(v);
                    break;
                }
            };
            match turn.action {
                Action::Answer { text } => {
                    final_thought = Some(turn.reason);
                    answer = Some(text);
                    break;
                }
                Action::ToolCall { .. } if forced => {
                    format = FormatFlag::violated(Violation::MissingTags);
                    break;
                }
                Action::ToolCall { query } => {
                    let index = steps.len() + 1;
                    let (candidates, observation, exchange) = self.observe(q, &query)?;
                    let ranker_call_id = exchange.map(|exchange| {
                        let call_id = format!("{id}/{index}");
                        ranker_calls.push(RankerCall {
                            id: call_id.clone(),
                            question_id: q.id.clone(),
                            trajectory_id: id.clone(),
                            rollout,
                            step: index,
                            original_question: q.question.clone(),
                            sub_query: query.clone(),
                            n: candidates.len(),
                            i_ans: candidates.i_ans,
                            d_plus: candidates.d_plus.clone(),
                            exchange,
                            frozen: self.mode == Mode::FixedRanker,
                            reward: None,
                        });
                        call_id
                    });
                    messages.push(ChatMessage::user(render_observation(observation.docs(&candidates))));
                    steps.push(Step {
                        index,
                        thought: turn.reason,
                        sub_query: query,
                        candidates,
                        observation,
                        ranker_call_id,
                    });
                }
            }
        }

        Ok(Trajectory {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            template_version: TEMPLATE_VERSION.to_owned(),
            id,
            question_id: q.id.clone(),
            dataset: q.dataset.clone(),
            question: q.question.clone(),
            golden_answers: q.golden_answers.clone(),
            rollout,
            mode: self.mode,
            steps,
            final_thought,
            answer,
            format,
            forced_answer,
            messages,
            ranker_calls,
            main_reward: None,
            filtered_for_ranker: false,
            config_hash: String::new(),
        })
    }

    fn run_with_retries(
        &self,
        q: &Question,
        rollout: usize,
        max_attempts: u32,
    ) -> Result<Trajectory, RolloutFailure> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.run_trajectory(q, rollout) {
                Ok(t) => return Ok(t),
                Err(RolloutError::Transport(e)) if e.is_retryable() && attempts < max_attempts => {
                    log::warn!("question {} rollout {rollout}: {e}; retrying", q.id);
                }
                Err(source) => {
                    return Err(RolloutFailure {
                        question_id: q.id.clone(),
                        rollout,
                        attempts,
                        source,
                    })
                }
            }
        }
    }

    /// `group_size` independent rollouts, indexed 1..=group_size.
    pub fn run_group(&self, q: &Question, group_size: usize) -> Result<Vec<Trajectory>, RolloutFailure> {
        (1..=group_size).map(|i| self.run_with_retries(q, i, 1)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub group_size: usize,
    /// Worker threads; 1 runs everything on the calling thread.
    pub workers: usize,
    /// Attempts per rollout for retryable transport failures.
    pub max_attempts: u32,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self { group_size: DEFAULT_GROUP_SIZE, workers: 1, max_attempts: 3 }
    }
}

/// Runs every (question, rollout) pair, in parallel up to `workers`. Output
/// order is questions in input order, then rollout index, regardless of
/// scheduling.
pub fn run_batch(
    engine: &Engine<'_>,
    questions: &[Question],
    opts: BatchOptions,
) -> Result<Vec<Trajectory>, RolloutFailure> {
    let units: Vec<(&Question, usize)> = questions
        .iter()
        .flat_map(|q| (1..=opts.group_size).map(move |i| (q, i)))
        .collect();
    let run = |&(q, i): &(&Question, usize)| engine.run_with_retries(q, i, opts.max_attempts.max(1));
    if opts.workers <= 1 {
        return units.iter().map(run).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .expect("thread pool");
    pool.install(|| units.par_iter().map(run).collect())
}
