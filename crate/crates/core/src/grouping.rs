//! GRPO group formation for ranker calls, group-normalized advantages, loss
//! masks, the clipped surrogate, and batch export.
//!
//! Ranker prompts differ across rollouts because each trajectory issues its
//! own sub-queries, so calls cannot be grouped by prompt. Instead, the calls
//! of one question are split by whether an answer-bearing candidate was
//! retrieved, then greedily clustered by token F1 between sub-queries. Each
//! surviving cluster is one GRPO group; no extra sampling is needed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Role, TEMPLATE_VERSION};
use crate::rewards::Subject;
use crate::rollout::{RankerCall, Trajectory};
use crate::textmetrics::{normalize, token_f1, NormalizeMode, TokenBag};

pub const DEFAULT_DELTA: f64 = 0.8;
pub const DEFAULT_K_MIN: usize = 3;
pub const DEFAULT_EPSILON: f64 = 0.2;
pub const ADVANTAGE_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GroupingError {
    #[error("advantages need at least two rewards, got {0}")]
    TooSmall(usize),
    #[error("ranker call {0} has no reward; run the reward step first")]
    MissingReward(String),
    #[error("trajectory {0} has no agent reward; run the reward step first")]
    MissingMainReward(String),
    #[error("segments leave a gap at offset {0}")]
    Gap(usize),
    #[error("segments overlap at offset {0}")]
    Overlap(usize),
    #[error("segments end at {end} but the response has length {len}")]
    Coverage { end: usize, len: usize },
    #[error("length mismatch: {0}")]
    Shape(String),
    #[error("group references unknown {kind} {id}")]
    Dangling { kind: &'static str, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Easy,
    Hard,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Easy => "easy",
            Split::Hard => "hard",
        }
    }
}

/// Partitions calls by answer availability, preserving order.
pub fn split_by_answer<'a>(calls: &[&'a RankerCall]) -> (Vec<&'a RankerCall>, Vec<&'a RankerCall>) {
    calls.iter().partition(|c| c.i_ans)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Creation order within its split; stays stable through filtering.
    pub index: usize,
    pub representative: TokenBag,
    /// Indices into the clustered input.
    pub members: Vec<usize>,
}

/// Greedy single pass: each sub-query joins the first cluster whose
/// representative it matches with token F1 strictly above `delta`, otherwise
/// it founds a new cluster and becomes its representative.
pub fn greedy_cluster<S: AsRef<str>>(sub_queries: &[S], delta: f64) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for (i, q) in sub_queries.iter().enumerate() {
        let bag = normalize(q.as_ref(), NormalizeMode::Query);
        match clusters
            .iter_mut()
            .find(|c| token_f1(&bag, &c.representative) > delta)
        {
            Some(c) => c.members.push(i),
            None => clusters.push(Cluster {
                index: clusters.len(),
                representative: bag,
                members: vec![i],
            }),
        }
    }
    clusters
}

pub fn filter_min_size(clusters: Vec<Cluster>, k_min: usize) -> Vec<Cluster> {
    clusters.into_iter().filter(|c| c.members.len() >= k_min).collect()
}

/// `(r - mean) / (population std + 1e-6)`; all zeros when the rewards are
/// constant.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, GroupingError> {
    if rewards.len() < 2 {
        return Err(GroupingError::TooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 || rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_EPS)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    /// Generated by the policy being trained.
    Agent,
    /// Inserted by the environment (retrieved documents, instructions).
    Observation,
}

/// Half-open character range of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub kind: SegmentKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpan {
    pub start: usize,
    pub end: usize,
    pub weight: u8,
}

/// Weight 1 on agent segments, 0 on observation segments. Segments must
/// tile `[0, len)` exactly, in order.
pub fn build_loss_mask(segments: &[Segment], len: usize) -> Result<Vec<MaskSpan>, GroupingError> {
    let mut cursor = 0;
    let mut spans = Vec::with_capacity(segments.len());
    for s in segments {
        if s.start > cursor {
            return Err(GroupingError::Gap(cursor));
        }
        if s.start < cursor || s.end < s.start {
            return Err(GroupingError::Overlap(s.start));
        }
        spans.push(MaskSpan {
            start: s.start,
            end: s.end,
            weight: u8::from(s.kind == SegmentKind::Agent),
        });
        cursor = s.end;
    }
    if cursor != len {
        return Err(GroupingError::Coverage { end: cursor, len });
    }
    Ok(spans)
}

/// Maps text to token character ranges. The trainer owns the real tokenizer;
/// this only has to agree with it on span boundaries.
pub trait Tokenizer {
    fn token_ranges(&self, text: &str) -> Vec<(usize, usize)>;
}

pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn token_ranges(&self, text: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, c) in text.chars().enumerate() {
            match (c.is_whitespace(), start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    out.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, text.chars().count()));
        }
        out
    }
}

/// Per-token weights; a token takes the weight of the span holding its first
/// character.
pub fn token_weights(text: &str, spans: &[MaskSpan], tokenizer: &dyn Tokenizer) -> Vec<u8> {
    tokenizer
        .token_ranges(text)
        .into_iter()
        .map(|(start, _)| {
            spans
                .iter()
                .find(|s| s.start <= start && start < s.end)
                .map_or(0, |s| s.weight)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// Masked token sum per sample, averaged over samples.
    #[default]
    SequenceSum,
    /// Masked token mean per sample, averaged over samples.
    TokenMean,
}

/// Clipped surrogate over a group of samples: per sample, the masked token
/// sum (or mean) of `min(ρÂ, clip(ρ, 1-ε, 1+ε)Â)`, averaged over samples.
pub fn grpo_surrogate(
    ratios: &[Vec<f64>],
    advantages: &[f64],
    masks: &[Vec<f64>],
    epsilon: f64,
    reduction: Reduction,
) -> Result<f64, GroupingError> {
    if ratios.len() != advantages.len() || ratios.len() != masks.len() {
        return Err(GroupingError::Shape(format!(
            "{} ratio rows, {} advantages, {} mask rows",
            ratios.len(),
            advantages.len(),
            masks.len()
        )));
    }
    if ratios.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, ((rho, &adv), mask)) in ratios.iter().zip(advantages).zip(masks).enumerate() {
        if rho.len() != mask.len() {
            return Err(GroupingError::Shape(format!(
                "sample {i}: {} ratios vs {} mask entries",
                rho.len(),
                mask.len()
            )));
        }
        let sum: f64 = rho
            .iter()
            .zip(mask)
            .map(|(&r, &m)| m * (r * adv).min(r.clamp(1.0 - epsilon, 1.0 + epsilon) * adv))
            .sum();
        total += match reduction {
            Reduction::SequenceSum => sum,
            Reduction::TokenMean => {
                let count: f64 = mask.iter().sum();
                if count > 0.0 { sum / count } else { 0.0 }
            }
        };
    }
    Ok(total / ratios.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupingParams {
    pub delta: f64,
    pub k_min: usize,
}

impl Default for GroupingParams {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA, k_min: DEFAULT_K_MIN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    pub call_id: String,
    pub trajectory_id: String,
    pub rollout: usize,
    pub step: usize,
    pub sub_query: String,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticGroup {
    /// `{question_id}_{easy|hard}_cluster_{c}`
    pub uid: String,
    pub question_id: String,
    pub split: Split,
    pub cluster: usize,
    /// Normalized sub-query of the founding member.
    pub representative: String,
    pub members: Vec<GroupMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainMember {
    pub trajectory_id: String,
    pub rollout: usize,
    pub reward: f64,
    pub advantage: f64,
}

/// The agent's own GRPO group: all rollouts of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainGroup {
    pub uid: String,
    pub question_id: String,
    pub members: Vec<MainMember>,
}

/// One line of the groups file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GroupRecord {
    /// First line: provenance and accounting for the whole file.
    Audit { config_hash: String, audit: GroupingAudit },
    Ranker(SemanticGroup),
    Main(MainGroup),
}

/// Accounting that shows grouping only consumed recorded calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingAudit {
    /// Trainable ranker calls recorded during rollouts.
    pub calls_recorded: usize,
    /// Calls dropped with their format-violating trajectory.
    pub calls_filtered_with_trajectory: usize,
    /// Calls fed to clustering, i.e. the pre-filter group membership total.
    pub calls_clustered: usize,
    pub calls_kept: usize,
    pub clusters_formed: usize,
    pub clusters_kept: usize,
    pub frozen_calls: usize,
    /// Questions whose agent group had fewer than two rollouts.
    pub main_singletons: usize,
}

impl GroupingAudit {
    pub fn balanced(&self) -> bool {
        self.calls_recorded == self.calls_clustered + self.calls_filtered_with_trajectory
    }

    fn absorb(&mut self, other: GroupingAudit) {
        self.calls_recorded += other.calls_recorded;
        self.calls_filtered_with_trajectory += other.calls_filtered_with_trajectory;
        self.calls_clustered += other.calls_clustered;
        self.calls_kept += other.calls_kept;
        self.clusters_formed += other.clusters_formed;
        self.clusters_kept += other.clusters_kept;
        self.frozen_calls += other.frozen_calls;
        self.main_singletons += other.main_singletons;
    }
}

/// Forms the semantic groups of one question. Calls are visited in
/// ascending (rollout, step) order.
pub fn group_question(
    question_id: &str,
    trajectories: &[&Trajectory],
    params: GroupingParams,
) -> Result<(Vec<SemanticGroup>, GroupingAudit), GroupingError> {
    let mut audit = GroupingAudit::default();
    let mut calls: Vec<&RankerCall> = Vec::new();
    for t in trajectories {
        for c in &t.ranker_calls {
            if c.frozen {
                audit.frozen_calls += 1;
                continue;
            }
            audit.calls_recorded += 1;
            if t.filtered_for_ranker || !t.format.is_ok() {
                audit.calls_filtered_with_trajectory += 1;
            } else {
                calls.push(c);
            }
        }
    }
    calls.sort_by_key(|c| (c.rollout, c.step));
    audit.calls_clustered = calls.len();

    let (easy, hard) = split_by_answer(&calls);
    let mut groups = Vec::new();
    for (split, members) in [(Split::Easy, easy), (Split::Hard, hard)] {
        let queries: Vec<&str> = members.iter().map(|c| c.sub_query.as_str()).collect();
        let clusters = greedy_cluster(&queries, params.delta);
        audit.clusters_formed += clusters.len();
        for cluster in filter_min_size(clusters, params.k_min) {
            let rewards = cluster
                .members
                .iter()
                .map(|&i| {
                    let c = members[i];
                    c.reward
                        .as_ref()
                        .map(|r| r.r_total)
                        .ok_or_else(|| GroupingError::MissingReward(c.id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let advantages = group_advantages(&rewards)?;
            audit.clusters_kept += 1;
            audit.calls_kept += cluster.members.len();
            groups.push(SemanticGroup {
                uid: format!("{question_id}_{}_cluster_{}", split.as_str(), cluster.index),
                question_id: question_id.to_owned(),
                split,
                cluster: cluster.index,
                representative: cluster.representative.tokens().join(" "),
                members: cluster
                    .members
                    .iter()
                    .zip(rewards.iter().zip(&advantages))
                    .map(|(&i, (&reward, &advantage))| {
                        let c = members[i];
                        GroupMember {
                            call_id: c.id.clone(),
                            trajectory_id: c.trajectory_id.clone(),
                            rollout: c.rollout,
                            step: c.step,
                            sub_query: c.sub_query.clone(),
                            reward,
                            advantage,
                        }
                    })
                    .collect(),
            });
        }
    }
    Ok((groups, audit))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupingOutput {
    pub ranker_groups: Vec<SemanticGroup>,
    pub main_groups: Vec<MainGroup>,
    pub audit: GroupingAudit,
}

impl GroupingOutput {
    /// Groups-file lines: the audit, then per question the agent group
    /// followed by its ranker groups.
    pub fn records(&self, config_hash: &str) -> Vec<GroupRecord> {
        let mut out = vec![GroupRecord::Audit { config_hash: config_hash.to_owned(), audit: self.audit }];
        for m in &self.main_groups {
            out.push(GroupRecord::Main(m.clone()));
            out.extend(
                self.ranker_groups
                    .iter()
                    .filter(|g| g.question_id == m.question_id)
                    .cloned()
                    .map(GroupRecord::Ranker),
            );
        }
        out
    }

    pub fn from_records(records: impl IntoIterator<Item = GroupRecord>) -> Self {
        let mut out = GroupingOutput::default();
        for r in records {
            match r {
                GroupRecord::Audit { audit, .. } => out.audit = audit,
                GroupRecord::Main(m) => out.main_groups.push(m),
                GroupRecord::Ranker(g) => out.ranker_groups.push(g),
            }
        }
        out
    }
}

/// Groups a whole rollout batch, question by question in order of first
/// appearance.
pub fn group_batch(trajectories: &[Trajectory], params: GroupingParams) -> Result<GroupingOutput, GroupingError> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_question: BTreeMap<&str, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajectories {
        let entry = by_question.entry(&t.question_id).or_default();
        if entry.is_empty() {
            order.push(&t.question_id);
        }
        entry.push(t);
    }

    let mut out = GroupingOutput::default();
    for qid in order {
        let mut ts = by_question.remove(qid).unwrap_or_default();
        ts.sort_by_key(|t| t.rollout);
        let (groups, audit) = group_question(qid, &ts, params)?;
        out.ranker_groups.extend(groups);
        out.audit.absorb(audit);

        let rewards = ts
            .iter()
            .map(|t| {
                t.main_reward
                    .as_ref()
                    .map(|r| r.r_total)
                    .ok_or_else(|| GroupingError::MissingMainReward(t.id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if rewards.len() < 2 {
            out.audit.main_singletons += 1;
            continue;
        }
        let advantages = group_advantages(&rewards)?;
        out.main_groups.push(MainGroup {
            uid: qid.to_owned(),
            question_id: qid.to_owned(),
            members: ts
                .iter()
                .zip(rewards.iter().zip(&advantages))
                .map(|(t, (&reward, &advantage))| MainMember {
                    trajectory_id: t.id.clone(),
                    rollout: t.rollout,
                    reward,
                    advantage,
                })
                .collect(),
        });
    }
    Ok(out)
}

/// One training record handed to the external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoSample {
    pub uid: String,
    pub subject: Subject,
    /// Trajectory id (agent) or call id (ranker).
    pub source_id: String,
    pub prompt: String,
    pub response: String,
    pub advantage: f64,
    pub reward: f64,
    /// Character offsets into `response`.
    pub mask_spans: Vec<MaskSpan>,
    pub template_version: String,
    pub config_hash: String,
}

/// Agent response text: every message after the prompt, with environment
/// messages wrapped in newlines and masked out.
pub fn agent_response(traj: &Trajectory) -> Result<(String, Vec<MaskSpan>), GroupingError> {
    let mut text = String::new();
    let mut segments = Vec::new();
    let mut cursor = 0;
    for m in traj.messages.iter().skip(1) {
        let (piece, kind) = match m.role {
            Role::Assistant => (m.content.clone(), SegmentKind::Agent),
            Role::User | Role::System => (format!("\n{}\n", m.content), SegmentKind::Observation),
        };
        let len = piece.chars().count();
        segments.push(Segment { start: cursor, end: cursor + len, kind });
        cursor += len;
        text.push_str(&piece);
    }
    let spans = build_loss_mask(&segments, cursor)?;
    Ok((text, spans))
}

/// One sample per ranker call in a surviving group, then one per agent
/// rollout of every agent group.
pub fn export_batch(
    groups: &GroupingOutput,
    trajectories: &[Trajectory],
    config_hash: &str,
) -> Result<Vec<GrpoSample>, GroupingError> {
    let by_traj: BTreeMap<&str, &Trajectory> = trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut samples = Vec::new();

    for g in &groups.ranker_groups {
        for m in &g.members {
            let traj = by_traj.get(m.trajectory_id.as_str()).ok_or_else(|| GroupingError::Dangling {
                kind: "trajectory",
                id: m.trajectory_id.clone(),
            })?;
            let call = traj
                .ranker_calls
                .iter()
                .find(|c| c.id == m.call_id)
                .ok_or_else(|| GroupingError::Dangling { kind: "ranker call", id: m.call_id.clone() })?;
            let response = call.exchange.response.clone();
            let len = response.chars().count();
            let mask_spans =
                build_loss_mask(&[Segment { start: 0, end: len, kind: SegmentKind::Agent }], len)?;
            samples.push(GrpoSample {
                uid: g.uid.clone(),
                subject: Subject::Ranker,
                source_id: call.id.clone(),
                prompt: call.exchange.prompt.clone(),
                response,
                advantage: m.advantage,
                reward: m.reward,
                mask_spans,
                template_version: TEMPLATE_VERSION.to_owned(),
                config_hash: config_hash.to_owned(),
            });
        }
    }

    for g in &groups.main_groups {
        for m in &g.members {
            let traj = by_traj.get(m.trajectory_id.as_str()).ok_or_else(|| GroupingError::Dangling {
                kind: "trajectory",
                id: m.trajectory_id.clone(),
            })?;
            let (response, mask_spans) = agent_response(traj)?;
            samples.push(GrpoSample {
                uid: g.uid.clone(),
                subject: Subject::Main,
                source_id: traj.id.clone(),
                prompt: traj.messages.first().map(|m| m.content.clone()).unwrap_or_default(),
                response,
                advantage: m.advantage,
                reward: m.reward,
                mask_spans,
                template_version: traj.template_version.clone(),
                config_hash: config_hash.to_owned(),
            });
        }
    }
    Ok(samples)
}
