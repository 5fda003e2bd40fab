//! Text normalization and the token-level metrics used throughout the crate:
//! answer F1 / exact match, gold-answer containment, and Hit@k relevance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Default Hit@k cutoff set for the relevance reward.
pub const DEFAULT_CUTOFFS: [usize; 3] = [1, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    /// Answer comparison: articles are dropped.
    Answer,
    /// Sub-query comparison: articles are kept.
    Query,
}

/// Normalized tokens together with their multiset view.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenBag {
    tokens: Vec<String>,
    counts: BTreeMap<String, usize>,
}

impl TokenBag {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut counts = BTreeMap::new();
        for t in &tokens {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
        Self { tokens, counts }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &BTreeMap<String, usize> {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Multiset intersection size.
    pub fn overlap(&self, other: &TokenBag) -> usize {
        self.counts
            .iter()
            .map(|(t, &c)| c.min(other.counts.get(t).copied().unwrap_or(0)))
            .sum()
    }
}

/// Lowercase, delete punctuation, split on whitespace. Answer mode also drops
/// the articles `a`, `an`, `the`.
pub fn normalize(text: &str, mode: NormalizeMode) -> TokenBag {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let tokens = cleaned
        .split_whitespace()
        .filter(|t| mode == NormalizeMode::Query || !ARTICLES.contains(t))
        .map(str::to_owned)
        .collect();
    TokenBag::from_tokens(tokens)
}

/// Harmonic mean of multiset precision and recall. Zero when either side is
/// empty or nothing overlaps.
pub fn token_f1(a: &TokenBag, b: &TokenBag) -> f64 {
    let overlap = a.overlap(b);
    if overlap == 0 {
        return 0.0;
    }
    // 2PR/(P+R) with P = o/|a|, R = o/|b| reduces to 2o/(|a|+|b|), one rounding.
    2.0 * overlap as f64 / (a.len() + b.len()) as f64
}

/// An empty normalized prediction never matches.
pub fn exact_match(pred: &str, gold: &[String]) -> bool {
    let p = normalize(pred, NormalizeMode::Answer);
    !p.is_empty()
        && gold
            .iter()
            .any(|g| normalize(g, NormalizeMode::Answer).tokens == p.tokens)
}

/// Max over gold aliases of the answer-mode token F1.
pub fn answer_f1(pred: &str, gold: &[String]) -> f64 {
    let p = normalize(pred, NormalizeMode::Answer);
    gold.iter()
        .map(|g| token_f1(&p, &normalize(g, NormalizeMode::Answer)))
        .fold(0.0, f64::max)
}

/// True iff some alias' normalized token sequence occurs contiguously in the
/// normalized document. Matching is on whole tokens, so "art" never matches
/// inside "martha".
pub fn contains_answer(doc_text: &str, gold: &[String]) -> bool {
    let doc = normalize(doc_text, NormalizeMode::Answer);
    gold.iter().any(|g| {
        let alias = normalize(g, NormalizeMode::Answer);
        !alias.is_empty()
            && doc
                .tokens
                .windows(alias.len())
                .any(|w| w == alias.tokens.as_slice())
    })
}

/// 0-based ranks of pseudo-relevant documents within one ranked list.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelevanceLabels {
    relevant_positions: BTreeSet<usize>,
}

impl RelevanceLabels {
    /// Positions at or beyond `list_len` are dropped.
    pub fn new(positions: impl IntoIterator<Item = usize>, list_len: usize) -> Self {
        Self {
            relevant_positions: positions.into_iter().filter(|&p| p < list_len).collect(),
        }
    }

    pub fn positions(&self) -> &BTreeSet<usize> {
        &self.relevant_positions
    }

    pub fn is_empty(&self) -> bool {
        self.relevant_positions.is_empty()
    }

    pub fn first(&self) -> Option<usize> {
        self.relevant_positions.first().copied()
    }
}

pub fn hit_at_k(ranking_len: usize, labels: &RelevanceLabels, k: usize) -> bool {
    match labels.first() {
        Some(p) => p < k.min(ranking_len),
        None => false,
    }
}

/// Mean Hit@k over `cutoffs`. An empty cutoff set yields 0.
pub fn relevance_reward(ranking_len: usize, labels: &RelevanceLabels, cutoffs: &[usize]) -> f64 {
    if cutoffs.is_empty() {
        return 0.0;
    }
    let hits = cutoffs
        .iter()
        .filter(|&&k| hit_at_k(ranking_len, labels, k))
        .count();
    hits as f64 / cutoffs.len() as f64
}
