//! WebAssembly bindings for the static page in `www/`. Every export takes
//! plain values and returns a JSON string.

use agentrank_core::grouping::greedy_cluster;
use agentrank_core::retrieval::{oracle_observe, retriever_top_k, CandidateSet, Document};
use agentrank_core::rewards::{composite_reward, RewardParams};
use agentrank_core::textmetrics::{hit_at_k, normalize, token_f1, NormalizeMode, RelevanceLabels};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Clusters one sub-query per non-empty line.
pub fn cluster_json(lines: &str, delta: f64, k_min: usize) -> Value {
    let queries: Vec<&str> = lines.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let bags: Vec<_> = queries.iter().map(|q| normalize(q, NormalizeMode::Query)).collect();
    let matrix: Vec<Vec<f64>> = bags.iter().map(|a| bags.iter().map(|b| token_f1(a, b)).collect()).collect();
    let clusters: Vec<Value> = greedy_cluster(&queries, delta)
        .into_iter()
        .map(|c| {
            json!({
                "index": c.index,
                "representative": c.representative.tokens().join(" "),
                "members": c.members,
                "kept": c.members.len() >= k_min,
            })
        })
        .collect();
    json!({ "queries": queries, "f1": matrix, "clusters": clusters })
}

pub fn reward_json(format_ok: bool, i_ans: bool, r_rel: f64, r_main: f64, alpha: f64, gamma: f64) -> Value {
    let params = RewardParams { alpha, gamma, ..RewardParams::default() };
    match composite_reward(format_ok, i_ans, r_rel, r_main, &params) {
        Ok(r) => json!({ "ok": true, "case": r.case, "r_total": r.r_total }),
        Err(e) => json!({ "ok": false, "error": e.to_string() }),
    }
}

/// `flags` marks answer-bearing candidates in retriever order, e.g.
/// `"0000010010"`; any character other than `1` is a non-answer candidate.
pub fn promotion_json(flags: &str, k: usize) -> Value {
    let docs: Vec<(Document, f64)> = flags
        .chars()
        .enumerate()
        .map(|(i, _)| (Document { id: i.to_string(), title: String::new(), text: String::new() }, -(i as f64)))
        .collect();
    let mut cands = CandidateSet::new("", docs);
    cands.d_plus = flags.chars().enumerate().filter(|(_, c)| *c == '1').map(|(i, _)| i).collect();
    cands.i_ans = !cands.d_plus.is_empty();
    let k = k.min(cands.len());
    let curve = |positions: &[usize]| -> Vec<bool> {
        let labels = RelevanceLabels::new(
            positions.iter().enumerate().filter(|(_, p)| cands.d_plus.contains(p)).map(|(r, _)| r),
            positions.len(),
        );
        (1..=k).map(|j| hit_at_k(positions.len(), &labels, j)).collect()
    };
    let base = retriever_top_k(&cands, k).positions;
    let oracle = oracle_observe(&cands, k).positions;
    json!({
        "base": base,
        "oracle": oracle,
        "answer_positions": cands.d_plus,
        "hit_base": curve(&base),
        "hit_oracle": curve(&oracle),
    })
}

#[wasm_bindgen]
pub fn cluster_subqueries(lines: &str, delta: f64, k_min: usize) -> String {
    cluster_json(lines, delta, k_min).to_string()
}

#[wasm_bindgen]
pub fn ranker_reward(format_ok: bool, i_ans: bool, r_rel: f64, r_main: f64, alpha: f64, gamma: f64) -> String {
    reward_json(format_ok, i_ans, r_rel, r_main, alpha, gamma).to_string()
}

#[wasm_bindgen]
pub fn oracle_promotion(flags: &str, k: usize) -> String {
    promotion_json(flags, k).to_string()
}
