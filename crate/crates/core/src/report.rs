//! Analysis reports over trajectory files. Every report is a pure function
//! of its input and renders deterministically.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rollout::Trajectory;
use crate::textmetrics::{answer_f1, exact_match, hit_at_k, RelevanceLabels};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("no trajectories to report on")]
    Empty,
    #[error("trajectory {id} made {steps} searches, more than the budget of {budget}")]
    OverBudget { id: String, steps: usize, budget: usize },
}

/// Share of trajectories by number of searches made, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnHistogram {
    /// `percentages[t]` for t searches, t in 0..=budget.
    pub percentages: Vec<f64>,
    pub average: f64,
    pub total: usize,
}

impl TurnHistogram {
    /// From percentages; index is the number of turns.
    pub fn from_percentages(percentages: Vec<f64>) -> Self {
        let average = percentages.iter().enumerate().map(|(t, p)| t as f64 * p).sum::<f64>() / 100.0;
        Self { percentages, average, total: 0 }
    }

    pub fn sum(&self) -> f64 {
        self.percentages.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("turns,percent\n");
        for (t, p) in self.percentages.iter().enumerate() {
            writeln!(out, "{t},{p:.4}").unwrap();
        }
        writeln!(out, "average,{:.4}", self.average).unwrap();
        out
    }
}

pub fn report_turns(trajectories: &[Trajectory], budget: usize) -> Result<TurnHistogram, ReportError> {
    if trajectories.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut counts = vec![0usize; budget + 1];
    for t in trajectories {
        let steps = t.steps.len();
        *counts.get_mut(steps).ok_or_else(|| ReportError::OverBudget {
            id: t.id.clone(),
            steps,
            budget,
        })? += 1;
    }
    let total = trajectories.len();
    let percentages: Vec<f64> = counts.iter().map(|&c| 100.0 * c as f64 / total as f64).collect();
    let average = counts.iter().enumerate().map(|(t, &c)| (t * c) as f64).sum::<f64>() / total as f64;
    Ok(TurnHistogram { percentages, average, total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dataset: String,
    pub n: usize,
    pub f1: f64,
    pub em: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    /// Sorted by dataset name.
    pub rows: Vec<EvalRow>,
    /// Micro average over all trajectories.
    pub aggregate: EvalRow,
}

fn scores(t: &Trajectory) -> (f64, f64) {
    match (&t.answer, t.format.is_ok()) {
        (Some(a), true) => (answer_f1(a, &t.golden_answers), f64::from(u8::from(exact_match(a, &t.golden_answers)))),
        _ => (0.0, 0.0),
    }
}

/// Per-dataset mean answer F1 and EM. Format violations score 0 on both.
pub fn report_eval(trajectories: &[Trajectory]) -> EvalTable {
    let mut acc: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for t in trajectories {
        let (f1, em) = scores(t);
        let e = acc.entry(t.dataset_tag()).or_default();
        e.0 += 1;
        e.1 += f1;
        e.2 += em;
    }
    let row = |dataset: &str, (n, f1, em): (usize, f64, f64)| EvalRow {
        dataset: dataset.to_owned(),
        n,
        f1: if n == 0 { 0.0 } else { f1 / n as f64 },
        em: if n == 0 { 0.0 } else { em / n as f64 },
    };
    let total = acc.values().fold((0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    EvalTable {
        rows: acc.iter().map(|(d, &v)| row(d, v)).collect(),
        aggregate: row("all", total),
    }
}

impl EvalTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,n,f1,em\n");
        for r in self.rows.iter().chain([&self.aggregate]) {
            writeln!(out, "{},{},{:.6},{:.6}", r.dataset, r.n, r.f1, r.em).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub dataset: String,
    pub standard: f64,
    pub oracle: f64,
    pub gap: f64,
    /// `gap / standard`, absent when the standard score is zero.
    pub rel_gain: Option<f64>,
}

/// F1 of oracle retrieval against standard retrieval, per dataset and overall.
pub fn gap_table(standard: &EvalTable, oracle: &EvalTable) -> Vec<GapRow> {
    let lookup = |t: &EvalTable, d: &str| t.rows.iter().find(|r| r.dataset == d).map_or(0.0, |r| r.f1);
    let mut datasets: Vec<&str> = standard.rows.iter().chain(&oracle.rows).map(|r| r.dataset.as_str()).collect();
    datasets.sort_unstable();
    datasets.dedup();
    let mk = |dataset: &str, s: f64, o: f64| GapRow {
        dataset: dataset.to_owned(),
        standard: s,
        oracle: o,
        gap: o - s,
        rel_gain: (s != 0.0).then(|| (o - s) / s),
    };
    let mut rows: Vec<GapRow> = datasets
        .into_iter()
        .map(|d| mk(d, lookup(standard, d), lookup(oracle, d)))
        .collect();
    rows.push(mk("all", standard.aggregate.f1, oracle.aggregate.f1));
    rows
}

pub fn gap_csv(rows: &[GapRow]) -> String {
    let mut out = String::from("dataset,standard_f1,oracle_f1,gap,rel_gain\n");
    for r in rows {
        let gain = r.rel_gain.map(|g| format!("{g:.6}")).unwrap_or_default();
        writeln!(out, "{},{:.6},{:.6},{:.6},{gain}", r.dataset, r.standard, r.oracle, r.gap).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingPoint {
    /// Index of the input batch, e.g. one file per training step.
    pub batch: usize,
    /// Search step within the trajectory; `None` aggregates all steps.
    pub step: Option<usize>,
    pub observations: usize,
    /// Mean Hit@k per cutoff, in cutoff order.
    pub hits: Vec<f64>,
}

/// Mean Hit@k of the observations shown to the agent, per batch and search
/// step, plus an all-steps row per batch.
pub fn report_ranking(batches: &[Vec<Trajectory>], cutoffs: &[usize]) -> Vec<RankingPoint> {
    let mut out = Vec::new();
    for (b, trajs) in batches.iter().enumerate() {
        let mut per_step: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
        let mut all = (0usize, vec![0.0; cutoffs.len()]);
        for s in trajs.iter().flat_map(|t| &t.steps) {
            let shown = &s.observation.positions;
            let labels = RelevanceLabels::new(
                shown
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| s.candidates.d_plus.contains(p))
                    .map(|(rank, _)| rank),
                shown.len(),
            );
            let entry = per_step.entry(s.index).or_insert_with(|| (0, vec![0.0; cutoffs.len()]));
            entry.0 += 1;
            all.0 += 1;
            for (i, &k) in cutoffs.iter().enumerate() {
                let h = f64::from(u8::from(hit_at_k(shown.len(), &labels, k)));
                entry.1[i] += h;
                all.1[i] += h;
            }
        }
        let point = |step, (n, sums): (usize, Vec<f64>)| RankingPoint {
            batch: b,
            step,
            observations: n,
            hits: sums.into_iter().map(|s| if n == 0 { 0.0 } else { s / n as f64 }).collect(),
        };
        out.extend(per_step.into_iter().map(|(step, v)| point(Some(step), v)));
        out.push(point(None, all));
    }
    out
}

pub fn ranking_csv(points: &[RankingPoint], cutoffs: &[usize]) -> String {
    let mut out = String::from("batch,step,observations");
    for k in cutoffs {
        write!(out, ",hit@{k}").unwrap();
    }
    out.push('\n');
    for p in points {
        let step = p.step.map_or_else(|| "all".to_owned(), |s| s.to_string());
        write!(out, "{},{step},{}", p.batch, p.observations).unwrap();
        for h in &p.hits {
            write!(out, ",{h:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}
