//! Corpus ingestion, first-stage retrieval, candidate annotation, and the
//! three ways an observation is built from a candidate set: plain top-k,
//! oracle promotion, and generative reranking.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{Policy, TransportError};
use crate::protocol::{self, ChatMessage, FormatFlag};
use crate::textmetrics::{contains_answer, normalize, NormalizeMode};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    /// Title and body, the text searched for gold answers.
    pub fn contents(&self) -> String {
        format!("{}\n{}", self.title, self.text)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("line {line}: {source}")]
    Record { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads `{"id","title","text"}` records, one per line. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Document, IngestError>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(IngestError::Io(e))),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(
            serde_json::from_str(&l).map_err(|source| IngestError::Record { line: i + 1, source }),
        ),
    })
}

/// First-stage candidates for one sub-query, with gold-answer annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub sub_query: String,
    pub docs: Vec<Document>,
    /// Non-increasing, aligned with `docs`.
    pub scores: Vec<f64>,
    pub i_ans: bool,
    /// Positions of answer-bearing documents, strictly increasing.
    pub d_plus: Vec<usize>,
}

impl CandidateSet {
    pub fn new(sub_query: impl Into<String>, ranked: Vec<(Document, f64)>) -> Self {
        let (docs, scores) = ranked.into_iter().unzip();
        Self { sub_query: sub_query.into(), docs, scores, i_ans: false, d_plus: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

pub trait Retriever: Send + Sync {
    /// Top `n` candidates for `query`, unannotated.
    fn retrieve(&self, query: &str, n: usize) -> Result<CandidateSet, TransportError>;
}

/// In-memory BM25 index over title + text.
#[derive(Debug, Clone, Default)]
pub struct Index {
    docs: Vec<Document>,
    lengths: Vec<u32>,
    avg_len: f64,
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl Index {
    pub fn build(corpus: impl IntoIterator<Item = Document>) -> Result<Self, IngestError> {
        Self::try_build(corpus.into_iter().map(Ok))
    }

    /// Builds from a fallible stream, stopping at the first error.
    pub fn try_build(
        corpus: impl IntoIterator<Item = Result<Document, IngestError>>,
    ) -> Result<Self, IngestError> {
        let mut index = Index::default();
        let mut seen = std::collections::HashSet::new();
        for doc in corpus {
            let doc = doc?;
            if !seen.insert(doc.id.clone()) {
                return Err(IngestError::DuplicateId(doc.id));
            }
            let d = index.docs.len() as u32;
            let tokens = normalize(&format!("{} {}", doc.title, doc.text), NormalizeMode::Query);
            index.lengths.push(tokens.len() as u32);
            for (term, &tf) in tokens.counts() {
                index.postings.entry(term.clone()).or_default().push((d, tf as u32));
            }
            index.docs.push(doc);
        }
        let total: u64 = index.lengths.iter().map(|&l| l as u64).sum();
        index.avg_len = if index.docs.is_empty() { 0.0 } else { total as f64 / index.docs.len() as f64 };
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn average_length(&self) -> f64 {
        self.avg_len
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 scores for every document; zero where no query term occurs.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.docs.len()];
        for term in normalize(query, NormalizeMode::Query).tokens() {
            let Some(postings) = self.postings.get(term) else { continue };
            let idf = self.idf(postings.len());
            for &(d, tf) in postings {
                let tf = tf as f64;
                let norm = 1.0 - BM25_B + BM25_B * self.lengths[d as usize] as f64 / self.avg_len;
                scores[d as usize] += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
            }
        }
        scores
    }

    /// Top `n` matching documents by score, ties broken by ascending id.
    pub fn search(&self, query: &str, n: usize) -> CandidateSet {
        let scores = self.scores(query);
        let mut hits: Vec<usize> = (0..self.docs.len()).filter(|&d| scores[d] > 0.0).collect();
        hits.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| self.docs[a].id.cmp(&self.docs[b].id))
        });
        hits.truncate(n);
        CandidateSet::new(
            query,
            hits.into_iter().map(|d| (self.docs[d].clone(), scores[d])).collect(),
        )
    }
}

impl Retriever for Index {
    fn retrieve(&self, query: &str, n: usize) -> Result<CandidateSet, TransportError> {
        Ok(self.search(query, n))
    }
}

/// Marks candidates containing a gold alias.
pub fn annotate(mut cands: CandidateSet, gold: &[String]) -> CandidateSet {
    cands.d_plus = cands
        .docs
        .iter()
        .enumerate()
        .filter(|(_, d)| contains_answer(&d.contents(), gold))
        .map(|(i, _)| i)
        .collect();
    cands.i_ans = !cands.d_plus.is_empty();
    cands
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Ranker,
    RetrieverTopk,
    Oracle,
    Fallback,
}

/// Documents shown to the agent, as positions into the step's candidate set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub positions: Vec<usize>,
    pub provenance: Provenance,
}

impl Observation {
    pub fn docs<'a>(&'a self, cands: &'a CandidateSet) -> impl Iterator<Item = &'a Document> + 'a {
        self.positions.iter().map(move |&p| &cands.docs[p])
    }
}

pub fn retriever_top_k(cands: &CandidateSet, k: usize) -> Observation {
    Observation {
        positions: (0..k.min(cands.len())).collect(),
        provenance: Provenance::RetrieverTopk,
    }
}

/// Answer-bearing candidates first (original order kept, truncated to `k`),
/// then the best-ranked remaining candidates. Without answer-bearing
/// candidates this is the plain top-k.
pub fn oracle_observe(cands: &CandidateSet, k: usize) -> Observation {
    let mut positions: Vec<usize> = cands.d_plus.iter().copied().take(k).collect();
    let rest = (0..cands.len()).filter(|p| !cands.d_plus.contains(p));
    positions.extend(rest.take(k - positions.len()));
    Observation { positions, provenance: Provenance::Oracle }
}

/// One ranker invocation: what was sent, what came back, how it parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerExchange {
    pub prompt: String,
    pub response: String,
    pub k: usize,
    pub format: FormatFlag,
    /// 1-based candidate indices when the reply parsed.
    pub ranking: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStage {
    pub candidates: CandidateSet,
    pub observation: Observation,
    /// `None` only when retrieval came back empty and the ranker was skipped.
    pub exchange: Option<RankerExchange>,
}

/// Asks the ranker to pick `min(k, |cands|)` of the candidates. A reply that
/// fails to parse falls back to the retriever's own top-k.
pub fn rerank(
    original_question: &str,
    cands: &CandidateSet,
    ranker: &dyn Policy,
    k: usize,
) -> Result<(Observation, Option<RankerExchange>), TransportError> {
    let k = k.min(cands.len());
    if k == 0 {
        return Ok((
            Observation { positions: Vec::new(), provenance: Provenance::Fallback },
            None,
        ));
    }
    let prompt = protocol::render_ranker_prompt(original_question, &cands.sub_query, &cands.docs, k)
        .expect("k clamped to the candidate count");
    let response = ranker.generate(&[ChatMessage::user(prompt.clone())])?;
    let parsed = protocol::parse_ranker_turn(&response, cands.len(), k);
    let format = FormatFlag::of(&parsed);
    let (observation, ranking) = match parsed {
        Ok(turn) => (
            Observation {
                positions: turn.ranking.iter().map(|i| i - 1).collect(),
                provenance: Provenance::Ranker,
            },
            Some(turn.ranking),
        ),
        Err(_) => {
            let mut fallback = retriever_top_k(cands, k);
            fallback.provenance = Provenance::Fallback;
            (fallback, None)
        }
    };
    Ok((observation, Some(RankerExchange { prompt, response, k, format, ranking })))
}

/// Retrieve `n`, annotate against `gold`, then rerank down to `k`.
pub fn two_stage_observe(
    original_question: &str,
    sub_query: &str,
    retriever: &dyn Retriever,
    ranker: &dyn Policy,
    gold: &[String],
    n: usize,
    k: usize,
) -> Result<TwoStage, TransportError> {
    let candidates = annotate(retriever.retrieve(sub_query, n)?, gold);
    let (observation, exchange) = rerank(original_question, &candidates, ranker, k)?;
    Ok(TwoStage { candidates, observation, exchange })
}
