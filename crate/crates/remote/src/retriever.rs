use agentrank_core::policy::TransportError;
use agentrank_core::retrieval::{CandidateSet, Document, Retriever};
use serde::{Deserialize, Serialize};

use crate::{Http, RetryPolicy};

#[derive(Serialize)]
struct Request<'a> {
    query: &'a str,
    n: usize,
}

#[derive(Deserialize)]
struct Hit {
    #[serde(alias = "id")]
    doc_id: String,
    #[serde(default)]
    title: String,
    #[serde(default, alias = "contents")]
    text: String,
    score: f64,
}

/// Retrieval service speaking `POST {query, n}` and answering with a JSON
/// array of `{doc_id, title, text, score}`.
pub struct RemoteRetriever {
    url: String,
    http: Http,
}

impl RemoteRetriever {
    pub fn new(url: impl Into<String>, retry: RetryPolicy) -> Self {
        Self { url: url.into(), http: Http::new(retry) }
    }
}

impl Retriever for RemoteRetriever {
    fn retrieve(&self, query: &str, n: usize) -> Result<CandidateSet, TransportError> {
        let mut hits: Vec<Hit> = self.http.post(&self.url, &Request { query, n }, None)?;
        if hits.iter().any(|h| !h.score.is_finite()) {
            return Err(TransportError::Malformed("non-finite retrieval score".into()));
        }
        if hits.windows(2).any(|w| w[0].score < w[1].score) {
            log::warn!("retriever returned scores out of order for {query:?}; re-sorting");
            hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
        }
        hits.truncate(n);
        Ok(CandidateSet::new(
            query,
            hits.into_iter()
                .map(|h| (Document { id: h.doc_id, title: h.title, text: h.text }, h.score))
                .collect(),
        ))
    }
}
