//! Pointwise relevance scorers: one standalone score per (query, document)
//! pair, higher meaning more relevant.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{BackendError, Error, Result};
use crate::generate::RetryPolicy;
use crate::score::{Bm25Index, QueryEvaluator};

pub trait PointwiseScorer: Send + Sync {
    fn score_batch(&self, pairs: &[(&str, &Document)]) -> Result<Vec<f64>>;

    fn name(&self) -> String;
}

fn is_retryable(e: &Error) -> bool {
    matches!(e, Error::Backend(b) if b.is_retryable())
}

fn with_retry(scorer: &dyn PointwiseScorer, pairs: &[(&str, &Document)], retry: RetryPolicy) -> Result<Vec<f64>> {
    let attempts = retry.attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match scorer.score_batch(pairs) {
            Ok(scores) if scores.len() == pairs.len() => return Ok(scores),
            Ok(scores) => {
                return Err(BackendError::Protocol(format!("{} pairs scored, {} scores returned", pairs.len(), scores.len())).into())
            }
            Err(e) if is_retryable(&e) && attempt < attempts => {
                thread::sleep(retry.base_delay * 2u32.pow(attempt - 1));
            }
            Err(e) => return Err(e),
        }
    }
}

/// Score `pairs` in batches. A batch that keeps failing is retried item by
/// item; items that still fail come back as `None`.
pub fn score_pairs(
    scorer: &dyn PointwiseScorer,
    pairs: &[(&str, &Document)],
    batch_size: usize,
    retry: RetryPolicy,
) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(batch_size.max(1)) {
        match with_retry(scorer, chunk, retry) {
            Ok(scores) => out.extend(scores.into_iter().map(Some)),
            Err(e) => {
                log::warn!("{}: batch of {} failed ({e}); scoring items singly", scorer.name(), chunk.len());
                for pair in chunk {
                    match with_retry(scorer, std::slice::from_ref(pair), retry) {
                        Ok(s) => out.push(Some(s[0])),
                        Err(e) => {
                            log::warn!("{}: giving up on doc {}: {e}", scorer.name(), pair.1.id);
                            out.push(None);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Raw BM25 of the query against the document's index entry.
pub struct Bm25Scorer<'a> {
    pub index: &'a Bm25Index,
}

impl PointwiseScorer for Bm25Scorer<'_> {
    fn score_batch(&self, pairs: &[(&str, &Document)]) -> Result<Vec<f64>> {
        pairs.iter().map(|(q, d)| self.index.score(q, &d.id)).collect()
    }

    fn name(&self) -> String {
        "bm25".into()
    }
}

/// The blended encoder + BM25-softmax query-evaluation score.
pub struct CombinedScorer<'a, 'b> {
    pub evaluator: &'b QueryEvaluator<'a>,
}

impl PointwiseScorer for CombinedScorer<'_, '_> {
    fn score_batch(&self, pairs: &[(&str, &Document)]) -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|(q, d)| self.evaluator.score(d, q).map(|s| s.combined))
            .collect()
    }

    fn name(&self) -> String {
        "combined".into()
    }
}

#[derive(Serialize)]
struct ScorePair<'a> {
    query: &'a str,
    doc: String,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    pairs: Vec<ScorePair<'a>>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Client for `POST {base}/score`.
pub struct HttpScorer {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpScorer {
    pub fn new(base: &str) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpScorer {
            endpoint: format!("{}/score", base.trim_end_matches('/')),
            client,
        })
    }
}

impl PointwiseScorer for HttpScorer {
    fn score_batch(&self, pairs: &[(&str, &Document)]) -> Result<Vec<f64>> {
        let body = ScoreRequest {
            pairs: pairs
                .iter()
                .map(|(q, d)| ScorePair { query: q, doc: d.full_text() })
                .collect(),
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transport(format!("{} returned {status}", self.endpoint)).into());
        }
        if !status.is_success() {
            return Err(BackendError::Protocol(format!("{} returned {status}", self.endpoint)).into());
        }
        let parsed: ScoreResponse = resp.json().map_err(|e| BackendError::Protocol(e.to_string()))?;
        if parsed.scores.len() != pairs.len() {
            return Err(BackendError::Protocol(format!(
                "sent {} pairs, received {} scores",
                pairs.len(),
                parsed.scores.len()
            ))
            .into());
        }
        Ok(parsed.scores)
    }

    fn name(&self) -> String {
        self.endpoint.clone()
    }
}
