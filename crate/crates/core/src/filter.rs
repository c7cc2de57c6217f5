//! Selection of synthetic queries: top-K by mean log-probability, top-K by
//! a pointwise reranker, round-trip consistency against BM25, the
//! preference-candidate margin filter, and uniform subsampling.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::cpo::TripletCandidate;
use crate::error::{Error, Result};
use crate::generate::RetryPolicy;
use crate::rerank::{score_pairs, PointwiseScorer};
use crate::score::{Bm25Index, ScoredQuery};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStrategy {
    LogprobTopk,
    RerankerTopk,
    Consistency,
    Margin,
    Random,
}

impl FilterStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterStrategy::LogprobTopk => "logprob-topk",
            FilterStrategy::RerankerTopk => "reranker-topk",
            FilterStrategy::Consistency => "consistency",
            FilterStrategy::Margin => "margin",
            FilterStrategy::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub strategy: FilterStrategy,
    #[serde(default = "default_keep")]
    pub keep: usize,
    #[serde(default = "default_top_k_retrieval")]
    pub top_k_retrieval: usize,
    #[serde(default = "default_lower")]
    pub lower: f64,
    #[serde(default = "default_upper")]
    pub upper: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_keep() -> usize {
    10_000
}
fn default_top_k_retrieval() -> usize {
    3
}
fn default_lower() -> f64 {
    0.3
}
fn default_upper() -> f64 {
    0.7
}

impl FilterConfig {
    pub fn new(strategy: FilterStrategy) -> Self {
        FilterConfig {
            strategy,
            keep: default_keep(),
            top_k_retrieval: default_top_k_retrieval(),
            lower: default_lower(),
            upper: default_upper(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_margins(self.lower, self.upper)?;
        if self.keep == 0 {
            return Err(Error::invalid("keep must be at least 1"));
        }
        if self.top_k_retrieval == 0 {
            return Err(Error::invalid("top_k_retrieval must be at least 1"));
        }
        Ok(())
    }
}

fn check_margins(lower: f64, upper: f64) -> Result<()> {
    if !(0.0 <= lower && lower < upper && upper <= 1.0) {
        return Err(Error::invalid(format!("margins must satisfy 0 <= L < H <= 1, got L={lower} H={upper}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub strategy: String,
    pub input: usize,
    pub kept: usize,
    /// Dropped items per reason.
    pub dropped: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FilterReport {
    fn new(strategy: FilterStrategy, input: usize) -> Self {
        FilterReport {
            strategy: strategy.as_str().to_string(),
            input,
            ..Default::default()
        }
    }

    fn drop(&mut self, reason: &str, n: usize) {
        if n > 0 {
            *self.dropped.entry(reason.to_string()).or_default() += n;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Filtered<T> {
    pub kept: Vec<T>,
    pub report: FilterReport,
}

fn by_key_then_id(key: impl Fn(&ScoredQuery) -> f64) -> impl Fn(&ScoredQuery, &ScoredQuery) -> Ordering {
    move |a, b| {
        key(b)
            .total_cmp(&key(a))
            .then_with(|| a.doc_id().cmp(b.doc_id()))
            .then_with(|| a.seq().cmp(&b.seq()))
    }
}

fn top_k(
    strategy: FilterStrategy,
    mut items: Vec<ScoredQuery>,
    keep: usize,
    key: impl Fn(&ScoredQuery) -> f64,
    mut report: FilterReport,
) -> Filtered<ScoredQuery> {
    if keep > items.len() {
        report.warnings.push(format!("keep={keep} exceeds the {} available items; keeping all", items.len()));
        log::warn!("{}: keep={keep} exceeds input size {}", strategy.as_str(), items.len());
    }
    items.sort_by(by_key_then_id(key));
    let cut = items.len().saturating_sub(keep);
    report.drop("below-top-k", cut);
    items.truncate(keep);
    report.kept = items.len();
    Filtered { kept: items, report }
}

/// Keep the `keep` generations with the highest mean token log-probability.
pub fn filter_logprob_topk(items: Vec<ScoredQuery>, keep: usize) -> Result<Filtered<ScoredQuery>> {
    if keep == 0 {
        return Err(Error::invalid("keep must be at least 1"));
    }
    let mut report = FilterReport::new(FilterStrategy::LogprobTopk, items.len());
    let mut ready = Vec::with_capacity(items.len());
    for item in items {
        if item.mean_logprob.is_some() {
            ready.push(item);
        } else if item.generation.token_logprobs.is_empty() {
            // empty generations carry no tokens to average
            report.drop("no-logprobs", 1);
        } else {
            ready.push(item.with_mean_logprob()?);
        }
    }
    Ok(top_k(
        FilterStrategy::LogprobTopk,
        ready,
        keep,
        |s| s.mean_logprob.expect("filled above"),
        report,
    ))
}

/// Score every generation against its source document with `scorer`, record
/// the score on the item, and keep the `keep` best. Items the scorer cannot
/// handle are dropped and counted.
pub fn filter_reranker_topk(
    items: Vec<ScoredQuery>,
    keep: usize,
    scorer: &dyn PointwiseScorer,
    corpus: &Corpus,
    retry: RetryPolicy,
) -> Result<Filtered<ScoredQuery>> {
    if keep == 0 {
        return Err(Error::invalid("keep must be at least 1"));
    }
    let mut report = FilterReport::new(FilterStrategy::RerankerTopk, items.len());
    let docs: Vec<&Document> = items
        .iter()
        .map(|s| corpus.get(s.doc_id()).ok_or_else(|| Error::UnknownDocument(s.doc_id().to_string())))
        .collect::<Result<_>>()?;
    let pairs: Vec<(&str, &Document)> = items.iter().zip(&docs).map(|(s, d)| (s.query(), *d)).collect();
    let scores = score_pairs(scorer, &pairs, 32, retry);
    let mut scored = Vec::with_capacity(items.len());
    let mut failed = 0;
    for (mut item, score) in items.into_iter().zip(scores) {
        match score {
            Some(s) => {
                item.reranker_score = Some(s);
                scored.push(item);
            }
            None => failed += 1,
        }
    }
    report.drop("scorer-failure", failed);
    Ok(top_k(
        FilterStrategy::RerankerTopk,
        scored,
        keep,
        |s| s.reranker_score.expect("filled above"),
        report,
    ))
}

/// Keep a generation only if BM25 retrieval with it ranks its source
/// document within the top `top_k_retrieval`. Order is preserved.
pub fn filter_consistency(items: Vec<ScoredQuery>, index: &Bm25Index, top_k_retrieval: usize) -> Result<Filtered<ScoredQuery>> {
    if top_k_retrieval == 0 {
        return Err(Error::invalid("top_k_retrieval must be at least 1"));
    }
    let mut report = FilterReport::new(FilterStrategy::Consistency, items.len());
    let verdicts: Vec<Option<&'static str>> = items
        .par_iter()
        .map(|item| {
            let hits = index.retrieve(item.query(), top_k_retrieval);
            if hits.is_empty() {
                Some("no-term-overlap")
            } else if hits.iter().any(|(d, _)| d == item.doc_id()) {
                None
            } else {
                Some("source-not-in-top-k")
            }
        })
        .collect();
    let mut kept = Vec::new();
    for (item, verdict) in items.into_iter().zip(verdicts) {
        match verdict {
            None => kept.push(item),
            Some(reason) => report.drop(reason, 1),
        }
    }
    report.kept = kept.len();
    Ok(Filtered { kept, report })
}

/// Keep a candidate only if every one of its three scores lies strictly
/// inside `(lower, upper)`. Scores outside [0, 1] are an error.
pub fn filter_margin(items: Vec<TripletCandidate>, lower: f64, upper: f64) -> Result<Filtered<TripletCandidate>> {
    check_margins(lower, upper)?;
    let mut report = FilterReport::new(FilterStrategy::Margin, items.len());
    let mut kept = Vec::new();
    for item in items {
        let scores = item.scores();
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::invalid(format!(
                "candidate for doc `{}` has score {bad} outside [0, 1]",
                item.pair.doc.id
            )));
        }
        if scores.iter().any(|&s| s >= upper) {
            report.drop("above-upper", 1);
        } else if scores.iter().any(|&s| s <= lower) {
            report.drop("below-lower", 1);
        } else {
            kept.push(item);
        }
    }
    report.kept = kept.len();
    Ok(Filtered { kept, report })
}

/// Single-score variant of the margin filter for plain generations: keep
/// items whose combined score lies strictly inside `(lower, upper)`.
pub fn filter_score_band(items: Vec<ScoredQuery>, lower: f64, upper: f64) -> Result<Filtered<ScoredQuery>> {
    check_margins(lower, upper)?;
    let mut report = FilterReport::new(FilterStrategy::Margin, items.len());
    let mut kept = Vec::new();
    for item in items {
        let s = item.combined.ok_or_else(|| {
            Error::invalid(format!("generation {} for doc `{}` has no combined score", item.seq(), item.doc_id()))
        })?;
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!("combined score {s} outside [0, 1]")));
        }
        if s >= upper {
            report.drop("above-upper", 1);
        } else if s <= lower {
            report.drop("below-lower", 1);
        } else {
            kept.push(item);
        }
    }
    report.kept = kept.len();
    Ok(Filtered { kept, report })
}

/// `n` items drawn uniformly without replacement, in sampled order.
pub fn subsample<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    if n > items.len() {
        return Err(Error::invalid(format!("cannot draw {n} of {} items", items.len())));
    }
    let mut rng = rng_for(seed, &format!("subsample/{n}"));
    Ok(sample(&mut rng, items.len(), n).into_iter().map(|i| items[i].clone()).collect())
}
