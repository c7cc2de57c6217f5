//! Evaluation: BM25 first stage, pointwise reranking, nDCG and recall,
//! reranker-training export and the filter-size ablation driver.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, QrelSet, QuerySet};
use crate::error::{Error, Result};
use crate::filter::{filter_reranker_topk, subsample};
use crate::generate::RetryPolicy;
use crate::rerank::{score_pairs, PointwiseScorer};
use crate::score::{write_scored_queries, Bm25Index, Bm25Params, ScoredQuery};
use crate::seed::rng_for;
use crate::trec::{Run, RunEntry};

pub const BM25_TAG: &str = "bm25";

/// Top-`k` BM25 hits for every query. Queries matching nothing get an
/// empty list.
pub fn first_stage_retrieve(index: &Bm25Index, queries: &QuerySet, k: usize) -> Run {
    let all: Vec<_> = queries.iter().collect();
    let lists: Vec<(String, Vec<(String, f64)>)> =
        all.par_iter().map(|q| (q.id.clone(), index.retrieve(&q.text, k))).collect();
    let mut run = Run::default();
    for (qid, hits) in lists {
        run.push_ranked(&qid, &hits, BM25_TAG);
    }
    run
}

/// Query id, reranked hits, count of hits that fell back to BM25 order.
type RerankedList = (String, Vec<(String, f64)>, usize);

#[derive(Debug, Clone)]
pub struct RerankOptions {
    pub top_k: usize,
    pub tag: String,
    pub batch_size: usize,
    pub retry: RetryPolicy,
}

impl Default for RerankOptions {
    fn default() -> Self {
        RerankOptions {
            top_k: 100,
            tag: "rerank".into(),
            batch_size: 32,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RerankReport {
    pub queries: usize,
    pub rescored: usize,
    /// Pairs the scorer never answered; they keep their first-stage score.
    pub failed: usize,
}

fn rerank_list(
    query: &str,
    entries: &[RunEntry],
    scorer: &dyn PointwiseScorer,
    corpus: &Corpus,
    options: &RerankOptions,
) -> Result<(Vec<(String, f64)>, usize)> {
    let cut = options.top_k.min(entries.len());
    let (head, tail) = entries.split_at(cut);
    let docs: Vec<&Document> = head
        .iter()
        .map(|e| corpus.get(&e.doc_id).ok_or_else(|| Error::UnknownDocument(e.doc_id.clone())))
        .collect::<Result<_>>()?;
    let pairs: Vec<(&str, &Document)> = docs.iter().map(|d| (query, *d)).collect();
    let scores = score_pairs(scorer, &pairs, options.batch_size, options.retry);
    let mut failed = 0;
    let mut ranked: Vec<(String, f64)> = head
        .iter()
        .zip(scores)
        .map(|(e, s)| {
            let score = s.unwrap_or_else(|| {
                failed += 1;
                e.score
            });
            (e.doc_id.clone(), score)
        })
        .collect();
    if let Some((_, s)) = ranked.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::invalid(format!("scorer returned non-finite score {s}")));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let floor = ranked.last().map_or(f64::INFINITY, |r| r.1);
    match tail.first() {
        Some(top) if top.score > floor => {
            ranked.extend(tail.iter().map(|e| (e.doc_id.clone(), floor - (top.score - e.score))));
        }
        _ => ranked.extend(tail.iter().map(|e| (e.doc_id.clone(), e.score))),
    }
    Ok((ranked, failed))
}

/// Re-score the head of every ranked list with `scorer` and re-sort it
/// (descending, ties by doc id). Entries past `top_k` keep their order and
/// are shifted down, when needed, so they stay below the reranked block.
pub fn rerank(
    run: &Run,
    queries: &QuerySet,
    scorer: &dyn PointwiseScorer,
    corpus: &Corpus,
    options: &RerankOptions,
) -> Result<(Run, RerankReport)> {
    let lists: Vec<(&String, &Vec<RunEntry>)> = run.queries().collect();
    let results: Vec<Result<RerankedList>> = lists
        .par_iter()
        .map(|(qid, entries)| {
            let query = queries
                .get(qid)
                .ok_or_else(|| Error::invalid(format!("run query `{qid}` is not in the query set")))?;
            let (ranked, failed) = rerank_list(&query.text, entries, scorer, corpus, options)?;
            Ok(((*qid).clone(), ranked, failed))
        })
        .collect();
    let mut out = Run::default();
    let mut report = RerankReport::default();
    for r in results {
        let (qid, ranked, failed) = r?;
        report.queries += 1;
        report.rescored += options.top_k.min(ranked.len()) - failed;
        report.failed += failed;
        out.push_ranked(&qid, &ranked, &options.tag);
    }
    out.validate()?;
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub cutoff: usize,
    pub mean: f64,
    pub per_query: BTreeMap<String, f64>,
    /// Queries skipped because they have no positive judgement.
    pub excluded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl MetricReport {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path.as_ref())?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }
}

/// Queries with at least one positive judgement; the rest are excluded.
fn evaluable(run: &Run, qrels: &QrelSet) -> (Vec<String>, usize) {
    let mut keep = Vec::new();
    let mut excluded = 0;
    for qid in qrels.query_ids() {
        let judged = qrels.judged(qid).expect("listed query");
        if judged.values().any(|&g| g > 0) {
            keep.push(qid.clone());
        } else {
            excluded += 1;
        }
    }
    excluded += run.queries().filter(|(q, _)| qrels.judged(q).is_none()).count();
    (keep, excluded)
}

fn report(metric: &str, cutoff: usize, per_query: BTreeMap<String, f64>, excluded: usize) -> MetricReport {
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    MetricReport {
        metric: metric.to_string(),
        cutoff,
        mean,
        per_query,
        excluded,
        config_hash: None,
    }
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k with exponential gain. Judged queries missing from the run
/// score zero.
pub fn ndcg_at_k(run: &Run, qrels: &QrelSet, k: usize) -> MetricReport {
    let (queries, excluded) = evaluable(run, qrels);
    let per_query = queries
        .into_iter()
        .map(|qid| {
            let judged = qrels.judged(&qid).expect("evaluable");
            let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let idcg = dcg(ideal.into_iter().take(k));
            let got = run
                .get(&qid)
                .map(|list| dcg(list.iter().take(k).map(|e| judged.get(&e.doc_id).copied().unwrap_or(0))))
                .unwrap_or(0.0);
            (qid, got / idcg)
        })
        .collect();
    report("ndcg", k, per_query, excluded)
}

/// Fraction of a query's relevant documents found in the top `k`.
pub fn recall_at_k(run: &Run, qrels: &QrelSet, k: usize) -> MetricReport {
    let (queries, excluded) = evaluable(run, qrels);
    let per_query = queries
        .into_iter()
        .map(|qid| {
            let judged = qrels.judged(&qid).expect("evaluable");
            let relevant = judged.values().filter(|&&g| g > 0).count();
            let found = run
                .get(&qid)
                .map(|list| list.iter().take(k).filter(|e| judged.get(&e.doc_id).is_some_and(|&g| g > 0)).count())
                .unwrap_or(0);
            (qid, found as f64 / relevant as f64)
        })
        .collect();
    report("recall", k, per_query, excluded)
}

#[derive(Serialize)]
struct TrainingLine<'a> {
    query: &'a str,
    doc_id: &'a str,
    label: u8,
}

/// Negatives for one query: a uniform draw from the BM25 top 1000 minus the
/// source document, topped up uniformly from the rest of the corpus when
/// the retrieved pool is too small.
fn draw_negatives(index: &Bm25Index, item: &ScoredQuery, n: usize, seed: u64) -> Vec<String> {
    let source = item.doc_id();
    let mut rng = rng_for(seed, &format!("negatives/{}/{}", source, item.seq()));
    let pool: Vec<String> = index
        .retrieve(item.query(), 1000)
        .into_iter()
        .map(|(d, _)| d)
        .filter(|d| d != source)
        .collect();
    if pool.len() >= n {
        return sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i].clone()).collect();
    }
    let taken: HashSet<&str> = pool.iter().map(String::as_str).collect();
    let rest: Vec<&String> = index
        .doc_ids()
        .iter()
        .filter(|d| *d != source && !taken.contains(d.as_str()))
        .collect();
    let extra = (n - pool.len()).min(rest.len());
    let mut out = pool.clone();
    out.extend(sample(&mut rng, rest.len(), extra).into_iter().map(|i| rest[i].clone()));
    out
}

/// Reranker training data: for each kept query, its source document as a
/// positive and `n_negatives` sampled negatives. Returns lines written.
pub fn export_training_file(
    kept: &[ScoredQuery],
    index: &Bm25Index,
    n_negatives: usize,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<usize> {
    if kept.is_empty() {
        return Err(Error::invalid("no queries to export"));
    }
    if n_negatives == 0 {
        return Err(Error::invalid("n_negatives must be at least 1"));
    }
    let negatives: Vec<Vec<String>> = kept.par_iter().map(|q| draw_negatives(index, q, n_negatives, seed)).collect();
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    let mut lines = 0;
    for (item, negs) in kept.iter().zip(&negatives) {
        let pos = TrainingLine { query: item.query(), doc_id: item.doc_id(), label: 1 };
        serde_json::to_writer(&mut out, &pos)?;
        out.write_all(b"\n")?;
        lines += 1;
        for d in negs {
            serde_json::to_writer(&mut out, &TrainingLine { query: item.query(), doc_id: d, label: 0 })?;
            out.write_all(b"\n")?;
            lines += 1;
        }
    }
    out.flush()?;
    Ok(lines)
}

/// Turns a filtered query set into a retrieval score. Real deployments
/// train a reranker on the exported file; tests use a cheap stand-in.
pub trait EvalLoop: Sync {
    fn evaluate(&self, kept: &[ScoredQuery], training_file: &Path) -> Result<f64>;
}

/// Appends each kept query to its source document, re-indexes with BM25 and
/// reports nDCG@10 on the held-out queries.
pub struct DocumentExpansionEval<'a> {
    pub corpus: &'a Corpus,
    pub queries: &'a QuerySet,
    pub qrels: &'a QrelSet,
    pub params: Bm25Params,
    pub depth: usize,
}

impl EvalLoop for DocumentExpansionEval<'_> {
    fn evaluate(&self, kept: &[ScoredQuery], _training_file: &Path) -> Result<f64> {
        let mut extra: BTreeMap<&str, Vec<&ScoredQuery>> = BTreeMap::new();
        for q in kept {
            extra.entry(q.doc_id()).or_default().push(q);
        }
        let docs = self.corpus.iter().map(|d| {
            let mut text = d.text.clone();
            if let Some(list) = extra.get_mut(d.id.as_str()) {
                list.sort_by_key(|q| q.seq());
                for q in list.iter() {
                    text.push(' ');
                    text.push_str(q.query());
                }
            }
            Document::new(d.id.clone(), d.title.clone(), text)
        });
        let expanded = Corpus::from_documents(docs)?;
        let index = Bm25Index::build(&expanded, self.params)?;
        let run = first_stage_retrieve(&index, self.queries, self.depth);
        Ok(ndcg_at_k(&run, self.qrels, 10).mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub pool_size: usize,
    pub kept: usize,
    pub ndcg10: Option<f64>,
    pub distinct_docs: usize,
    pub mean_reranker_score: f64,
}

pub struct AblationSetup<'a> {
    pub corpus: &'a Corpus,
    pub index: &'a Bm25Index,
    pub n_negatives: usize,
    pub seed: u64,
    pub retry: RetryPolicy,
    /// Where the per-size filtered and training files go.
    pub out_dir: &'a Path,
    pub eval: Option<&'a dyn EvalLoop>,
}

/// For each pool size: subsample the generations, keep the `keep` best by
/// reranker score, export training data and, when an evaluation loop is
/// wired in, score the result.
pub fn ablate_filter(
    generations: &[ScoredQuery],
    sizes: &[usize],
    keep: usize,
    scorer: &dyn PointwiseScorer,
    setup: &AblationSetup<'_>,
) -> Result<Vec<AblationRow>> {
    if sizes.is_empty() {
        return Err(Error::invalid("no pool sizes given"));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s > generations.len()) {
        return Err(Error::invalid(format!("pool size {s} exceeds the {} generations", generations.len())));
    }
    if sizes.iter().any(|&s| keep > s) {
        return Err(Error::invalid(format!("keep={keep} exceeds the smallest pool size")));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let pool = subsample(generations, size, setup.seed)?;
        let filtered = filter_reranker_topk(pool, keep, scorer, setup.corpus, setup.retry)?;
        let kept = filtered.kept;
        write_scored_queries(setup.out_dir.join(format!("filtered_{size}.jsonl")), &kept)?;
        let train = setup.out_dir.join(format!("train_{size}.jsonl"));
        if !kept.is_empty() {
            export_training_file(&kept, setup.index, setup.n_negatives, setup.seed, &train)?;
        }
        let ndcg10 = match setup.eval {
            Some(e) => Some(e.evaluate(&kept, &train)?),
            None => None,
        };
        let distinct_docs = kept.iter().map(ScoredQuery::doc_id).collect::<HashSet<_>>().len();
        let mean_reranker_score = if kept.is_empty() {
            0.0
        } else {
            kept.iter().filter_map(|q| q.reranker_score).sum::<f64>() / kept.len() as f64
        };
        log::info!("ablation pool={size}: kept {}", kept.len());
        rows.push(AblationRow {
            pool_size: size,
            kept: kept.len(),
            ndcg10,
            distinct_docs,
            mean_reranker_score,
        });
    }
    Ok(rows)
}

/// `pool_size,kept,ndcg10`; the score column is blank when not evaluated.
pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    writeln!(out, "pool_size,kept,ndcg10")?;
    for r in rows {
        match r.ndcg10 {
            Some(v) => writeln!(out, "{},{},{:.6}", r.pool_size, r.kept, v)?,
            None => writeln!(out, "{},{},", r.pool_size, r.kept)?,
        }
    }
    out.flush()?;
    Ok(())
}
