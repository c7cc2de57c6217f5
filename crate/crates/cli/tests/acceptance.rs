//! Acceptance gate. Every criterion is checked here with its own oracle and
//! tolerance and reported on one line:
//!
//! ```text
//! [PASS] bm25-oracle: 200 corpora, 40360 pairs, max |err| 2.7e-15, top-k = sorted prefix
//! ```
//!
//! Run with `cargo test -p qgen-cli --test acceptance -- --nocapture` to see
//! the table. The BEIR baseline needs the public SciFact, NFCorpus and
//! Arguana test splits under `QGEN_BEIR_DIR` (one directory per dataset in
//! the usual `corpus.jsonl` / `queries.jsonl` / `qrels/test.tsv` layout);
//! without them it reports BLOCKED instead of failing.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{golden_mismatches, ok, repo_root, Workspace, STAGES};
use qgen_core::corpus::{load_corpus, load_qrels, load_queries, Corpus, Document, Qrel, QrelSet, Query, RelevantPair};
use qgen_core::cpo::{cpo_loss_grad, cpo_total_loss, select_preference, Source, TripletCandidate};
use qgen_core::eval::{first_stage_retrieve, ndcg_at_k, recall_at_k};
use qgen_core::filter::{filter_consistency, filter_logprob_topk, filter_margin, filter_reranker_topk, filter_score_band};
use qgen_core::generate::{generate, Generation, GenerationParams, MockBackend, MockSpec, RetryPolicy};
use qgen_core::prompt::{build_prompt, ExampleSet, PromptTemplate};
use qgen_core::rerank::Bm25Scorer;
use qgen_core::score::{
    enc_score, tokenize, Bm25Index, Bm25Params, EmbeddingVector, HashEmbedder, QueryEvaluator, ScoreWeights,
    ScoredQuery,
};
use qgen_core::trec::Run;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Blocked,
    NotReproducible,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Blocked => "BLOCKED",
            Status::NotReproducible => "NOT-REPRODUCIBLE",
        })
    }
}

struct Verdict {
    name: &'static str,
    status: Status,
    evidence: String,
}

/// Run a check, turning a panic inside it into a failed verdict.
fn check(name: &'static str, f: impl FnOnce() -> Result<(Status, String), String> + std::panic::UnwindSafe) -> Verdict {
    let (status, evidence) = match std::panic::catch_unwind(f) {
        Ok(Ok(v)) => v,
        Ok(Err(why)) => (Status::Fail, why),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (Status::Fail, format!("panicked: {msg}"))
        }
    };
    Verdict { name, status, evidence }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// BM25 baseline on BEIR

/// Dataset, target nDCG@10, tolerance.
const BASELINES: [(&str, f64, f64); 3] = [("scifact", 0.679, 0.02), ("nfcorpus", 0.322, 0.03), ("arguana", 0.397, 0.03)];

fn beir_dir() -> Option<PathBuf> {
    std::env::var_os("QGEN_BEIR_DIR").map(PathBuf::from)
}

/// nDCG@10 of BM25 over one BEIR test split. As in the reference BEIR
/// evaluation, a document whose id equals the query id is not counted as
/// a hit (this matters for Arguana, where every query is itself a corpus
/// document).
fn beir_ndcg10(dir: &Path) -> Result<(f64, usize, Duration), String> {
    let started = Instant::now();
    let corpus = load_corpus(dir.join("corpus.jsonl")).map_err(|e| e.to_string())?;
    let qrels = load_qrels(dir.join("qrels/test.tsv")).map_err(|e| e.to_string())?;
    let queries = load_queries(dir.join("queries.jsonl")).map_err(|e| e.to_string())?.restricted_to(&qrels);
    let index = Bm25Index::build(&corpus, Bm25Params::default()).map_err(|e| e.to_string())?;
    let run = first_stage_retrieve(&index, &queries, 1001);
    let mut cleaned = Run::default();
    for (qid, entries) in run.queries() {
        let hits: Vec<(String, f64)> = entries
            .iter()
            .filter(|e| &e.doc_id != qid)
            .take(1000)
            .map(|e| (e.doc_id.clone(), e.score))
            .collect();
        cleaned.push_ranked(qid, &hits, "bm25");
    }
    let m = ndcg_at_k(&cleaned, &qrels, 10);
    Ok((m.mean, m.per_query.len(), started.elapsed()))
}

fn bm25_baseline() -> Result<(Status, String), String> {
    let Some(root) = beir_dir() else {
        return Ok((Status::Blocked, "QGEN_BEIR_DIR not set; BEIR test splits unavailable offline".into()));
    };
    let mut parts = Vec::new();
    let mut all_ok = true;
    for (name, target, tol) in BASELINES {
        let dir = root.join(name);
        if !dir.join("corpus.jsonl").is_file() {
            return Ok((Status::Blocked, format!("{} missing", dir.display())));
        }
        let (ndcg, n, took) = beir_ndcg10(&dir)?;
        let hit = (ndcg - target).abs() <= tol;
        all_ok &= hit;
        parts.push(format!("{name} {ndcg:.4} vs {target}±{tol} over {n} queries in {:.1}s", took.as_secs_f64()));
    }
    Ok((if all_ok { Status::Pass } else { Status::Fail }, parts.join("; ")))
}

// ---------------------------------------------------------------------------
// BM25 against a per-pair oracle

const VOCAB: [&str; 12] = ["cell", "gene", "tumor", "risk", "dose", "trial", "brain", "sleep", "virus", "the", "of", "x2"];

fn oracle_bm25(docs: &[Vec<String>], query: &str, target: usize, k1: f64, b: f64) -> f64 {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let dl = docs[target].len() as f64;
    tokenize(query)
        .iter()
        .map(|term| {
            let tf = docs[target].iter().filter(|w| *w == term).count() as f64;
            if tf == 0.0 {
                return 0.0;
            }
            let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
        })
        .sum()
}

fn bm25_oracle() -> Result<(Status, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut pairs = 0usize;
    let mut worst = 0f64;
    for round in 0..200 {
        let n = rng.random_range(1..=100);
        let docs: Vec<Vec<String>> = (0..n)
            .map(|_| {
                let span = rng.random_range(2..=VOCAB.len());
                let len = rng.random_range(1..=25);
                (0..len).map(|_| VOCAB[rng.random_range(0..span)].to_string()).collect()
            })
            .collect();
        let ids: Vec<String> = (0..n).map(|i| format!("doc{i:03}")).collect();
        let corpus = Corpus::from_documents(ids.iter().zip(&docs).map(|(id, w)| Document::new(id.clone(), "", w.join(" "))))
            .map_err(|e| e.to_string())?;
        let params = Bm25Params::default();
        let index = Bm25Index::build(&corpus, params).map_err(|e| e.to_string())?;
        for _ in 0..4 {
            let len = rng.random_range(1..=4);
            let query: Vec<&str> = (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
            let query = query.join(" ");
            let mut full = Vec::new();
            for (i, id) in ids.iter().enumerate() {
                let got = index.score(&query, id).map_err(|e| e.to_string())?;
                let want = oracle_bm25(&docs, &query, i, params.k1, params.b);
                worst = worst.max((got - want).abs());
                ensure!((got - want).abs() <= 1e-9, "round {round} `{query}` {id}: {got} vs {want}");
                pairs += 1;
                if got > 0.0 {
                    full.push((id.clone(), got));
                }
            }
            // stated tie rule: score descending, then document id ascending
            full.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            for k in [1, 5, 10, n] {
                let top = index.retrieve(&query, k);
                let want: Vec<&str> = full.iter().take(k).map(|(d, _)| d.as_str()).collect();
                let got: Vec<&str> = top.iter().map(|(d, _)| d.as_str()).collect();
                ensure!(got == want, "round {round} `{query}` k={k}: {got:?} vs {want:?}");
            }
        }
    }
    Ok((Status::Pass, format!("200 corpora, {pairs} pairs, max |err| {worst:.1e}, top-k = sorted prefix")))
}

// ---------------------------------------------------------------------------
// nDCG and recall against brute force

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn oracle_dcg(grades: &[u32], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) * std::f64::consts::LN_2 / ((i + 2) as f64).ln())
        .sum()
}

/// Best DCG over every ordering of the judged grades when there are few of
/// them, the sorted ordering otherwise.
fn oracle_idcg(grades: &[u32], k: usize) -> f64 {
    if grades.len() <= 6 {
        permutations(grades).iter().map(|p| oracle_dcg(p, k)).fold(0.0, f64::max)
    } else {
        let mut sorted = grades.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        oracle_dcg(&sorted, k)
    }
}

fn metric_oracles() -> Result<(Status, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut worst = 0f64;
    for inst in 0..1000 {
        let n = rng.random_range(1..=20);
        let docs: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let mut qrels = Vec::new();
        let mut run = Run::default();
        let mut truth: BTreeMap<String, (BTreeMap<String, u32>, Vec<String>)> = BTreeMap::new();
        for q in 0..rng.random_range(1..=4) {
            let qid = format!("q{q}");
            let mut judged = docs.clone();
            judged.shuffle(&mut rng);
            judged.truncate(rng.random_range(1..=n));
            let grades: BTreeMap<String, u32> = judged.into_iter().map(|d| (d, rng.random_range(0..=3))).collect();
            qrels.extend(grades.iter().map(|(d, &g)| Qrel {
                query_id: qid.clone(),
                doc_id: d.clone(),
                grade: g,
            }));
            let mut ranked = docs.clone();
            ranked.shuffle(&mut rng);
            ranked.truncate(if rng.random_bool(0.1) { 0 } else { rng.random_range(1..=n) });
            if !ranked.is_empty() {
                let scored: Vec<(String, f64)> = ranked.iter().enumerate().map(|(i, d)| (d.clone(), (n - i) as f64)).collect();
                run.push_ranked(&qid, &scored, "t");
            }
            truth.insert(qid, (grades, ranked));
        }
        let qrels = QrelSet::from_qrels(qrels).map_err(|e| e.to_string())?;
        for k in [1, 3, 10, 20] {
            let ndcg = ndcg_at_k(&run, &qrels, k);
            let recall = recall_at_k(&run, &qrels, k);
            let mut want_n = Vec::new();
            let mut want_r = Vec::new();
            for (qid, (grades, ranked)) in &truth {
                let relevant = grades.values().filter(|&&g| g > 0).count();
                if relevant == 0 {
                    continue;
                }
                let got: Vec<u32> = ranked.iter().map(|d| grades.get(d).copied().unwrap_or(0)).collect();
                let judged: Vec<u32> = grades.values().copied().collect();
                let n_val = oracle_dcg(&got, k) / oracle_idcg(&judged, k);
                let r_val = got.iter().take(k).filter(|&&g| g > 0).count() as f64 / relevant as f64;
                for (label, report, want) in [("ndcg", &ndcg, n_val), ("recall", &recall, r_val)] {
                    let have = report.per_query.get(qid).copied().ok_or(format!("{label} lacks {qid}"))?;
                    worst = worst.max((have - want).abs());
                    ensure!((have - want).abs() <= 1e-12, "instance {inst} {qid} {label}@{k}: {have} vs {want}");
                }
                want_n.push(n_val);
                want_r.push(r_val);
            }
            let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
            ensure!((ndcg.mean - mean(&want_n)).abs() <= 1e-12, "instance {inst} mean ndcg@{k}");
            ensure!((recall.mean - mean(&want_r)).abs() <= 1e-12, "instance {inst} mean recall@{k}");
        }
    }

    // a perfect ranking scores exactly one
    let grades = [3u32, 2, 2, 1, 0];
    let qrels = QrelSet::from_qrels(grades.iter().enumerate().map(|(i, &g)| Qrel {
        query_id: "q".into(),
        doc_id: format!("d{i}"),
        grade: g,
    }))
    .map_err(|e| e.to_string())?;
    let mut run = Run::default();
    let ideal: Vec<(String, f64)> = (0..5).map(|i| (format!("d{i}"), 5.0 - i as f64)).collect();
    run.push_ranked("q", &ideal, "t");
    let perfect = ndcg_at_k(&run, &qrels, 10).mean;
    ensure!(perfect == 1.0, "perfect ranking gave {perfect}");
    Ok((Status::Pass, format!("1000 instances, max |err| {worst:.1e}, perfect ranking = {perfect}")))
}

// ---------------------------------------------------------------------------
// CPO loss and gradient

fn cpo_math() -> Result<(Status, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    let beta = 0.1;
    let h = 1e-6;
    let loss = |w: f64, l: f64| cpo_total_loss(w, l, beta).unwrap();
    let mut worst_rel = 0f64;
    let mut worst_sum = 0f64;
    for _ in 0..1000 {
        let w = rng.random_range(-30.0..-0.01);
        let l = rng.random_range(-30.0..-0.01);
        let (gw, gl) = cpo_loss_grad(w, l, beta).map_err(|e| e.to_string())?;
        let fw = (loss(w + h, l) - loss(w - h, l)) / (2.0 * h);
        let fl = (loss(w, l + h) - loss(w, l - h)) / (2.0 * h);
        for (g, f) in [(gw, fw), (gl, fl)] {
            let rel = (g - f).abs() / g.abs().max(1.0);
            worst_rel = worst_rel.max(rel);
            ensure!(rel <= 1e-6, "at ({w}, {l}): analytic {g} vs numeric {f}");
        }
        worst_sum = worst_sum.max((gw + gl + 1.0).abs());
        ensure!((gw + gl + 1.0).abs() <= 1e-12, "partials at ({w}, {l}) sum to {}", gw + gl);
    }
    let at = cpo_total_loss(-1.0, -1.0, 1.0).map_err(|e| e.to_string())?;
    let want = 1.0 + std::f64::consts::LN_2;
    ensure!((at - want).abs() <= 1e-9, "total loss at (-1,-1,1) = {at}");
    Ok((
        Status::Pass,
        format!("1000 points, max rel err {worst_rel:.1e}, max |sum+1| {worst_sum:.1e}, L(-1,-1,1) = {at:.9}"),
    ))
}

// ---------------------------------------------------------------------------
// Scoring identities

fn scoring_identities() -> Result<(Status, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    let mut worst = 0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let corpus = Corpus::from_documents((0..n).map(|i| {
            let len = rng.random_range(1..20);
            let words: Vec<&str> = (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
            Document::new(format!("d{i}"), "", words.join(" "))
        }))
        .map_err(|e| e.to_string())?;
        let index = Bm25Index::build(&corpus, Bm25Params::default()).map_err(|e| e.to_string())?;
        for query in ["cell gene", "the of the", "sleep x2 brain risk", "absent"] {
            let total: f64 = corpus.iter().map(|d| index.softmax_score(query, &d.id, 1.0).unwrap()).sum();
            worst = worst.max((total - 1.0).abs());
            ensure!((total - 1.0).abs() <= 1e-9, "softmax over {n} docs for `{query}` sums to {total}");
        }
    }

    for _ in 0..2000 {
        let half = rng.random_range(1..64);
        let scale = 10f64.powi(rng.random_range(-6..=6));
        let v: Vec<f64> = (0..2 * half).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        let perp: Vec<f64> = v.chunks(2).flat_map(|p| [-p[1], p[0]]).collect();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let e = |a: &[f64], b: &[f64]| {
            enc_score(&EmbeddingVector::new(a.to_vec()).unwrap(), &EmbeddingVector::new(b.to_vec()).unwrap()).unwrap()
        };
        let (same, orth, opp) = (e(&v, &v), e(&v, &perp), e(&v, &neg));
        ensure!(same == 1.0 && orth == 0.5 && opp == 0.0, "enc scores {same} {orth} {opp} for dim {}", v.len());
    }

    let weights = ScoreWeights::default();
    for i in 0..10_000 {
        let enc: f64 = rng.random_range(0.0..=1.0);
        let sm: f64 = rng.random_range(0.0..=1.0);
        let w = ScoreWeights::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)).unwrap_or(weights);
        let c = w.combine(enc, sm);
        ensure!((0.0..=1.0).contains(&c), "combined score {c} at sample {i}");
    }
    Ok((
        Status::Pass,
        format!("softmax max |sum-1| {worst:.1e}; enc 1/0.5/0 exact on 2000 vectors; 10000 combined scores in [0,1]"),
    ))
}

// ---------------------------------------------------------------------------
// Filters

fn scored(doc: &str, seq: u64, query: &str, logprobs: Vec<f64>) -> ScoredQuery {
    ScoredQuery::new(Generation {
        doc_id: doc.into(),
        query_text: query.into(),
        raw_text: query.into(),
        token_logprobs: logprobs,
        prompt_template_id: "t".into(),
        backend_tag: "test".into(),
        seq,
        flag: None,
    })
}

fn seqs(items: &[ScoredQuery]) -> BTreeSet<u64> {
    items.iter().map(ScoredQuery::seq).collect()
}

fn mini_corpus() -> Corpus {
    load_corpus(repo_root().join("data/mini/corpus.jsonl")).unwrap()
}

/// Noisy mock generations scored against the mini corpus: (student items,
/// triplet candidates, seqs of the injected document copies).
fn noisy_mini_generations() -> (Vec<ScoredQuery>, Vec<TripletCandidate>, BTreeSet<u64>) {
    let corpus = mini_corpus();
    let index = Bm25Index::build(&corpus, Bm25Params::default()).unwrap();
    let embedder = HashEmbedder::new(13);
    let evaluator = QueryEvaluator::new(&index, &embedder, ScoreWeights::default()).unwrap();
    let template = PromptTemplate::bundled("inpars-vanilla").unwrap();
    let params = GenerationParams::default();
    let student = MockBackend::new(MockSpec {
        noise_fraction: 0.2,
        noise_seed: 13,
        population: corpus.len() as u64,
        ..Default::default()
    });
    let teacher = MockBackend::new(MockSpec {
        lead: Some("how".into()),
        ..Default::default()
    });
    let mut items = Vec::new();
    let mut candidates = Vec::new();
    let mut noisy = BTreeSet::new();
    for (seq, doc) in corpus.iter().enumerate() {
        let seq = seq as u64;
        let prompt = build_prompt(&template, &ExampleSet::vanilla(), doc).unwrap();
        let s = generate(&prompt, &params, &student, seq).unwrap();
        let t = generate(&prompt, &params, &teacher, seq).unwrap();
        if student.is_noisy(seq) {
            noisy.insert(seq);
        }
        let reference = MockBackend::query_for(&doc.full_text());
        let s_scores = evaluator.score(doc, &s.query_text).unwrap();
        let s_teacher = evaluator.score(doc, &t.query_text).unwrap().combined;
        let s_reference = evaluator.score(doc, &reference).unwrap().combined;
        items.push(ScoredQuery::new(s.clone()).with_scores(s_scores));
        candidates.push(TripletCandidate {
            pair: RelevantPair {
                doc: doc.clone(),
                query: Query::new(format!("ref{seq}"), reference),
            },
            prompt: prompt.text.clone(),
            student: s,
            teacher: t,
            s_reference,
            s_teacher,
            s_student: s_scores.combined,
        });
    }
    (items, candidates, noisy)
}

fn filter_properties() -> Result<(Status, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let no_retry = RetryPolicy {
        attempts: 1,
        base_delay: Duration::ZERO,
    };
    let mut cases = 0;
    for _ in 0..60 {
        let n_docs = rng.random_range(1..30);
        let corpus = Corpus::from_documents((0..n_docs).map(|i| {
            let len = rng.random_range(2..12);
            let words: Vec<&str> = (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
            Document::new(format!("d{i:02}"), "", words.join(" "))
        }))
        .map_err(|e| e.to_string())?;
        let index = Bm25Index::build(&corpus, Bm25Params::default()).map_err(|e| e.to_string())?;
        let n = rng.random_range(0..50);
        let items: Vec<ScoredQuery> = (0..n)
            .map(|seq| {
                let len = rng.random_range(1..4);
                let q: Vec<&str> = (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
                let lp = (0..len).map(|_| -rng.random_range(0.0..3.0)).collect();
                scored(&format!("d{:02}", rng.random_range(0..n_docs)), seq as u64, &q.join(" "), lp)
            })
            .collect();
        let input = seqs(&items);
        let keep = rng.random_range(1..60);

        let lp = filter_logprob_topk(items.clone(), keep).map_err(|e| e.to_string())?;
        ensure!(lp.kept.len() == keep.min(n), "logprob-topk kept {} of {n} with keep {keep}", lp.kept.len());
        ensure!(seqs(&lp.kept).is_subset(&input), "logprob-topk invented items");
        let scorer = Bm25Scorer { index: &index };
        let rr = filter_reranker_topk(items.clone(), keep, &scorer, &corpus, no_retry).map_err(|e| e.to_string())?;
        ensure!(rr.kept.len() == keep.min(n), "reranker-topk kept {} of {n} with keep {keep}", rr.kept.len());
        ensure!(seqs(&rr.kept).is_subset(&input), "reranker-topk invented items");

        let mut prev = BTreeSet::new();
        for k in 1..=n_docs {
            let kept = seqs(&filter_consistency(items.clone(), &index, k).map_err(|e| e.to_string())?.kept);
            ensure!(kept.is_subset(&input), "consistency invented items");
            ensure!(prev.is_subset(&kept), "consistency not monotone at K={k}");
            prev = kept;
        }
        cases += 1;
    }

    let (items, candidates, noisy) = noisy_mini_generations();
    let total = items.len() as u64;
    let input: BTreeSet<u64> = (0..total).collect();
    let band = filter_score_band(items, 0.3, 0.7).map_err(|e| e.to_string())?;
    let band_removed: BTreeSet<u64> = input.difference(&seqs(&band.kept)).copied().collect();
    ensure!(band_removed == noisy, "score band removed {band_removed:?}, injected {noisy:?}");
    let margin = filter_margin(candidates, 0.3, 0.7).map_err(|e| e.to_string())?;
    let kept: BTreeSet<u64> = margin.kept.iter().map(|c| c.student.seq).collect();
    ensure!(kept.is_subset(&input), "margin filter invented items");
    let removed: BTreeSet<u64> = input.difference(&kept).copied().collect();
    ensure!(removed == noisy, "margin removed {removed:?}, injected {noisy:?}");
    Ok((
        Status::Pass,
        format!(
            "{cases} random pools: subset, |topk| = min(keep, n), consistency monotone in K; margin removed exactly the {} injected copies of {total}",
            noisy.len()
        ),
    ))
}

// ---------------------------------------------------------------------------
// End-to-end pipeline

fn pipeline_e2e() -> Result<(Status, String), String> {
    let ws = Workspace::mini();
    let started = Instant::now();
    ok(&ws.qgen(&["pipeline"]));
    let took = started.elapsed();
    ensure!(took < Duration::from_secs(30), "pipeline took {took:?}");
    let diff = golden_mismatches(&ws.artifacts());
    ensure!(diff.is_empty(), "differs from golden: {diff:?}");

    // stop after every stage boundary, then finish in a fresh process
    for done in 0..=STAGES.len() {
        let ws = Workspace::mini();
        for stage in &STAGES[..done] {
            ok(&ws.qgen(&[stage]));
        }
        ok(&ws.qgen(&["pipeline"]));
        let diff = golden_mismatches(&ws.artifacts());
        ensure!(diff.is_empty(), "resume after {done} stages differs: {diff:?}");
    }

    // and a hard kill in the middle of generation
    let ws = Workspace::mini();
    let crashed = ws.qgen_env(&["pipeline"], &[("QGEN_FAULT_AFTER_EMITS", "73")]);
    ensure!(crashed.status.code() == Some(86), "fault hook exit {:?}", crashed.status.code());
    ok(&ws.qgen(&["pipeline"]));
    let diff = golden_mismatches(&ws.artifacts());
    ensure!(diff.is_empty(), "resume after a crash differs: {diff:?}");

    Ok((
        Status::Pass,
        format!(
            "full run {:.2}s, 12 artifacts byte-identical to golden; resume after each of {} boundaries and after a mid-generation kill identical",
            took.as_secs_f64(),
            STAGES.len() + 1
        ),
    ))
}

// ---------------------------------------------------------------------------
// Preference triplets

fn candidate(scores: [f64; 3]) -> TripletCandidate {
    let gen = |q: &str| Generation {
        doc_id: "d".into(),
        query_text: q.into(),
        raw_text: q.into(),
        token_logprobs: vec![-1.0],
        prompt_template_id: "t".into(),
        backend_tag: "test".into(),
        seq: 0,
        flag: None,
    };
    TripletCandidate {
        pair: RelevantPair {
            doc: Document::new("d", "", "text"),
            query: Query::new("q", "reference query"),
        },
        prompt: "p".into(),
        teacher: gen("teacher query"),
        student: gen("student query"),
        s_reference: scores[0],
        s_teacher: scores[1],
        s_student: scores[2],
    }
}

fn triplet_semantics() -> Result<(Status, String), String> {
    let ws = Workspace::mini();
    ok(&ws.qgen(&["generate"]));
    ok(&ws.qgen(&["triplets"]));
    let text = fs::read_to_string(ws.out("triplets.jsonl")).map_err(|e| e.to_string())?;
    let mut count = 0;
    for line in text.lines() {
        let t: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let chosen = t["chosen_score"].as_f64().ok_or("chosen_score missing")?;
        let rejected = t["rejected_score"].as_f64().ok_or("rejected_score missing")?;
        ensure!(chosen >= rejected, "triplet {count}: {chosen} < {rejected}");
        for s in [chosen, rejected] {
            ensure!(s > 0.3 && s < 0.7, "triplet {count}: score {s} outside (0.3, 0.7)");
        }
        ensure!(t["chosen"] != t["rejected"], "triplet {count}: identical queries");
        count += 1;
    }
    ensure!(count > 0, "no triplets emitted");

    // the teacher scores best and the student worst
    let (best, worst) = select_preference(&candidate([0.52, 0.61, 0.38])).map_err(|e| e.to_string())?;
    ensure!((best, worst) == (Source::Teacher, Source::Student), "picked {best:?}/{worst:?}");
    let (best, worst) = select_preference(&candidate([0.45, 0.66, 0.31])).map_err(|e| e.to_string())?;
    ensure!((best, worst) == (Source::Teacher, Source::Student), "picked {best:?}/{worst:?}");
    Ok((Status::Pass, format!("{count} mock triplets ordered and inside (0.3, 0.7); teacher→chosen, student→rejected")))
}

// ---------------------------------------------------------------------------
// Out of reach without GPU inference

fn desk_scale_limits() -> Result<(Status, String), String> {
    let ws = Workspace::mini();
    ok(&ws.qgen(&["pipeline"]));
    for line in fs::read_to_string(ws.out("train.jsonl")).map_err(|e| e.to_string())?.lines() {
        let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        ensure!(v["query"].is_string() && v["doc_id"].is_string(), "bad training line {line}");
        ensure!(v["label"] == 0 || v["label"] == 1, "bad label in {line}");
    }
    let triplets = qgen_core::cpo::read_triplets(ws.out("triplets.jsonl")).map_err(|e| e.to_string())?;
    for t in &triplets {
        t.validate().map_err(|e| e.to_string())?;
    }
    ok(&ws.qgen(&["ablate"]));
    let golden = common::golden_dir().join("ablation.csv");
    ensure!(
        fs::read(ws.out("ablation.csv")).ok() == fs::read(golden).ok(),
        "ablation table differs from golden"
    );
    Ok((
        Status::NotReproducible,
        "reranked BEIR rows, post-CPO score shift and filter-size bars need LLM inference and reranker training; \
         hand-off checked instead: train.jsonl and triplets.jsonl validate, ablation table matches golden"
            .into(),
    ))
}

#[test]
fn acceptance() {
    let verdicts = vec![
        check("bm25-baseline", bm25_baseline),
        check("bm25-oracle", bm25_oracle),
        check("metric-oracles", metric_oracles),
        check("cpo-math", cpo_math),
        check("scoring-identities", scoring_identities),
        check("filter-properties", filter_properties),
        check("pipeline-e2e", pipeline_e2e),
        check("triplet-semantics", triplet_semantics),
        check("desk-scale-limits", desk_scale_limits),
    ];
    for v in &verdicts {
        println!("[{}] {}: {}", v.status, v.name, v.evidence);
    }
    let failed: Vec<&str> = verdicts.iter().filter(|v| v.status == Status::Fail).map(|v| v.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

/// The BEIR baseline as a hard requirement. Needs `QGEN_BEIR_DIR`; run with
/// `--ignored` (in release mode for the stated runtime).
#[test]
#[ignore = "needs BEIR data under QGEN_BEIR_DIR"]
fn bm25_baseline_on_beir() {
    let root = beir_dir().expect("QGEN_BEIR_DIR must point at the BEIR datasets");
    for (name, target, tol) in BASELINES {
        let (ndcg, n, took) = beir_ndcg10(&root.join(name)).unwrap();
        println!("{name}: nDCG@10 {ndcg:.4} (target {target} ± {tol}) over {n} queries in {took:.1?}");
        assert!((ndcg - target).abs() <= tol, "{name}: {ndcg:.4} outside {target} ± {tol}");
    }
}
