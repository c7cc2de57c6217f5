//! The pipeline stages. Each reads its inputs from the output directory,
//! skips itself when the manifest says it is current, and prints the count
//! or metric it produced.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use qgen_core::corpus::{load_corpus, load_qrels, load_queries, sample_relevant_pairs, Corpus, QrelSet, QuerySet};
use qgen_core::cpo::{build_triplets, write_triplets, TripletConfig};
use qgen_core::eval::{
    ablate_filter, export_training_file, first_stage_retrieve, ndcg_at_k, recall_at_k, rerank, write_ablation_csv,
    AblationSetup, DocumentExpansionEval, EvalLoop, RerankOptions,
};
use qgen_core::filter::{
    filter_consistency, filter_logprob_topk, filter_reranker_topk, filter_score_band, subsample, FilterReport,
    FilterStrategy, Filtered,
};
use qgen_core::generate::{
    generate_batch, plan_round_robin, read_generations, write_generations, Backend, BatchOptions, GenerationParams,
    MockBackend, MockSpec, OpenAiBackend, RetryPolicy,
};
use qgen_core::prompt::{
    build_cot_prompt, build_prompts_parallel, ExamplePolicy, ExampleSet, InstructionProfile, Prompt, PromptTemplate,
};
use qgen_core::rerank::{CombinedScorer, HttpScorer, PointwiseScorer};
use qgen_core::score::{
    read_scored_queries, write_scored_queries, Bm25Index, Embedder, HashEmbedder, HttpEmbedder, QueryEvaluator,
    ScoredQuery,
};
use qgen_core::trec::Run;
use serde::Serialize;

use crate::config::{BackendMode, ExampleSource, PipelineConfig, ValidationError};
use crate::manifest::{Manifest, StageRun};

pub const GENERATIONS: &str = "generations.jsonl";
pub const CHECKPOINT: &str = "generations.ckpt.jsonl";
pub const CHECKPOINT_KEY: &str = "generations.ckpt.key";
pub const FILTERED: &str = "filtered.jsonl";
pub const FILTER_REPORT: &str = "filter_report.json";
pub const TRIPLETS: &str = "triplets.jsonl";
pub const TRIPLETS_REPORT: &str = "triplets_report.json";
pub const TRAIN: &str = "train.jsonl";
pub const BM25_RUN: &str = "runs/bm25.run";
pub const RERANK_RUN: &str = "runs/rerank.run";
pub const ABLATION_CSV: &str = "ablation.csv";

/// Test hook: exit abruptly after this many generations have been
/// checkpointed, as a crash would.
pub const FAULT_ENV: &str = "QGEN_FAULT_AFTER_EMITS";

pub const COT_TEMPLATE: &str = "cot-agent";

pub struct Pipeline {
    pub config: PipelineConfig,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, config_hash: &str, body: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(&Stamped { config_hash, body })?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path, stage: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!(ValidationError(format!(
            "{} is missing; run `qgen {stage}` first",
            path.display()
        )));
    }
    Ok(())
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> anyhow::Result<Self> {
        config.validate()?;
        let out = config.out_dir.clone();
        fs::create_dir_all(out.join("runs"))
            .with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(Pipeline { config, out })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.config.backend.attempts,
            ..RetryPolicy::default()
        }
    }

    fn corpus(&self) -> anyhow::Result<Corpus> {
        load_corpus(&self.config.data.corpus).context("loading corpus")
    }

    fn queries(&self) -> anyhow::Result<QuerySet> {
        load_queries(&self.config.data.queries).context("loading queries")
    }

    fn qrels(&self, path: &Path) -> anyhow::Result<QrelSet> {
        load_qrels(path).with_context(|| format!("loading qrels {}", path.display()))
    }

    fn train_qrels(&self) -> anyhow::Result<QrelSet> {
        let path = self
            .config
            .data
            .train_qrels
            .as_ref()
            .ok_or_else(|| anyhow!(ValidationError("data.train_qrels is not set".into())))?;
        self.qrels(path)
    }

    fn index(&self, corpus: &Corpus) -> anyhow::Result<Bm25Index> {
        Ok(Bm25Index::build(corpus, self.config.scoring.bm25())?)
    }

    fn embedder(&self) -> anyhow::Result<Box<dyn Embedder>> {
        let b = &self.config.backend;
        match (b.mode, &b.embedder) {
            (BackendMode::Http, Some(url)) => {
                Ok(Box::new(HttpEmbedder::with_cache_file(url, self.path("embeddings.cache.jsonl"))?))
            }
            (BackendMode::Http, None) => {
                log::warn!("backend.embedder is not set; using the local hashed embedder");
                Ok(Box::new(HashEmbedder::new(self.config.seed)))
            }
            (BackendMode::Mock, _) => Ok(Box::new(HashEmbedder::new(self.config.seed))),
        }
    }

    fn evaluator<'a>(&self, index: &'a Bm25Index, embedder: &'a dyn Embedder) -> anyhow::Result<QueryEvaluator<'a>> {
        Ok(QueryEvaluator::new(index, embedder, self.config.scoring.weights())?
            .with_temperature(self.config.scoring.temperature)?)
    }

    fn generator(&self, population: usize) -> anyhow::Result<Box<dyn Backend>> {
        let b = &self.config.backend;
        Ok(match b.mode {
            BackendMode::Mock => Box::new(MockBackend::new(MockSpec {
                noise_fraction: b.noise_fraction,
                noise_seed: self.config.seed,
                population: population as u64,
                ..Default::default()
            })),
            BackendMode::Http => Box::new(OpenAiBackend::new(
                b.generator.as_deref().expect("validated"),
                b.model.as_deref().expect("validated"),
                std::env::var(qgen_core::generate::ENV_API_KEY).ok(),
            )?),
        })
    }

    fn teacher(&self) -> anyhow::Result<Box<dyn Backend>> {
        let b = &self.config.backend;
        Ok(match b.mode {
            BackendMode::Mock => Box::new(MockBackend::new(MockSpec {
                lead: Some("how".into()),
                ..Default::default()
            })),
            BackendMode::Http => Box::new(OpenAiBackend::new(
                b.teacher.as_deref().or(b.generator.as_deref()).expect("validated"),
                b.teacher_model.as_deref().or(b.model.as_deref()).expect("validated"),
                std::env::var(qgen_core::generate::ENV_API_KEY).ok(),
            )?),
        })
    }

    /// Runs `f` with the configured pointwise scorer: the remote one when
    /// an endpoint is set, the local blended score otherwise.
    fn with_scorer<R>(
        &self,
        corpus: &Corpus,
        f: impl FnOnce(&dyn PointwiseScorer, &Bm25Index) -> anyhow::Result<R>,
    ) -> anyhow::Result<R> {
        let index = self.index(corpus)?;
        match (&self.config.backend.mode, &self.config.backend.scorer) {
            (BackendMode::Http, Some(url)) => f(&HttpScorer::new(url)?, &index),
            _ => {
                let embedder = self.embedder()?;
                let evaluator = self.evaluator(&index, embedder.as_ref())?;
                evaluator.precompute(corpus.iter())?;
                f(&CombinedScorer { evaluator: &evaluator }, &index)
            }
        }
    }

    fn scorer_tag(&self) -> String {
        match (&self.config.backend.mode, &self.config.backend.scorer) {
            (BackendMode::Http, Some(url)) => url.clone(),
            _ => "combined".into(),
        }
    }

    fn template(&self) -> anyhow::Result<PromptTemplate> {
        PromptTemplate::resolve(&self.config.generate.template).map_err(|e| anyhow!(ValidationError(e.to_string())))
    }

    fn prompts(&self, corpus: &Corpus, queries: &QuerySet) -> anyhow::Result<Vec<Prompt>> {
        let g = &self.config.generate;
        if g.template == COT_TEMPLATE {
            let profile = InstructionProfile::default();
            return corpus
                .iter()
                .map(|d| build_cot_prompt(d, &profile).map_err(Into::into))
                .collect();
        }
        let template = self.template()?;
        let k = g.num_examples.min(template.max_examples);
        let policy = match g.examples {
            ExampleSource::None => ExamplePolicy::None,
            ExampleSource::Fixed => {
                let mut set = if template.is_guided_by_bad_question() {
                    ExampleSet::guided_by_bad_question()
                } else {
                    ExampleSet::vanilla()
                };
                set.0.truncate(k);
                ExamplePolicy::Fixed(set)
            }
            ExampleSource::Sampled => {
                let pairs = sample_relevant_pairs(corpus, queries, &self.train_qrels()?, usize::MAX, self.config.seed)?;
                ExamplePolicy::Sampled {
                    pairs,
                    k,
                    seed: self.config.seed,
                }
            }
        };
        Ok(build_prompts_parallel(&template, &policy, corpus, self.config.backend.concurrency)?)
    }

    fn template_source(&self) -> String {
        let t = &self.config.generate.template;
        match fs::read_to_string(t) {
            Ok(text) => text,
            Err(_) => format!("bundled:{t}"),
        }
    }

    fn up_to_date(&self, stage: &StageRun) -> anyhow::Result<bool> {
        let manifest = Manifest::load(&self.out)?;
        if manifest.is_up_to_date(stage.name, &self.out, &stage.config_hash, &stage.inputs) {
            println!("{}: up to date", stage.name);
            return Ok(true);
        }
        Ok(false)
    }

    pub fn generate(&self) -> anyhow::Result<()> {
        let cfg = &self.config;
        let hash = cfg.hash_of(&(&cfg.generate, &cfg.backend.mode, cfg.backend.noise_fraction, &cfg.backend.model, &cfg.backend.generator))?;
        let mut stage = StageRun::new("generate", hash.clone());
        stage.input_file("corpus", &cfg.data.corpus)?;
        stage.input_value("template", &self.template_source());
        if matches!(cfg.generate.examples, ExampleSource::Sampled) {
            stage.input_file("queries", &cfg.data.queries)?;
            if let Some(p) = &cfg.data.train_qrels {
                stage.input_file("train_qrels", p)?;
            }
        }
        if self.up_to_date(&stage)? {
            return Ok(());
        }

        let corpus = self.corpus()?;
        let queries = self.queries()?;
        let prompts = self.prompts(&corpus, &queries)?;
        let plan = plan_round_robin(&prompts, cfg.generate.total);
        let backend = self.generator(plan.len())?;
        let params = GenerationParams {
            max_new_tokens: cfg.generate.max_new_tokens,
            temperature: cfg.generate.temperature,
            top_p: cfg.generate.top_p,
            stop_sequences: Vec::new(),
            seed: cfg.seed,
        };

        // A checkpoint written under different settings is not resumable.
        let ckpt = self.path(CHECKPOINT);
        let key_path = self.path(CHECKPOINT_KEY);
        let stage_key = format!("{hash}:{}", stage.inputs.values().cloned().collect::<Vec<_>>().join(","));
        if fs::read_to_string(&key_path).ok().as_deref() != Some(stage_key.as_str()) && ckpt.exists() {
            log::info!("discarding checkpoint from a different configuration");
            fs::remove_file(&ckpt)?;
        }
        fs::write(&key_path, &stage_key)?;

        let fault_after: Option<usize> = std::env::var(FAULT_ENV).ok().and_then(|v| v.parse().ok());
        let mut emitted = 0usize;
        let options = BatchOptions {
            concurrency: cfg.backend.concurrency,
            checkpoint: ckpt.clone(),
            retry: self.retry(),
        };
        let outcome = generate_batch(&plan, &params, backend.as_ref(), &options, |_| {
            emitted += 1;
            if fault_after.is_some_and(|n| emitted >= n) {
                eprintln!("generate: simulated crash after {emitted} generations");
                std::process::exit(86);
            }
        })?;
        if !outcome.failures.is_empty() {
            bail!(
                "{} of {} generations failed (first: seq {}: {}); rerun to retry them",
                outcome.failures.len(),
                plan.len(),
                outcome.failures[0].seq,
                outcome.failures[0].error
            );
        }
        let out = self.path(GENERATIONS);
        write_generations(&out, &outcome.generations)?;
        let flagged = outcome.generations.iter().filter(|g| g.is_degenerate()).count();
        stage.finish(&self.out, std::slice::from_ref(&out))?;
        fs::remove_file(&ckpt).ok();
        fs::remove_file(&key_path).ok();
        println!(
            "generate: {} generations ({} flagged degenerate, {} resumed from checkpoint) -> {}",
            outcome.generations.len(),
            flagged,
            outcome.resumed,
            out.display()
        );
        Ok(())
    }

    pub fn filter(&self) -> anyhow::Result<()> {
        let cfg = &self.config;
        let gens = self.path(GENERATIONS);
        require(&gens, "generate")?;
        let hash = cfg.hash_of(&(&cfg.filter, &cfg.scoring, self.scorer_tag()))?;
        let mut stage = StageRun::new("filter", hash.clone());
        stage.input_file("generations", &gens)?;
        stage.input_file("corpus", &cfg.data.corpus)?;
        if self.up_to_date(&stage)? {
            return Ok(());
        }

        let items: Vec<ScoredQuery> = read_generations(&gens)?.into_iter().map(ScoredQuery::new).collect();
        let corpus = self.corpus()?;
        let f = &cfg.filter;
        let filtered: Filtered<ScoredQuery> = match f.strategy {
            FilterStrategy::LogprobTopk => filter_logprob_topk(items, f.keep)?,
            FilterStrategy::RerankerTopk => {
                self.with_scorer(&corpus, |scorer, _| Ok(filter_reranker_topk(items, f.keep, scorer, &corpus, self.retry())?))?
            }
            FilterStrategy::Consistency => filter_consistency(items, &self.index(&corpus)?, f.top_k_retrieval)?,
            FilterStrategy::Margin => {
                let index = self.index(&corpus)?;
                let embedder = self.embedder()?;
                let evaluator = self.evaluator(&index, embedder.as_ref())?;
                let mut scored = Vec::with_capacity(items.len());
                let mut report_empty = 0;
                for item in items {
                    if item.query().is_empty() {
                        report_empty += 1;
                        continue;
                    }
                    let doc = corpus
                        .get(item.doc_id())
                        .ok_or_else(|| anyhow!("unknown document {}", item.doc_id()))?;
                    let s = evaluator.score(doc, item.query())?;
                    scored.push(item.with_scores(s));
                }
                let mut out = filter_score_band(scored, f.lower, f.upper)?;
                out.report.input += report_empty;
                if report_empty > 0 {
                    out.report.dropped.insert("empty-query".into(), report_empty);
                }
                out
            }
            FilterStrategy::Random => {
                let n = items.len();
                let keep = f.keep.min(n);
                let kept = subsample(&items, keep, f.seed)?;
                let mut report = FilterReport {
                    strategy: f.strategy.as_str().into(),
                    input: n,
                    kept: kept.len(),
                    ..Default::default()
                };
                if n > keep {
                    report.dropped.insert("not-sampled".into(), n - keep);
                }
                Filtered { kept, report }
            }
        };
        let out = self.path(FILTERED);
        let report_path = self.path(FILTER_REPORT);
        write_scored_queries(&out, &filtered.kept)?;
        write_json(&report_path, &hash, &filtered.report)?;
        stage.finish(&self.out, &[out.clone(), report_path])?;
        let drops: Vec<String> = filtered.report.dropped.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!(
            "filter ({}): {} -> {} kept{} -> {}",
            filtered.report.strategy,
            filtered.report.input,
            filtered.report.kept,
            if drops.is_empty() { String::new() } else { format!(" (dropped: {})", drops.join(", ")) },
            out.display()
        );
        Ok(())
    }

    pub fn triplets(&self) -> anyhow::Result<()> {
        let cfg = &self.config;
        let train = cfg
            .data
            .train_qrels
            .as_ref()
            .ok_or_else(|| anyhow!(ValidationError("triplets need data.train_qrels".into())))?;
        if cfg.generate.template == COT_TEMPLATE {
            bail!(ValidationError("triplets need a few-shot template, not the cot-agent profile".into()));
        }
        let hash = cfg.hash_of(&(
            &cfg.triplets,
            &cfg.scoring,
            &cfg.generate,
            &cfg.backend.mode,
            cfg.backend.noise_fraction,
            (&cfg.backend.model, &cfg.backend.teacher_model, &cfg.backend.generator, &cfg.backend.teacher),
        ))?;
        let mut stage = StageRun::new("triplets", hash.clone());
        stage.input_file("corpus", &cfg.data.corpus)?;
        stage.input_file("queries", &cfg.data.queries)?;
        stage.input_file("train_qrels", train)?;
        stage.input_value("template", &self.template_source());
        if self.up_to_date(&stage)? {
            return Ok(());
        }

        let corpus = self.corpus()?;
        let queries = self.queries()?;
        let pairs = sample_relevant_pairs(&corpus, &queries, &self.qrels(train)?, cfg.triplets.pairs, cfg.seed)?;
        let template = self.template()?;
        let tc = TripletConfig {
            examples: cfg.triplets.examples.min(template.max_examples),
            template,
            params: GenerationParams {
                max_new_tokens: cfg.generate.max_new_tokens,
                temperature: cfg.generate.temperature,
                top_p: cfg.generate.top_p,
                stop_sequences: Vec::new(),
                seed: cfg.seed,
            },
            lower: cfg.triplets.lower,
            upper: cfg.triplets.upper,
            seed: cfg.seed,
            concurrency: cfg.backend.concurrency,
            retry: self.retry(),
        };
        let student = self.generator(pairs.len())?;
        let teacher = self.teacher()?;
        let index = self.index(&corpus)?;
        let embedder = self.embedder()?;
        let evaluator = self.evaluator(&index, embedder.as_ref())?;
        let outcome = build_triplets(&pairs, student.as_ref(), teacher.as_ref(), &tc, &evaluator)?;
        let out = self.path(TRIPLETS);
        let report_path = self.path(TRIPLETS_REPORT);
        write_triplets(&out, &outcome.triplets)?;
        write_json(&report_path, &hash, &outcome.report)?;
        stage.finish(&self.out, &[out.clone(), report_path])?;
        println!(
            "triplets: {} pairs -> {} triplets -> {}",
            outcome.report.pairs,
            outcome.report.emitted,
            out.display()
        );
        Ok(())
    }

    pub fn export_train(&self) -> anyhow::Result<()> {
        let cfg = &self.config;
        let filtered = self.path(FILTERED);
        require(&filtered, "filter")?;
        let hash = cfg.hash_of(&(&cfg.export, &cfg.scoring.k1, &cfg.scoring.b))?;
        let mut stage = StageRun::new("export-train", hash);
        stage.input_file("filtered", &filtered)?;
        stage.input_file("corpus", &cfg.data.corpus)?;
        if self.up_to_date(&stage)? {
            return Ok(());
        }
        let kept = read_scored_queries(&filtered)?;
        let corpus = self.corpus()?;
        let index = self.index(&corpus)?;
        let out = self.path(TRAIN);
        let lines = export_training_file(&kept, &index, cfg.export.n_negatives, cfg.seed, &out)?;
        stage.finish(&self.out, std::slice::from_ref(&out))?;
        println!("export-train: {} queries -> {lines} training lines -> {}", kept.len(), out.display());
        Ok(())
    }

    /// Test queries that have judgements.
    fn eval_queries(&self) -> anyhow::Result<(QuerySet, QrelSet)> {
        let qrels = self.qrels(&self.config.data.test_qrels)?;
        let queries = self.queries()?.restricted_to(&qrels);
        Ok((queries, qrels))
    }

    pub fn retrieve(&self) -> anyhow::Result<()> {
        let cfg = &self.config;
        let hash = cfg.hash_of(&(&cfg.retrieve, &cfg.scoring.k1, &cfg.scoring.b))?;
        let mut stage = StageRun::new("retrieve", hash);
        stage.input_file("corpus", &cfg.data.corpus)?;
        stage.input_file("queries", &cfg.data.queries)?;
        stage.input_file("test_qrels", &cfg.data.test_qrels)?;
        if self.up_to_date(&stage)? {
            return Ok(());
        }
        let corpus = self.corpus()?;
        let (queries, _) = self.eval_queries()?;
        let index = self.index(&corpus)?;
        let run = first_stage_retrieve(&index, &queries, cfg.retrieve.k);
        let out = self.path(BM25_RUN);
        run.write(&out)?;
        stage.finish(&self.out, std::slice::from_ref(&out))?;
        println!("retrieve: {} queries, {} entries -> {}", queries.len(), run.len(), out.display());
        Ok(())
    }

    pub fn rerank(&self) -> anyhow::Result<()> {
        let cfg = &self.config;
        let input = self.path(BM25_RUN);
        require(&input, "retrieve")?;
        let hash = cfg.hash_of(&(&cfg.rerank, &cfg.scoring, self.scorer_tag()))?;
        let mut stage = StageRun::new("rerank", hash);
        stage.input_file("run", &input)?;
        stage.input_file("corpus", &cfg.data.corpus)?;
        stage.input_file("queries", &cfg.data.queries)?;
        if self.up_to_date(&stage)? {
            return Ok(());
        }
        let corpus = self.corpus()?;
        let queries = self.queries()?;
        let run = Run::read(&input)?;
        let options = RerankOptions {
            top_k: cfg.rerank.top_k,
            tag: "rerank".into(),
            retry: self.retry(),
            ..Default::default()
        };
        let (reranked, report) = self.with_scorer(&corpus, |scorer, _| Ok(rerank(&run, &queries, scorer, &corpus, &options)?))?;
        let out = self.path(RERANK_RUN);
        reranked.write(&out)?;
        stage.finish(&self.out, std::slice::from_ref(&out))?;
        println!(
            "rerank: {} queries, {} pairs rescored, {} kept their first-stage score -> {}",
            report.queries,
            report.rescored,
            report.failed,
            out.display()
        );
        Ok(())
    }

    /// Score the pipeline's runs, or the run file given explicitly.
    pub fn evaluate(&self, run_file: Option<&Path>) -> anyhow::Result<()> {
        let cfg = &self.config;
        let runs: Vec<(String, PathBuf)> = match run_file {
            Some(p) => {
                let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
                vec![(name, p.to_path_buf())]
            }
            None => [("bm25", BM25_RUN), ("rerank", RERANK_RUN)]
                .into_iter()
                .map(|(n, rel)| (n.to_string(), self.path(rel)))
                .filter(|(_, p)| p.is_file())
                .collect(),
        };
        if runs.is_empty() {
            bail!(ValidationError("no run files to evaluate; run `qgen retrieve` first".into()));
        }
        let e = &cfg.evaluate;
        let hash = cfg.hash_of(e)?;
        let mut stage = StageRun::new("evaluate", hash.clone());
        stage.input_file("test_qrels", &cfg.data.test_qrels)?;
        for (name, p) in &runs {
            require(p, "retrieve")?;
            stage.input_file(&format!("run:{name}"), p)?;
        }
        let qrels = self.qrels(&cfg.data.test_qrels)?;
        let metrics_dir = self.path("metrics");
        fs::create_dir_all(&metrics_dir)?;
        let mut outputs = Vec::new();
        let skip = run_file.is_none() && self.up_to_date(&stage)?;
        for (name, p) in &runs {
            let run = Run::read(p)?;
            let mut ndcg = ndcg_at_k(&run, &qrels, e.ndcg_cutoff);
            let mut recall = recall_at_k(&run, &qrels, e.recall_cutoff);
            if !skip {
                ndcg.config_hash = Some(hash.clone());
                recall.config_hash = Some(hash.clone());
                let np = metrics_dir.join(format!("{name}.ndcg{}.json", e.ndcg_cutoff));
                let rp = metrics_dir.join(format!("{name}.recall{}.json", e.recall_cutoff));
                ndcg.write(&np)?;
                recall.write(&rp)?;
                outputs.push(np);
                outputs.push(rp);
            }
            println!(
                "evaluate {name}: nDCG@{} = {:.4}, recall@{} = {:.4} over {} queries ({} excluded)",
                e.ndcg_cutoff,
                ndcg.mean,
                e.recall_cutoff,
                recall.mean,
                ndcg.per_query.len(),
                ndcg.excluded
            );
        }
        if !skip && run_file.is_none() {
            stage.finish(&self.out, &outputs)?;
        }
        Ok(())
    }

    pub fn ablate(&self, sizes: Option<Vec<usize>>, keep: Option<usize>) -> anyhow::Result<()> {
        let cfg = &self.config;
        let gens = self.path(GENERATIONS);
        require(&gens, "generate")?;
        let sizes = sizes.unwrap_or_else(|| cfg.ablate.sizes.clone());
        let keep = keep.unwrap_or(cfg.ablate.keep);
        let hash = cfg.hash_of(&(&sizes, keep, &cfg.scoring, &cfg.export, self.scorer_tag()))?;
        let mut stage = StageRun::new("ablate", hash);
        stage.input_file("generations", &gens)?;
        stage.input_file("corpus", &cfg.data.corpus)?;
        stage.input_file("queries", &cfg.data.queries)?;
        stage.input_file("test_qrels", &cfg.data.test_qrels)?;
        if self.up_to_date(&stage)? {
            return Ok(());
        }
        let generations: Vec<ScoredQuery> = read_generations(&gens)?.into_iter().map(ScoredQuery::new).collect();
        if let Some(&s) = sizes.iter().find(|&&s| s > generations.len()) {
            bail!(ValidationError(format!(
                "pool size {s} exceeds the {} available generations",
                generations.len()
            )));
        }
        let corpus = self.corpus()?;
        let (queries, qrels) = self.eval_queries()?;
        let dir = self.path("ablation");
        fs::create_dir_all(&dir)?;
        let expansion = DocumentExpansionEval {
            corpus: &corpus,
            queries: &queries,
            qrels: &qrels,
            params: cfg.scoring.bm25(),
            depth: cfg.retrieve.k,
        };
        // Without a live trainer the stand-in loop scores the mock runs.
        let eval: Option<&dyn EvalLoop> = match cfg.backend.mode {
            BackendMode::Mock => Some(&expansion),
            BackendMode::Http => None,
        };
        let rows = self.with_scorer(&corpus, |scorer, index| {
            let setup = AblationSetup {
                corpus: &corpus,
                index,
                n_negatives: cfg.export.n_negatives,
                seed: cfg.seed,
                retry: self.retry(),
                out_dir: &dir,
                eval,
            };
            Ok(ablate_filter(&generations, &sizes, keep, scorer, &setup)?)
        })?;
        let csv = self.path(ABLATION_CSV);
        write_ablation_csv(&csv, &rows)?;
        let mut outputs = vec![csv.clone()];
        for r in &rows {
            outputs.push(dir.join(format!("filtered_{}.jsonl", r.pool_size)));
        }
        stage.finish(&self.out, &outputs)?;
        for r in &rows {
            match r.ndcg10 {
                Some(v) => println!("ablate: pool {} -> kept {}, nDCG@10 = {v:.4}", r.pool_size, r.kept),
                None => println!("ablate: pool {} -> kept {} ({} documents)", r.pool_size, r.kept, r.distinct_docs),
            }
        }
        println!("ablate: {} rows -> {}", rows.len(), csv.display());
        Ok(())
    }

    /// Every stage from generation to evaluation, in order.
    pub fn run_all(&self) -> anyhow::Result<()> {
        self.generate()?;
        self.filter()?;
        if self.config.data.train_qrels.is_some() {
            self.triplets()?;
        }
        self.export_train()?;
        self.retrieve()?;
        self.rerank()?;
        self.evaluate(None)
    }
}
