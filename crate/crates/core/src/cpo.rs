//! Preference triplets for contrastive preference optimisation, and the
//! objective itself as pure functions with an analytic gradient.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::RelevantPair;
use crate::error::{Error, Result};
use crate::filter::filter_margin;
use crate::generate::{generate_with_retry, Backend, Degeneracy, Generation, GenerationParams, PlannedPrompt, RetryPolicy};
use crate::prompt::{build_prompt, sample_fewshot_examples, PromptTemplate};
use crate::score::QueryEvaluator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Reference,
    Teacher,
    Student,
}

/// One document's three candidate queries with their combined scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripletCandidate {
    pub pair: RelevantPair,
    pub prompt: String,
    pub student: Generation,
    pub teacher: Generation,
    pub s_reference: f64,
    pub s_teacher: f64,
    pub s_student: f64,
}

impl TripletCandidate {
    /// Scores in precedence order: reference, teacher, student.
    pub fn scores(&self) -> [f64; 3] {
        [self.s_reference, self.s_teacher, self.s_student]
    }

    pub fn text(&self, source: Source) -> &str {
        match source {
            Source::Reference => &self.pair.query.text,
            Source::Teacher => &self.teacher.query_text,
            Source::Student => &self.student.query_text,
        }
    }

    pub fn score(&self, source: Source) -> f64 {
        match source {
            Source::Reference => self.s_reference,
            Source::Teacher => self.s_teacher,
            Source::Student => self.s_student,
        }
    }
}

const PRECEDENCE: [Source; 3] = [Source::Reference, Source::Teacher, Source::Student];

/// Highest-scoring source as preferred, lowest as dispreferred. Ties go to
/// the more trusted source for the preferred slot and the less trusted one
/// for the dispreferred slot.
pub fn select_preference(candidate: &TripletCandidate) -> Result<(Source, Source)> {
    let texts = PRECEDENCE.map(|s| candidate.text(s));
    if texts[0] == texts[1] && texts[1] == texts[2] {
        return Err(Error::invalid(format!("degenerate candidate for doc `{}`", candidate.pair.doc.id)));
    }
    let mut best = PRECEDENCE[0];
    for &s in &PRECEDENCE[1..] {
        if candidate.score(s) > candidate.score(best) {
            best = s;
        }
    }
    let mut worst = PRECEDENCE[2];
    for &s in PRECEDENCE[..2].iter().rev() {
        if candidate.score(s) < candidate.score(worst) {
            worst = s;
        }
    }
    Ok((best, worst))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriplet {
    pub doc_id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

impl PreferenceTriplet {
    pub fn validate(&self) -> Result<()> {
        if self.chosen == self.rejected {
            return Err(Error::invalid("chosen and rejected queries are identical"));
        }
        if !(self.chosen_score.is_finite() && self.rejected_score.is_finite()) {
            return Err(Error::invalid("triplet scores must be finite"));
        }
        if self.chosen_score < self.rejected_score {
            return Err(Error::invalid(format!(
                "chosen score {} is below rejected score {}",
                self.chosen_score, self.rejected_score
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpoParams {
    pub beta: f64,
}

impl Default for CpoParams {
    fn default() -> Self {
        CpoParams { beta: 0.1 }
    }
}

impl CpoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(logp_w: f64, logp_l: f64, beta: f64) -> Result<()> {
    if !(logp_w.is_finite() && logp_l.is_finite() && beta.is_finite()) {
        return Err(Error::invalid("loss inputs must be finite"));
    }
    if beta <= 0.0 {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// -log sigmoid(beta * (logp_w - logp_l)).
pub fn cpo_prefer_loss(logp_w: f64, logp_l: f64, beta: f64) -> Result<f64> {
    check_inputs(logp_w, logp_l, beta)?;
    Ok(softplus(-beta * (logp_w - logp_l)))
}

pub fn cpo_nll_loss(logp_w: f64) -> Result<f64> {
    if !logp_w.is_finite() {
        return Err(Error::invalid("log-probability must be finite"));
    }
    if logp_w > 0.0 {
        return Err(Error::invalid(format!("log-probability must be <= 0, got {logp_w}")));
    }
    Ok(-logp_w)
}

pub fn cpo_total_loss(logp_w: f64, logp_l: f64, beta: f64) -> Result<f64> {
    Ok(cpo_prefer_loss(logp_w, logp_l, beta)? + cpo_nll_loss(logp_w)?)
}

/// Partial derivatives of the total loss with respect to `logp_w` and `logp_l`.
pub fn cpo_loss_grad(logp_w: f64, logp_l: f64, beta: f64) -> Result<(f64, f64)> {
    check_inputs(logp_w, logp_l, beta)?;
    let s = sigmoid(-beta * (logp_w - logp_l));
    Ok((-beta * s - 1.0, beta * s))
}

/// Sequence log-probability from token log-probabilities: the plain sum, or
/// the per-token mean when `normalize` is set.
pub fn sequence_logprob(token_logprobs: &[f64], normalize: bool) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::invalid("no token log-probabilities"));
    }
    let sum: f64 = token_logprobs.iter().sum();
    Ok(if normalize { sum / token_logprobs.len() as f64 } else { sum })
}

#[derive(Debug, Clone)]
pub struct TripletConfig {
    pub template: PromptTemplate,
    /// In-distribution examples per targeted prompt.
    pub examples: usize,
    pub params: GenerationParams,
    pub lower: f64,
    pub upper: f64,
    pub seed: u64,
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TripletReport {
    pub pairs: usize,
    pub emitted: usize,
    /// Pairs dropped before emission, per reason.
    pub dropped: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct TripletOutcome {
    pub triplets: Vec<PreferenceTriplet>,
    pub report: TripletReport,
}

fn score_generation(evaluator: &QueryEvaluator<'_>, pair: &RelevantPair, g: &Generation) -> Result<f64> {
    // An empty query carries no relevance signal; let the margin drop it.
    if g.flag == Some(Degeneracy::Empty) {
        return Ok(0.0);
    }
    Ok(evaluator.score(&pair.doc, &g.query_text)?.combined)
}

fn build_candidate(
    i: usize,
    pair: &RelevantPair,
    pairs: &[RelevantPair],
    student: &dyn Backend,
    teacher: &dyn Backend,
    config: &TripletConfig,
    evaluator: &QueryEvaluator<'_>,
) -> std::result::Result<TripletCandidate, (&'static str, String)> {
    let examples = sample_fewshot_examples(pairs, config.examples, config.seed, Some(&pair.doc.id))
        .map_err(|e| ("prompt-failure", e.to_string()))?;
    let prompt = build_prompt(&config.template, &examples, &pair.doc).map_err(|e| ("prompt-failure", e.to_string()))?;
    let planned = PlannedPrompt { seq: i as u64, prompt };
    let run = |b: &dyn Backend| {
        generate_with_retry(&planned, &config.params, b, config.retry).map_err(|(_, e)| ("generation-failure", e.to_string()))
    };
    let s_gen = run(student)?;
    let t_gen = run(teacher)?;
    let scoring = |e: Error| ("scoring-failure", e.to_string());
    let s_reference = evaluator.score(&pair.doc, &pair.query.text).map_err(scoring)?.combined;
    let s_teacher = score_generation(evaluator, pair, &t_gen).map_err(scoring)?;
    let s_student = score_generation(evaluator, pair, &s_gen).map_err(scoring)?;
    Ok(TripletCandidate {
        pair: pair.clone(),
        prompt: planned.prompt.text,
        student: s_gen,
        teacher: t_gen,
        s_reference,
        s_teacher,
        s_student,
    })
}

/// Generate student and teacher queries for every pair, score them with the
/// reference query, apply the margin filter and emit one triplet per
/// surviving pair. Per-pair failures are counted, not fatal.
pub fn build_triplets(
    pairs: &[RelevantPair],
    student: &dyn Backend,
    teacher: &dyn Backend,
    config: &TripletConfig,
    evaluator: &QueryEvaluator<'_>,
) -> Result<TripletOutcome> {
    if pairs.is_empty() {
        return Err(Error::invalid("no relevant pairs to build triplets from"));
    }
    config.params.validate()?;
    config.template.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        pairs
            .par_iter()
            .enumerate()
            .map(|(i, pair)| build_candidate(i, pair, pairs, student, teacher, config, evaluator))
            .collect()
    });

    let mut report = TripletReport { pairs: pairs.len(), ..Default::default() };
    let mut candidates = Vec::new();
    for r in results {
        match r {
            Ok(c) => candidates.push(c),
            Err((reason, msg)) => {
                log::warn!("{reason}: {msg}");
                *report.dropped.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    let filtered = filter_margin(candidates, config.lower, config.upper)?;
    for (reason, n) in filtered.report.dropped {
        *report.dropped.entry(format!("margin-{reason}")).or_default() += n;
    }

    let mut triplets = Vec::new();
    for c in filtered.kept {
        let (w, l) = match select_preference(&c) {
            Ok(sel) => sel,
            Err(_) => {
                *report.dropped.entry("identical-texts".into()).or_default() += 1;
                continue;
            }
        };
        if c.text(w) == c.text(l) {
            *report.dropped.entry("identical-texts".into()).or_default() += 1;
            continue;
        }
        triplets.push(PreferenceTriplet {
            doc_id: c.pair.doc.id.clone(),
            prompt: c.prompt.clone(),
            chosen: c.text(w).to_string(),
            rejected: c.text(l).to_string(),
            chosen_score: c.score(w),
            rejected_score: c.score(l),
        });
    }
    report.emitted = triplets.len();
    Ok(TripletOutcome { triplets, report })
}

pub fn write_triplets(path: impl AsRef<Path>, triplets: &[PreferenceTriplet]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    for t in triplets {
        t.validate()?;
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_triplets(path: impl AsRef<Path>) -> Result<Vec<PreferenceTriplet>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: PreferenceTriplet = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        t.validate().map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}
