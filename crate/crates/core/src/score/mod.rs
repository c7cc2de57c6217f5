//! Query-quality scores: mean token log-probability, BM25 (raw, top-k and
//! corpus-softmax), the rescaled-cosine encoder score, and their blend.

mod bm25;
mod embed;

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

pub use bm25::{tokenize, Bm25Index, Bm25Params};
pub use embed::{Embedder, EmbeddingCache, EmbeddingVector, HashEmbedder, HttpEmbedder, FALLBACK_DIM};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::generate::Generation;

/// Mean of per-token log-probabilities: (1/|q|) Σ log p(q_i | t, d, q_<i).
pub fn mean_logprob(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::invalid("mean log-probability of an empty token list"));
    }
    Ok(token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64)
}

/// `(1 + cos(doc, query)) / 2`, in [0, 1].
pub fn enc_score(doc: &EmbeddingVector, query: &EmbeddingVector) -> Result<f64> {
    if doc.dim() != query.dim() {
        return Err(Error::invalid(format!("dimension mismatch: {} vs {}", doc.dim(), query.dim())));
    }
    let (a, b) = (doc.values(), query.values());
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::invalid("cosine of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cos = (dot / (aa * bb).sqrt()).clamp(-1.0, 1.0);
    Ok(((1.0 + cos) / 2.0).clamp(0.0, 1.0))
}

/// Softmax of `scores` evaluated at `target`, with max subtraction.
pub fn softmax_at(scores: &[f64], target: usize, temperature: f64) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| ((s - max) / temperature).exp()).sum();
    ((scores[target] - max) / temperature).exp() / z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w_enc: f64,
    pub w_bm25: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { w_enc: 0.5, w_bm25: 0.5 }
    }
}

impl ScoreWeights {
    pub fn new(w_enc: f64, w_bm25: f64) -> Result<Self> {
        let w = ScoreWeights { w_enc, w_bm25 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_enc < 0.0 || self.w_bm25 < 0.0 || (self.w_enc + self.w_bm25 - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "score weights must be non-negative and sum to 1, got ({}, {})",
                self.w_enc, self.w_bm25
            )));
        }
        Ok(())
    }

    /// Blend of the two component scores. Inputs in [0, 1] give an output
    /// in [0, 1].
    pub fn combine(&self, enc: f64, bm25_softmax: f64) -> f64 {
        (self.w_enc * enc + self.w_bm25 * bm25_softmax).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScores {
    pub enc: f64,
    pub bm25_softmax: f64,
    pub combined: f64,
}

/// Scores (document, query) pairs against a fixed corpus index and
/// embedder. Document embeddings are computed once and kept.
pub struct QueryEvaluator<'a> {
    index: &'a Bm25Index,
    embedder: &'a dyn Embedder,
    weights: ScoreWeights,
    temperature: f64,
    doc_vectors: RwLock<HashMap<String, EmbeddingVector>>,
}

impl<'a> QueryEvaluator<'a> {
    pub fn new(index: &'a Bm25Index, embedder: &'a dyn Embedder, weights: ScoreWeights) -> Result<Self> {
        weights.validate()?;
        Ok(QueryEvaluator {
            index,
            embedder,
            weights,
            temperature: 1.0,
            doc_vectors: RwLock::new(HashMap::new()),
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("softmax temperature must be > 0, got {temperature}")));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn index(&self) -> &Bm25Index {
        self.index
    }

    fn doc_vector(&self, doc: &Document) -> Result<EmbeddingVector> {
        if let Some(v) = self.doc_vectors.read().expect("doc vector lock").get(&doc.id) {
            return Ok(v.clone());
        }
        let v = self.embedder.embed(&doc.full_text())?;
        self.doc_vectors
            .write()
            .expect("doc vector lock")
            .insert(doc.id.clone(), v.clone());
        Ok(v)
    }

    /// Embed a batch of documents up front.
    pub fn precompute<'d>(&self, docs: impl IntoIterator<Item = &'d Document>) -> Result<()> {
        let docs: Vec<&Document> = docs.into_iter().collect();
        for chunk in docs.chunks(64) {
            let texts: Vec<String> = chunk.iter().map(|d| d.full_text()).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let vectors = self.embedder.embed_batch(&refs)?;
            let mut table = self.doc_vectors.write().expect("doc vector lock");
            for (d, v) in chunk.iter().zip(vectors) {
                table.insert(d.id.clone(), v);
            }
        }
        Ok(())
    }

    pub fn score(&self, doc: &Document, query: &str) -> Result<QueryScores> {
        let enc = enc_score(&self.doc_vector(doc)?, &self.embedder.embed(query)?)?;
        let bm25_softmax = self.index.softmax_score(query, &doc.id, self.temperature)?;
        Ok(QueryScores {
            enc,
            bm25_softmax,
            combined: self.weights.combine(enc, bm25_softmax),
        })
    }
}

/// A generation decorated with whichever scores have been computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuery {
    #[serde(flatten)]
    pub generation: Generation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bm25_softmax: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enc_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reranker_score: Option<f64>,
}

impl ScoredQuery {
    pub fn new(generation: Generation) -> Self {
        ScoredQuery {
            generation,
            mean_logprob: None,
            bm25_softmax: None,
            enc_score: None,
            combined: None,
            reranker_score: None,
        }
    }

    /// Fill `mean_logprob` from the generation's token log-probabilities.
    pub fn with_mean_logprob(mut self) -> Result<Self> {
        self.mean_logprob = Some(mean_logprob(&self.generation.token_logprobs)?);
        Ok(self)
    }

    pub fn with_scores(mut self, scores: QueryScores) -> Self {
        self.enc_score = Some(scores.enc);
        self.bm25_softmax = Some(scores.bm25_softmax);
        self.combined = Some(scores.combined);
        self
    }

    pub fn doc_id(&self) -> &str {
        &self.generation.doc_id
    }

    pub fn seq(&self) -> u64 {
        self.generation.seq
    }

    pub fn query(&self) -> &str {
        &self.generation.query_text
    }
}

/// Write scored queries as JSON lines (tmp file + rename).
pub fn write_scored_queries(path: impl AsRef<Path>, items: &[ScoredQuery]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        for item in items {
            serde_json::to_writer(&mut out, item)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Read scored queries; plain generation lines parse with every score unset.
pub fn read_scored_queries(path: impl AsRef<Path>) -> Result<Vec<ScoredQuery>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn enc_score_geometry() {
        let a = v(&[0.3, -1.2, 4.5]);
        assert_eq!(enc_score(&a, &a).unwrap(), 1.0);
        assert_eq!(enc_score(&v(&[1.0, 0.0]), &v(&[0.0, 2.0])).unwrap(), 0.5);
        assert_eq!(enc_score(&a, &v(&[-0.3, 1.2, -4.5])).unwrap(), 0.0);
        assert!(enc_score(&a, &v(&[0.0, 0.0, 0.0])).is_err());
        assert!(enc_score(&a, &v(&[1.0])).is_err());
    }

    #[test]
    fn softmax_three_docs() {
        let e2 = 2.0f64.exp();
        assert_abs_diff_eq!(softmax_at(&[2.0, 0.0, 0.0], 0, 1.0), e2 / (e2 + 2.0), epsilon = 1e-15);
        assert_abs_diff_eq!(softmax_at(&[2.0, 0.0, 0.0], 0, 1.0), 0.786986, epsilon = 1e-6);
    }

    #[test]
    fn weights() {
        let w = ScoreWeights::default();
        assert_eq!(w.combine(1.0, 1.0), 1.0);
        assert_abs_diff_eq!(w.combine(0.6, 0.2), 0.4, epsilon = 1e-15);
        assert_eq!(ScoreWeights::new(1.0, 0.0).unwrap().combine(0.37, 0.9), 0.37);
        assert!(ScoreWeights::new(0.7, 0.7).is_err());
        assert!(ScoreWeights::new(-0.5, 1.5).is_err());
    }

    #[test]
    fn mean_logprob_cases() {
        assert_eq!(mean_logprob(&[-1.0]).unwrap(), -1.0);
        assert_abs_diff_eq!(mean_logprob(&[-1.0, -0.5, -1.0 / 3.0]).unwrap(), -0.611111, epsilon = 1e-6);
        assert_eq!(
            mean_logprob(&[-1.0, -0.5, -0.25]).unwrap(),
            mean_logprob(&[-0.25, -1.0, -0.5]).unwrap()
        );
        assert!(mean_logprob(&[]).is_err());
    }
}
