//! Sentence embeddings: an HTTP provider with a content-hash cache, and a
//! deterministic hashed bag-of-words fallback for hermetic runs.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bm25::{term_counts, tokenize};
use crate::error::{BackendError, Error, Result};
use crate::seed::{content_hash, rng_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding has zero dimensions"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding has non-finite entries"));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub trait Embedder: Send + Sync {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn name(&self) -> String;
}

/// Each token maps to a seeded pseudo-random ±1 direction in `dim`
/// dimensions; a text is the count-weighted sum, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    seed: u64,
    dim: usize,
}

pub const FALLBACK_DIM: usize = 256;

impl HashEmbedder {
    pub fn new(seed: u64) -> Self {
        HashEmbedder { seed, dim: FALLBACK_DIM }
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::invalid("cannot embed text without tokens"));
        }
        let mut acc = vec![0.0f64; self.dim];
        for (term, count) in term_counts(&tokens) {
            let mut rng = rng_for(self.seed, term);
            for slot in acc.iter_mut() {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                *slot += sign * count as f64;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Sign patterns of distinct terms can cancel exactly; fall back to
        // a fixed axis so the vector is still unit length.
        if norm == 0.0 {
            acc[0] = 1.0;
        } else {
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(acc)
    }
}

impl Embedder for HashEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }

    fn name(&self) -> String {
        format!("hash-bow-{}d-seed{}", self.dim, self.seed)
    }
}

const CACHE_FORMAT: &str = "qgen-embedding-cache";
const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    hash: String,
    vector: EmbeddingVector,
}

/// Content-hash → vector table. Reads are concurrent; inserts serialize on
/// the write lock and, when backed by a file, append one JSON line each.
#[derive(Default)]
pub struct EmbeddingCache {
    table: RwLock<HashMap<String, EmbeddingVector>>,
    file: Option<Mutex<BufWriter<File>>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a JSON-lines cache file. The first line is a
    /// versioned header.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut table = HashMap::new();
        let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
        if exists {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if i == 0 {
                    let header: CacheHeader = serde_json::from_str(&line)
                        .map_err(|e| Error::parse(path, 1, format!("bad cache header: {e}")))?;
                    if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
                        return Err(Error::parse(path, 1, "unsupported embedding cache format"));
                    }
                    continue;
                }
                // A torn final line from a crash is dropped.
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(r) => {
                        table.insert(r.hash, r.vector);
                    }
                    Err(e) => log::warn!("{}:{}: skipping cache line: {e}", path.display(), i + 1),
                }
            }
        }
        let mut writer = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        if !exists {
            serde_json::to_writer(&mut writer, &CacheHeader { format: CACHE_FORMAT.into(), version: CACHE_VERSION })?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
        Ok(EmbeddingCache {
            table: RwLock::new(table),
            file: Some(Mutex::new(writer)),
        })
    }

    pub fn get(&self, text: &str) -> Option<EmbeddingVector> {
        self.table.read().expect("cache lock").get(&content_hash(text.as_bytes())).cloned()
    }

    pub fn insert(&self, text: &str, vector: EmbeddingVector) -> Result<()> {
        let hash = content_hash(text.as_bytes());
        let mut table = self.table.write().expect("cache lock");
        if table.contains_key(&hash) {
            return Ok(());
        }
        if let Some(file) = &self.file {
            let mut w = file.lock().expect("cache file lock");
            serde_json::to_writer(&mut *w, &CacheRecord { hash: hash.clone(), vector: vector.clone() })?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        table.insert(hash, vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// Client for `POST {base}/embed`. Unreachable providers are errors;
/// there is no silent fallback to the hash embedder.
pub struct HttpEmbedder {
    endpoint: String,
    client: reqwest::blocking::Client,
    cache: EmbeddingCache,
    calls: AtomicUsize,
}

impl HttpEmbedder {
    pub fn new(base: &str, cache: EmbeddingCache) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpEmbedder {
            endpoint: format!("{}/embed", base.trim_end_matches('/')),
            client,
            cache,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn with_cache_file(base: &str, path: impl Into<PathBuf>) -> Result<Self> {
        Self::new(base, EmbeddingCache::open(path.into())?)
    }

    /// Number of HTTP requests issued so far.
    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn fetch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(BackendError::Transport(format!("{} returned {}", self.endpoint, resp.status())).into());
        }
        let body: EmbedResponse = resp.json().map_err(|e| BackendError::Protocol(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(BackendError::Protocol(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                body.vectors.len()
            ))
            .into());
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != body.dim {
                    return Err(BackendError::Protocol(format!("vector of dim {} but advertised {}", v.len(), body.dim)).into());
                }
                EmbeddingVector::new(v)
            })
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::invalid("cannot embed empty text"));
        }
        let mut out: Vec<Option<EmbeddingVector>> = texts.iter().map(|t| self.cache.get(t)).collect();
        let missing: Vec<&str> = texts
            .iter()
            .zip(&out)
            .filter(|(_, v)| v.is_none())
            .map(|(t, _)| *t)
            .collect();
        if !missing.is_empty() {
            let fetched = self.fetch(&missing)?;
            let mut fetched_iter = missing.iter().zip(fetched);
            for slot in out.iter_mut().filter(|v| v.is_none()) {
                let (text, vector) = fetched_iter.next().expect("one vector per missing text");
                self.cache.insert(text, vector.clone())?;
                *slot = Some(vector);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }

    fn name(&self) -> String {
        self.endpoint.clone()
    }
}
