//! Generation backends and query extraction.

mod batch;
mod http;
mod mock;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use batch::{
    generate_batch, plan_round_robin, read_checkpoint, read_generations, write_generations, BatchOptions, BatchOutcome,
    FailedGeneration, PlannedPrompt, RetryPolicy,
};
pub(crate) use batch::generate_with_retry;
pub use http::{OpenAiBackend, ENV_API_BASE, ENV_API_KEY};
pub use mock::{MockBackend, MockSpec, MOCK_STOP_WORDS};

use crate::error::{BackendError, Result};
use crate::prompt::Prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_new_tokens: u32,
    /// 0 means greedy.
    pub temperature: f64,
    pub top_p: f64,
    /// Added to the prompt's own stop sequences.
    pub stop_sequences: Vec<String>,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_new_tokens: 64,
            temperature: 0.0,
            top_p: 1.0,
            stop_sequences: Vec::new(),
            seed: 0,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(crate::Error::invalid("max_new_tokens must be at least 1"));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(crate::Error::invalid("temperature must be >= 0"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(crate::Error::invalid("top_p must be in (0, 1]"));
        }
        Ok(())
    }
}

/// What a backend is asked to do for one prompt.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a Prompt,
    pub params: &'a GenerationParams,
    /// Position of this request in the batch plan.
    pub seq: u64,
}

impl CompletionRequest<'_> {
    pub fn stop_sequences(&self) -> Vec<String> {
        let mut stops = self.prompt.stop_sequences.clone();
        for s in &self.params.stop_sequences {
            if !stops.contains(s) {
                stops.push(s.clone());
            }
        }
        stops
    }

    /// Per-request sampling seed, so repeated prompts of the same document
    /// draw different samples.
    pub fn seed(&self) -> u64 {
        self.params.seed.wrapping_add(self.seq)
    }
}

/// Raw backend output.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Token strings, concatenating to `text`, when the backend reports them.
    pub tokens: Option<Vec<String>>,
    pub token_logprobs: Option<Vec<Option<f64>>>,
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError>;

    /// Short identifier recorded on every generation.
    fn tag(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Degeneracy {
    Empty,
    DocumentCopy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub doc_id: String,
    #[serde(rename = "query")]
    pub query_text: String,
    pub raw_text: String,
    #[serde(rename = "log_probs")]
    pub token_logprobs: Vec<f64>,
    #[serde(rename = "template")]
    pub prompt_template_id: String,
    #[serde(rename = "backend")]
    pub backend_tag: String,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<Degeneracy>,
}

impl Generation {
    pub fn is_degenerate(&self) -> bool {
        self.flag.is_some()
    }
}

/// Cut `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop<'t>(text: &'t str, stops: &[String]) -> &'t str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

/// Byte range of the query inside `text` (already stop-truncated).
///
/// With a marker present, the query is what follows its last occurrence,
/// up to the end of that line. Otherwise it is the first non-blank line.
pub fn extract_query_span(text: &str, marker: Option<&str>) -> Range<usize> {
    let start = match marker.filter(|m| !m.is_empty()).and_then(|m| text.rfind(m).map(|i| i + m.len())) {
        Some(after_marker) => after_marker,
        None => text.len() - text.trim_start().len(),
    };
    let line_end = text[start..].find('\n').map_or(text.len(), |i| start + i);
    let line = &text[start..line_end];
    let lead = line.len() - line.trim_start().len();
    let trimmed = line.trim();
    (start + lead)..(start + lead + trimmed.len())
}

fn normalized_words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// A query that reproduces a long verbatim stretch of the document (at
/// least 16 words, or 80% of a shorter document) instead of asking about it.
pub fn is_document_copy(query: &str, document: &str) -> bool {
    let q = normalized_words(query);
    let d = normalized_words(document);
    if q.is_empty() || d.is_empty() {
        return false;
    }
    let q_joined = q.join(" ");
    let needed = 16.min((d.len() * 4).div_ceil(5));
    q.len() >= needed && d.join(" ").contains(&q_joined)
}

/// Log-probs of the tokens that overlap `span`. Without token strings the
/// whole completion is taken to be the query.
fn align_logprobs(
    completion: &Completion,
    cut: usize,
    span: &Range<usize>,
) -> Result<Vec<f64>, BackendError> {
    let logprobs = completion.token_logprobs.as_ref().ok_or(BackendError::MissingLogprobs)?;
    let selected: Vec<Option<f64>> = match &completion.tokens {
        Some(tokens) if tokens.len() == logprobs.len() => {
            let mut out = Vec::new();
            let mut pos = 0;
            for (tok, lp) in tokens.iter().zip(logprobs) {
                let (s, e) = (pos, pos + tok.len());
                pos = e;
                if s >= cut {
                    break;
                }
                if s < span.end && e > span.start {
                    out.push(*lp);
                }
            }
            out
        }
        Some(tokens) => {
            return Err(BackendError::Protocol(format!(
                "{} tokens but {} log-probabilities",
                tokens.len(),
                logprobs.len()
            )))
        }
        None => logprobs.clone(),
    };
    selected
        .into_iter()
        .flatten()
        .map(|lp| {
            if !lp.is_finite() && lp != f64::NEG_INFINITY {
                Err(BackendError::Protocol(format!("invalid log-probability {lp}")))
            } else if lp > 1e-6 {
                Err(BackendError::Protocol(format!("positive log-probability {lp}")))
            } else {
                Ok(lp.min(0.0))
            }
        })
        .collect()
}

/// Run one prompt through `backend` and extract the generated query.
pub fn generate(
    prompt: &Prompt,
    params: &GenerationParams,
    backend: &dyn Backend,
    seq: u64,
) -> Result<Generation, BackendError> {
    let request = CompletionRequest { prompt, params, seq };
    let completion = backend.complete(&request)?;
    if completion.token_logprobs.as_ref().is_none_or(|l| l.is_empty() && !completion.text.is_empty()) {
        return Err(BackendError::MissingLogprobs);
    }
    let raw = truncate_at_stop(&completion.text, &request.stop_sequences());
    let span = extract_query_span(raw, prompt.answer_marker.as_deref());
    let query = raw[span.clone()].to_string();
    let token_logprobs = if query.is_empty() {
        Vec::new()
    } else {
        align_logprobs(&completion, raw.len(), &span)?
    };
    if !query.is_empty() && token_logprobs.is_empty() {
        return Err(BackendError::MissingLogprobs);
    }
    let flag = if query.is_empty() {
        Some(Degeneracy::Empty)
    } else if is_document_copy(&query, prompt.document()) {
        Some(Degeneracy::DocumentCopy)
    } else {
        None
    };
    Ok(Generation {
        doc_id: prompt.doc_id.clone(),
        query_text: query,
        raw_text: raw.to_string(),
        token_logprobs,
        prompt_template_id: prompt.template_id.clone(),
        backend_tag: backend.tag(),
        seq,
        flag,
    })
}
