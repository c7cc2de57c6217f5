use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, Completion, CompletionRequest};
use crate::error::BackendError;

pub const ENV_API_BASE: &str = "QGEN_API_BASE";
pub const ENV_API_KEY: &str = "QGEN_API_KEY";

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    top_p: f64,
    stop: Vec<String>,
    logprobs: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Deserialize)]
struct Logprobs {
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    token_logprobs: Option<Vec<Option<f64>>>,
}

/// OpenAI-compatible `/v1/completions` client.
pub struct OpenAiBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiBackend {
    pub fn new(base: &str, model: &str, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(OpenAiBackend {
            endpoint: format!("{}/v1/completions", base.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            client,
        })
    }

    /// Base URL and key from `QGEN_API_BASE` / `QGEN_API_KEY`.
    pub fn from_env(model: &str) -> Result<Self, BackendError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| BackendError::Protocol(format!("{ENV_API_BASE} is not set")))?;
        Self::new(&base, model, std::env::var(ENV_API_KEY).ok())
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Backend for OpenAiBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let body = CompletionBody {
            model: &self.model,
            prompt: &request.prompt.text,
            max_tokens: request.params.max_new_tokens,
            temperature: request.params.temperature,
            top_p: request.params.top_p,
            stop: request.stop_sequences(),
            logprobs: 1,
            seed: request.seed(),
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transport(format!("{} returned {status}", self.endpoint)));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Protocol(format!("{} returned {status}: {text}", self.endpoint)));
        }
        let parsed: CompletionResponse = resp.json().map_err(|e| BackendError::Protocol(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        let (tokens, token_logprobs) = match choice.logprobs {
            Some(lp) => (lp.tokens, lp.token_logprobs),
            None => (None, None),
        };
        Ok(Completion {
            text: choice.text,
            tokens,
            token_logprobs,
        })
    }

    fn tag(&self) -> String {
        format!("openai:{}", self.model)
    }
}
