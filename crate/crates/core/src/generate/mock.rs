use std::collections::HashSet;

use rand::seq::index::sample;

use super::{Backend, Completion, CompletionRequest};
use crate::error::BackendError;
use crate::seed::rng_for;

/// Words the mock never picks as content words.
pub const MOCK_STOP_WORDS: [&str; 30] = [
    "am", "is", "are", "was", "were", "be", "been", "being", "has", "have", "had", "do", "does", "did", "and", "or",
    "but", "of", "to", "in", "for", "with", "by", "as", "at", "from", "that", "this", "it", "its",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockSpec {
    /// Fraction of the `population` request slots answered with a copy of
    /// the document instead of a query.
    pub noise_fraction: f64,
    pub noise_seed: u64,
    /// Number of request sequence numbers the noise is drawn over.
    pub population: u64,
    /// Answer without log-probabilities, as a misconfigured server would.
    pub omit_logprobs: bool,
    /// Leading word of every query; "what" when unset. Lets two mocks play
    /// distinct teacher and student roles.
    pub lead: Option<String>,
}

/// Deterministic stand-in generator: "what" followed by the first three
/// content words of the target document, with log-prob −1/(i+1) for
/// token i.
#[derive(Debug, Clone)]
pub struct MockBackend {
    spec: MockSpec,
    noisy: HashSet<u64>,
}

impl MockBackend {
    pub fn new(spec: MockSpec) -> Self {
        let fraction = spec.noise_fraction.clamp(0.0, 1.0);
        let count = (fraction * spec.population as f64).floor() as usize;
        let noisy = if count == 0 {
            HashSet::new()
        } else {
            let mut rng = rng_for(spec.noise_seed, "mock-noise");
            sample(&mut rng, spec.population as usize, count)
                .into_iter()
                .map(|i| i as u64)
                .collect()
        };
        MockBackend { spec, noisy }
    }

    pub fn clean() -> Self {
        Self::new(MockSpec::default())
    }

    /// Whether request `seq` is answered with a document copy.
    pub fn is_noisy(&self, seq: u64) -> bool {
        self.noisy.contains(&seq)
    }

    pub fn content_words(document: &str) -> Vec<String> {
        document
            .split_whitespace()
            .map(|w| w.to_lowercase())
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
            .filter(|w| !w.is_empty() && !MOCK_STOP_WORDS.contains(&w.as_str()))
            .collect()
    }

    /// The query the mock produces for `document`.
    pub fn query_for(document: &str) -> String {
        Self::query_with_lead("what", document)
    }

    fn query_with_lead(lead: &str, document: &str) -> String {
        let mut words = vec![lead.to_string()];
        words.extend(Self::content_words(document).into_iter().take(3));
        words.join(" ")
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
        let document = request.prompt.document();
        let text = if self.is_noisy(request.seq) {
            document.split_whitespace().collect::<Vec<_>>().join(" ")
        } else {
            Self::query_with_lead(self.spec.lead.as_deref().unwrap_or("what"), document)
        };
        let tokens: Vec<String> = text
            .split(' ')
            .enumerate()
            .map(|(i, w)| if i == 0 { w.to_string() } else { format!(" {w}") })
            .take(request.params.max_new_tokens as usize)
            .collect();
        let text: String = tokens.concat();
        let logprobs = (0..tokens.len()).map(|i| Some(-1.0 / (i as f64 + 1.0))).collect();
        Ok(Completion {
            text,
            tokens: Some(tokens),
            token_logprobs: if self.spec.omit_logprobs { None } else { Some(logprobs) },
        })
    }

    fn tag(&self) -> String {
        let mut tag = "mock".to_string();
        if let Some(lead) = &self.spec.lead {
            tag.push('-');
            tag.push_str(lead);
        }
        if self.spec.noise_fraction > 0.0 {
            tag.push_str(&format!("-noise{}", self.spec.noise_fraction));
        }
        tag
    }
}
