//! Pipeline configuration: one TOML file, relative paths resolved against
//! the file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use qgen_core::cpo::CpoParams;
use qgen_core::filter::FilterConfig;
use qgen_core::filter::FilterStrategy;
use qgen_core::score::{Bm25Params, ScoreWeights};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Mock,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default = "default_filter")]
    pub filter: FilterConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub triplets: TripletsConfig,
    #[serde(default)]
    pub export: ExportConfig,
    #[serde(default)]
    pub retrieve: RetrieveConfig,
    #[serde(default)]
    pub rerank: RerankConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_filter() -> FilterConfig {
    FilterConfig::new(FilterStrategy::LogprobTopk)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    /// Judgements the few-shot examples and reference queries come from.
    #[serde(default)]
    pub train_qrels: Option<PathBuf>,
    pub test_qrels: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default = "default_mode")]
    pub mode: BackendMode,
    /// Base URL of the completions server (http mode).
    #[serde(default)]
    pub generator: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Base URL and model for the teacher in triplet construction; defaults
    /// to the generator.
    #[serde(default)]
    pub teacher: Option<String>,
    #[serde(default)]
    pub teacher_model: Option<String>,
    #[serde(default)]
    pub embedder: Option<String>,
    #[serde(default)]
    pub scorer: Option<String>,
    /// Share of mock generations turned into document copies.
    #[serde(default)]
    pub noise_fraction: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_attempts")]
    pub attempts: u32,
}

fn default_mode() -> BackendMode {
    BackendMode::Mock
}
fn default_concurrency() -> usize {
    4
}
fn default_attempts() -> u32 {
    3
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: default_mode(),
            generator: None,
            model: None,
            teacher: None,
            teacher_model: None,
            embedder: None,
            scorer: None,
            noise_fraction: 0.0,
            concurrency: default_concurrency(),
            attempts: default_attempts(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleSource {
    /// The template's stock examples.
    Fixed,
    /// Drawn per document from the training judgements.
    Sampled,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    /// Bundled template id or a path to a template file.
    pub template: String,
    pub examples: ExampleSource,
    pub num_examples: usize,
    /// Total generations; documents are visited round-robin. Defaults to
    /// one per document.
    pub total: Option<usize>,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            template: "inpars-vanilla".into(),
            examples: ExampleSource::Fixed,
            num_examples: 3,
            total: None,
            max_new_tokens: 64,
            temperature: 0.0,
            top_p: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub w_enc: f64,
    pub w_bm25: f64,
    pub temperature: f64,
    pub k1: f64,
    pub b: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        let w = ScoreWeights::default();
        let p = Bm25Params::default();
        ScoringConfig {
            w_enc: w.w_enc,
            w_bm25: w.w_bm25,
            temperature: 1.0,
            k1: p.k1,
            b: p.b,
        }
    }
}

impl ScoringConfig {
    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    pub fn weights(&self) -> ScoreWeights {
        ScoreWeights {
            w_enc: self.w_enc,
            w_bm25: self.w_bm25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletsConfig {
    /// Relevant pairs drawn from the training judgements.
    pub pairs: usize,
    /// In-distribution examples in each targeted prompt.
    pub examples: usize,
    pub lower: f64,
    pub upper: f64,
    pub beta: f64,
}

impl Default for TripletsConfig {
    fn default() -> Self {
        TripletsConfig {
            pairs: 1000,
            examples: 3,
            lower: 0.3,
            upper: 0.7,
            beta: CpoParams::default().beta,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub n_negatives: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig { n_negatives: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveConfig {
    pub k: usize,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        RetrieveConfig { k: 1000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub top_k: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig { top_k: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub ndcg_cutoff: usize,
    pub recall_cutoff: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            ndcg_cutoff: 10,
            recall_cutoff: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub sizes: Vec<usize>,
    pub keep: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            sizes: vec![10_000, 25_000, 50_000, 100_000],
            keep: 10_000,
        }
    }
}

/// A configuration problem detected before any work starts.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ValidationError(msg.into()).into()
}

impl PipelineConfig {
    /// Parse `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.data.corpus);
        fix(&mut self.data.queries);
        fix(&mut self.data.test_qrels);
        if let Some(p) = self.data.train_qrels.as_mut() {
            fix(p);
        }
        let template = base.join(&self.generate.template);
        if template.is_file() {
            self.generate.template = template.to_string_lossy().into_owned();
        }
    }

    /// Pre-flight checks: input paths exist, numbers are in range, and the
    /// chosen backend mode has what it needs.
    pub fn validate(&self) -> anyhow::Result<()> {
        let files = [
            ("data.corpus", Some(&self.data.corpus)),
            ("data.queries", Some(&self.data.queries)),
            ("data.test_qrels", Some(&self.data.test_qrels)),
            ("data.train_qrels", self.data.train_qrels.as_ref()),
        ];
        for (field, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    bail!(invalid(format!("{field}: {} does not exist", p.display())));
                }
            }
        }
        self.filter
            .validate()
            .map_err(|e| invalid(format!("filter: {e}")))?;
        self.scoring
            .weights()
            .validate()
            .map_err(|e| invalid(format!("scoring: {e}")))?;
        self.scoring.bm25().validate().map_err(|e| invalid(format!("scoring: {e}")))?;
        if !(self.scoring.temperature.is_finite() && self.scoring.temperature > 0.0) {
            bail!(invalid("scoring.temperature must be positive"));
        }
        CpoParams { beta: self.triplets.beta }
            .validate()
            .map_err(|e| invalid(format!("triplets: {e}")))?;
        if !(0.0 <= self.triplets.lower && self.triplets.lower < self.triplets.upper && self.triplets.upper <= 1.0) {
            bail!(invalid("triplets: margins must satisfy 0 <= lower < upper <= 1"));
        }
        if !(0.0..=1.0).contains(&self.backend.noise_fraction) {
            bail!(invalid("backend.noise_fraction must be in [0, 1]"));
        }
        if self.backend.concurrency == 0 {
            bail!(invalid("backend.concurrency must be at least 1"));
        }
        if self.export.n_negatives == 0 {
            bail!(invalid("export.n_negatives must be at least 1"));
        }
        if self.retrieve.k == 0 || self.rerank.top_k == 0 {
            bail!(invalid("retrieve.k and rerank.top_k must be at least 1"));
        }
        if matches!(self.generate.examples, ExampleSource::Sampled) && self.data.train_qrels.is_none() {
            bail!(invalid("generate.examples = \"sampled\" needs data.train_qrels"));
        }
        if self.backend.mode == BackendMode::Http {
            if self.backend.generator.is_none() {
                bail!(invalid("backend.generator is required in http mode"));
            }
            if self.backend.model.is_none() {
                bail!(invalid("backend.model is required in http mode"));
            }
        }
        Ok(())
    }

    /// Stable hash of a serialisable config fragment plus the global seed.
    pub fn hash_of<T: Serialize>(&self, part: &T) -> anyhow::Result<String> {
        let json = serde_json::to_vec(&(self.seed, part)).context("hashing config")?;
        Ok(qgen_core::seed::content_hash(&json))
    }
}
