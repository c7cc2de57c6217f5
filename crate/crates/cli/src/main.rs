mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{BackendMode, PipelineConfig, ValidationError};
use stages::Pipeline;

/// Synthetic query generation pipeline for retrieval training.
#[derive(Parser)]
#[command(name = "qgen", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, default_value = "qgen.toml")]
    config: PathBuf,

    /// Overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `backend.mode`.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendMode>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic queries for every document.
    Generate,
    /// Select generated queries with the configured strategy.
    Filter,
    /// Build preference triplets from teacher, student and reference queries.
    Triplets,
    /// Write the reranker training file from the filtered queries.
    ExportTrain,
    /// BM25 first-stage retrieval for the test queries.
    Retrieve,
    /// Rerank the BM25 run with the pointwise scorer.
    Rerank,
    /// nDCG and recall for the pipeline's runs or a given run file.
    Evaluate {
        /// TREC run file to score instead of the pipeline's runs.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Filter-size ablation over subsampled generation pools.
    Ablate {
        /// Comma-separated pool sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        keep: Option<usize>,
    },
    /// Every stage from generation to evaluation.
    Pipeline,
    /// Check the configuration and exit.
    ValidateConfig,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(dir) = cli.out_dir {
        config.out_dir = dir;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(mode) = cli.backend {
        config.backend.mode = mode;
    }
    if let Command::ValidateConfig = cli.command {
        config.validate()?;
        println!("config ok (hash {})", config.hash_of(&config)?);
        return Ok(());
    }
    let pipeline = Pipeline::new(config)?;
    match cli.command {
        Command::Generate => pipeline.generate(),
        Command::Filter => pipeline.filter(),
        Command::Triplets => pipeline.triplets(),
        Command::ExportTrain => pipeline.export_train(),
        Command::Retrieve => pipeline.retrieve(),
        Command::Rerank => pipeline.rerank(),
        Command::Evaluate { run } => pipeline.evaluate(run.as_deref()),
        Command::Ablate { sizes, keep } => pipeline.ablate(sizes, keep),
        Command::Pipeline => pipeline.run_all(),
        Command::ValidateConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ValidationError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
