//! Stage-per-command pipeline over the `reviewlens-core` library.
//!
//! Each command reads its upstream artifacts from the output directory and
//! writes its own, so stages can be re-run independently.

pub mod artifact;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use reviewlens_core::assignment::AssignmentError;
use reviewlens_core::corpus::CorpusError;
use reviewlens_core::evaluation::EvaluationError;
use reviewlens_core::extraction::ExtractionError;
use reviewlens_core::gateway::{GatewayError, TemplateError};
use reviewlens_core::suggestion::SuggestionError;

pub use config::{BackendKind, PipelineConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("invalid override {expr:?}: {message}")]
    Override { expr: String, message: String },
    #[error("config setting {0} is required")]
    MissingSetting(&'static str),
    #[error("path not found: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("missing {}; run {command} first", path.display())]
    MissingPrerequisite {
        path: PathBuf,
        command: &'static str,
    },
    #[error("{}: line {line}: {message}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("checkpoint {} was produced from different inputs; rerun without --resume", .0.display())]
    StaleCheckpoint(PathBuf),
    #[error("backend: {0}")]
    Backend(String),
    #[error("feature {0:?} is not in the catalog")]
    UnknownFeature(String),
    #[error("review {0:?} is not in the corpus")]
    UnknownReview(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Suggestion(#[from] SuggestionError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Extraction used every batch without the top-k settling.
    NotConverged,
    /// Extraction stopped early on request; resume later.
    Stopped,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Done | Outcome::Stopped => 0,
            Outcome::NotConverged => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "reviewlens",
    version,
    about = "Mine app-review features and competitor-grounded suggestions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline config file.
    #[arg(long, short, default_value = "reviewlens.toml")]
    pub config: PathBuf,
    /// Artifact directory; overrides paths.out_dir.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides backend.kind.
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Override any config key, e.g. `--set extraction.k=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the feature catalog batch by batch until it converges.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoints in the output directory.
        #[arg(long)]
        resume: bool,
        /// Stop after this batch index.
        #[arg(long)]
        max_batches: Option<usize>,
        /// Compare top-k feature sets without regard to order.
        #[arg(long)]
        converge_unordered: bool,
    },
    /// Assign one catalog feature to every review.
    Assign {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        chunk_size: Option<usize>,
    },
    /// Score features by negative share and rank complaints.
    Rank {
        #[command(flatten)]
        common: Common,
        /// Only this feature.
        #[arg(long)]
        feature: Option<String>,
        #[arg(long)]
        top_features: Option<usize>,
        #[arg(long)]
        top_complaints: Option<usize>,
        /// Apps to analyse (repeatable); default every app.
        #[arg(long = "target-app")]
        target_apps: Vec<String>,
    },
    /// Generate suggestions for the ranked complaints.
    Suggest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sample_size: Option<usize>,
        #[arg(long)]
        n_suggestions: Option<usize>,
        /// Skip complaints with no earlier competitor praise.
        #[arg(long)]
        allow_empty_history: bool,
    },
    /// Propose release-note matches and compute the implementation rate.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Human-confirmed match labels; overrides paths.match_labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Extract { common, .. }
            | Command::Assign { common, .. }
            | Command::Rank { common, .. }
            | Command::Suggest { common, .. }
            | Command::Evaluate { common, .. } => common,
        }
    }
}

/// Loads the config, applies this command's flags and runs it.
pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let common = cli.command.common();
    let mut cfg = PipelineConfig::load(&common.config, &common.overrides)?;
    if let Some(dir) = &common.out_dir {
        cfg.paths.out_dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(kind) = common.backend {
        cfg.backend.kind = kind;
    }
    match &cli.command {
        Command::Extract {
            converge_unordered, ..
        } => cfg.extraction.converge_unordered |= converge_unordered,
        Command::Assign { chunk_size, .. } => {
            if let Some(c) = chunk_size {
                cfg.assignment.chunk_size = *c;
            }
        }
        Command::Rank {
            feature,
            top_features,
            top_complaints,
            target_apps,
            ..
        } => {
            let s = &mut cfg.suggestion;
            if feature.is_some() {
                s.feature = feature.clone();
            }
            if let Some(n) = top_features {
                s.top_features = *n;
            }
            if let Some(n) = top_complaints {
                s.top_complaints = *n;
            }
            if !target_apps.is_empty() {
                s.target_apps = target_apps.clone();
            }
        }
        Command::Suggest {
            sample_size,
            n_suggestions,
            allow_empty_history,
            ..
        } => {
            let s = &mut cfg.suggestion;
            if let Some(n) = sample_size {
                s.sample_size = *n;
            }
            if let Some(n) = n_suggestions {
                s.n_suggestions = *n;
            }
            s.allow_empty_history |= allow_empty_history;
        }
        Command::Evaluate {
            labels, threshold, ..
        } => {
            if labels.is_some() {
                cfg.paths.match_labels = labels.clone();
            }
            if let Some(t) = threshold {
                cfg.evaluation.match_threshold = *t;
            }
        }
    }
    cfg.check_paths()?;

    let env = commands::Env::new(cfg)?;
    match cli.command {
        Command::Extract {
            resume,
            max_batches,
            ..
        } => commands::extract::run(&env, resume, max_batches),
        Command::Assign { .. } => commands::assign::run(&env),
        Command::Rank { .. } => commands::rank::run(&env),
        Command::Suggest { .. } => commands::suggest::run(&env),
        Command::Evaluate { .. } => commands::evaluate::run(&env),
    }
}
