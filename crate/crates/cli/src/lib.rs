//! Experiment pipeline: generate behavior logs, train the agent grid, select
//! per-agent checkpoints by validation WIS, evaluate on held-out episodes and
//! run the property suite.

pub mod charts;
pub mod check;
pub mod config;
pub mod evaluate;
pub mod generate;
pub mod layout;
pub mod train;

use std::fmt;
use std::path::{Path, PathBuf};

pub use check::{cmd_check, CheckReport, Fault, PropertyResult};
pub use config::ExperimentConfig;
pub use evaluate::{cmd_evaluate, CellValue, EvaluationSummary, SeedEvaluation};
pub use generate::{cmd_generate, split_episode_ids, Manifest};
pub use layout::Layout;
pub use train::{
    cmd_train, grid_cells, CellOutcome, CellSpec, Family, SeedSelection, TrainSummary,
};

/// Seed streams derived from each experiment seed.
pub mod streams {
    pub const ROLLOUT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const SAMPLING: u64 = 3;
    pub const BEHAVIOR_FIT: u64 = 4;
    pub const TRAIN: u64 = 5;
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Core(offrl::Error),
    MissingArtifacts(Vec<String>),
    PropertyFailure(Vec<String>),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::MissingArtifacts(list) => {
                write!(f, "missing artifacts:\n  {}", list.join("\n  "))
            }
            CliError::PropertyFailure(names) => {
                write!(f, "failed properties: {}", names.join(", "))
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<offrl::Error> for CliError {
    fn from(e: offrl::Error) -> Self {
        match e {
            offrl::Error::Config(m) => CliError::Config(m),
            other => CliError::Core(other),
        }
    }
}

/// Everything `all` produces.
pub struct RunSummary {
    pub manifests: Vec<Manifest>,
    pub train: TrainSummary,
    pub evaluation: EvaluationSummary,
}

pub fn cmd_all(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let manifests = cmd_generate(cfg)?;
    let train = cmd_train(cfg)?;
    let evaluation = cmd_evaluate(cfg)?;
    Ok(RunSummary {
        manifests,
        train,
        evaluation,
    })
}
