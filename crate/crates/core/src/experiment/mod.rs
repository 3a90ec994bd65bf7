//! Experiment runner: the six-method comparison, guarantee checks and
//! report merging behind the command-line interface.

mod config;
mod guarantees;
mod report;
mod run;

pub use config::{ExperimentConfig, Method, SelectionScope};
pub use guarantees::{check_guarantees, GuaranteeConfig, GuaranteeMethod, GuaranteeSummary};
pub use report::{merge_reports, read_artifact, ArtifactSummary};
pub use run::{
    run_experiment, tune_hyperparameters, write_artifact, MemberDiagnostics, MethodOutcome,
    RepeatFailure, RepeatOutcome, RunArtifact, StageTiming, TuningGrid,
};

use crate::conformal::ConformalError;
use crate::data::DataError;
use crate::evaluation::EvalError;
use crate::mlp::MlpError;
use crate::training_aware::TrainingError;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("artifact {path}: {message}")]
    Artifact { path: String, message: String },
    #[error("incompatible artifacts: {0}")]
    Incompatible(String),
    #[error("precondition: {0}")]
    Precondition(String),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "config",
            ExperimentError::Io { .. } => "io",
            ExperimentError::Data(_) => "data",
            ExperimentError::Mlp(_) => "model",
            ExperimentError::Conformal(_) => "conformal",
            ExperimentError::Training(_) => "training",
            ExperimentError::Eval(_) => "evaluation",
            ExperimentError::Artifact { .. } => "artifact",
            ExperimentError::Incompatible(_) => "incompatible",
            ExperimentError::Precondition(_) => "precondition",
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;
