//! Experiment harnesses and the statistics used to summarise them.

mod bc;
mod multitask;
mod probe;
pub mod stats;
mod study;

use thiserror::Error;

pub use bc::{
    bc_rows, train_bc_policy, Augmentation, BcConfig, Controller, InputEncoder, PolicyKind, PolicyModel,
    TrainedPolicy,
};
pub use multitask::{run_multitask, MultiTaskConfig, MultiTaskResult, TaskOutcome, TaskSpec};
pub use probe::{progression_targets, train_progression_probe, ProbeConfig, ProbeResult};
pub use stats::{
    iqm, paired_t_test, pearson, student_t_cdf, wilcoxon_signed_rank, wilcoxon_signed_rank_normal, CorrelationResult, PairedTest,
    PairedTestResult,
};
pub use study::*;

use crate::metrics::MetricsError;
use crate::neural::NeuralError;
use crate::synthworld::WorldError;
use crate::trajstore::TrajError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("zero variance")]
    DegenerateVariance,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

impl AnalysisError {
    pub fn kind(&self) -> &'static str {
        match self {
            AnalysisError::EmptyInput => "EmptyInput",
            AnalysisError::LengthMismatch(..) => "LengthMismatch",
            AnalysisError::TooFewSamples { .. } => "TooFewSamples",
            AnalysisError::DegenerateVariance => "DegenerateVariance",
            AnalysisError::AllZeroDifferences => "AllZeroDifferences",
            AnalysisError::DimensionMismatch(_) => "DimensionMismatch",
            AnalysisError::InvalidConfig(_) => "InvalidConfig",
            AnalysisError::Traj(e) => e.kind(),
            AnalysisError::Metrics(e) => e.kind(),
            AnalysisError::Neural(e) => e.kind(),
            AnalysisError::World(e) => e.kind(),
            AnalysisError::Io(_) => "IoFailure",
            AnalysisError::Manifest(_) => "MalformedManifest",
        }
    }
}
