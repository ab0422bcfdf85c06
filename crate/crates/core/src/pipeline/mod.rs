//! End-to-end commands: train a head, evaluate or predict with one or two
//! members, and sweep post-processing parameters.
//!
//! The decision chain is fixed: member outputs, blend, smooth, discretize
//! (argmax, Other gate, or thresholds), metric.

mod chain;
mod commands;
mod config;
mod predictions;

use std::path::PathBuf;

use thiserror::Error;

use crate::dataio::DataError;
use crate::heads::HeadError;
use crate::metrics::MetricError;
use crate::postprocess::PostError;

pub use chain::{
    align_external, discretize_expr, model_member, Decisions, LabelIndex, MemberSet, MetricBlock,
    Outputs,
};
pub use commands::{
    cmd_evaluate, cmd_predict, cmd_sweep, cmd_synth, cmd_train, evaluate_predictions, sweep_csv,
    Curve, EvalReport, SweepParam, SweepPoint, TrainOutcome,
};
pub use config::{
    ExprMethod, Paths, PipelineConfig, PostProcessConfig, ThresholdMode, TrainSettings,
};
pub use predictions::{
    read_predictions, save_predictions, write_predictions, PredictionFile, PredictionHeader,
    PREDICTION_FORMAT_VERSION,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Post(#[from] PostError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    PredictionFile {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Empty(String),
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for data problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Head(HeadError::Config(_) | HeadError::WrongHead { .. }) => 2,
            PipelineError::Post(
                PostError::BlendWeight(_) | PostError::GridStep(_) | PostError::Threshold(_),
            ) => 2,
            PipelineError::Data(DataError::Argument(_)) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
