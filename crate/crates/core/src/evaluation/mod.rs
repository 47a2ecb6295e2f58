//! Retrieval quality: precision@k, R-precision, mean ± sample std over
//! queries, and the backend × measure evaluation grid.

mod grid;
mod metrics;
mod report;

use thiserror::Error;

use crate::ErrorCode;

pub use grid::{run_grid, run_grid_indexed, GridBackend, GridInputs};
pub use metrics::{aggregate_mean_std, is_relevant, precision_at_k, r_precision, GroundTruth, MeanStd};
pub use report::{
    emit_report, format_mean_std, round_half_up, AggregateRow, CellFailure, EvaluationReport, MetricsRow,
    ReportFormat,
};

/// Ranks at which precision is reported.
pub const PRECISION_CUTOFFS: [usize; 3] = [3, 10, 25];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("k = {k} exceeds ranked list length {len}")]
    KTooLarge { k: usize, len: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("document `{0}` has no ground-truth labels")]
    UnlabeledDocument(String),
    #[error("query `{0}` has no relevant documents")]
    NoRelevantDocuments(String),
    #[error("ranked list of {len} entries is shorter than R = {r}")]
    RankedListTooShort { r: usize, len: usize },
    #[error("no values to aggregate")]
    EmptyInput,
    #[error("invalid evaluation grid: {0}")]
    InvalidGrid(String),
    #[error("report has no rows")]
    EmptyReport,
}

impl ErrorCode for EvalError {
    fn code(&self) -> &'static str {
        match self {
            EvalError::KTooLarge { .. } => "KTooLarge",
            EvalError::ZeroK => "InvalidK",
            EvalError::UnlabeledDocument(_) => "UnlabeledDocument",
            EvalError::NoRelevantDocuments(_) => "NoRelevantDocuments",
            EvalError::RankedListTooShort { .. } => "RankedListTooShort",
            EvalError::EmptyInput => "EmptyInput",
            EvalError::InvalidGrid(_) => "InvalidGrid",
            EvalError::EmptyReport => "EmptyReport",
        }
    }
}
