//! Evaluation: dataset loading, token F1, experiment runs and ablation
//! grids.

mod cache;
mod dataset;
mod experiment;
mod metric;

use thiserror::Error;

pub use crate::text::normalize_answer;
pub use cache::{cache_key, IndexCache};
pub use dataset::{load_dataset, parse_dataset, EvalRecord};
pub use experiment::{
    comparison_table, decomposition_stats, parse_report, run_ablation_grid, run_experiment,
    AblationOutput, BackendNames, DecompositionStats, ExperimentConfig, RecordResult, Report,
    ReportLine, ReportSummary,
};
pub use metric::{qa_f1, token_f1};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset line {line}: {reason}")]
    Dataset { line: usize, reason: String },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("record {record_id}: {message}")]
    Record { record_id: String, message: String },
    #[error("report: {0}")]
    Report(String),
}
