//! Error metrics, result tables, run configuration and the benchmark driver.

mod benchmark;
mod config;
mod gradcheck;
mod metrics;
mod report;

use thiserror::Error;

pub use benchmark::{build_pairs, register_pairs, run_benchmark, train_on, BenchmarkOutput};
pub use gradcheck::{gradcheck, GradcheckSpec};
pub use config::{DatasetKind, Method, RunConfig, TestShapes, CONFIG_KEYS};
pub use metrics::{
    pair_rotation_mae, rotation_errors, rotation_residuals, translation_errors, translation_residuals,
    wrap_degrees, ErrorStats, MetricsRow, MetricsTable, RegistrationResult,
};
pub use report::{emit_report, render_csv, render_markdown, render_pair_csv, ReportFormat, METRIC_COLUMNS};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] crate::dataio::DataError),
    #[error(transparent)]
    Optim(#[from] crate::optimizer::OptimError),
    #[error(transparent)]
    Baseline(#[from] crate::baselines::BaselineError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Loss(#[from] crate::loss::LossError),
}

pub type Result<T> = std::result::Result<T, EvalError>;
