use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("acceptance violation: {0}")]
    Violation(String),
    #[error(transparent)]
    Continual(#[from] sketchogd::continual::ContinualError),
    #[error(transparent)]
    Bounds(#[from] sketchogd::metric_bounds::BoundError),
    #[error(transparent)]
    Linalg(#[from] sketchogd::linalg::LinalgError),
    #[error(transparent)]
    Model(#[from] sketchogd::model::ModelError),
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }

    /// 1 usage/config, 2 data, 3 acceptance violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Continual(_) | BenchError::Bounds(_) => 1,
            BenchError::Data(_) | BenchError::Io { .. } | BenchError::Linalg(_) | BenchError::Model(_) => 2,
            BenchError::Violation(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;
