use std::path::PathBuf;

use thiserror::Error;

use crate::correlator::StageInfo;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed time-tag file: {0}")]
    Format(String),

    #[error("truncated time-tag file: record at byte offset {offset} is incomplete")]
    Truncated { offset: u64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("no correlation peak found at stage {stage} (significance {significance:.2} < {threshold})")]
    NoPeak {
        stage: usize,
        significance: f64,
        threshold: f64,
        stages: Vec<StageInfo>,
    },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("density-matrix reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("synchronization protocol error: {0}")]
    Protocol(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::Argument(_) => "argument",
            Error::NoPeak { .. } => "no_peak",
            Error::Fit(_) => "fit",
            Error::Reconstruction(_) => "reconstruction",
            Error::Protocol(_) => "protocol",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
        }
    }

    /// True for failures of the analysis itself (no peak, non-convergence),
    /// as opposed to bad input or configuration.
    pub fn is_analysis_failure(&self) -> bool {
        matches!(
            self,
            Error::NoPeak { .. } | Error::Fit(_) | Error::Reconstruction(_) | Error::Protocol(_)
        )
    }
}
