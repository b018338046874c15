use std::path::PathBuf;

use thiserror::Error;

/// Every failure the pipeline can report. Variants are kept distinct so the
/// CLI and the evaluation harness can record the cause of each failed pair.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask has no foreground pixels")]
    DegenerateMask,

    #[error("singular transform (determinant {det:e})")]
    SingularTransform { det: f64 },

    #[error("degenerate control points: {0}")]
    DegenerateControlPoints(String),

    #[error("degenerate correspondences: {0}")]
    DegenerateCorrespondences(String),

    #[error("no consensus: best model had {best} inliers, {required} required")]
    NoConsensus { best: usize, required: usize },

    #[error("ill-posed TPS estimate: normal equations are rank deficient, raise the regularizer")]
    IllPosed,

    #[error("invalid scene descriptor: {0}")]
    InvalidDescriptor(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate range: series is constant")]
    DegenerateRange,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path} line {line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Short machine-friendly tag for the failure class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DegenerateMask => "degenerate-mask",
            Error::SingularTransform { .. } => "singular-transform",
            Error::DegenerateControlPoints(_) => "degenerate-control-points",
            Error::DegenerateCorrespondences(_) => "degenerate-correspondences",
            Error::NoConsensus { .. } => "no-consensus",
            Error::IllPosed => "ill-posed",
            Error::InvalidDescriptor(_) => "invalid-descriptor",
            Error::UndefinedCorrelation(_) => "undefined-correlation",
            Error::DegenerateRange => "degenerate-range",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Manifest { .. } => "manifest",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
