//! Error type shared by every stage of the harness.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}{}: {message}", col.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        row: usize,
        col: Option<usize>,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid binary cache: {0}")]
    Cache(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot build windows: {0}")]
    Window(String),

    #[error("no entry is selected by the mask")]
    EmptyMask,

    #[error("in-sample series of length {len} is too short for season {season}")]
    InsufficientInsample { len: usize, season: usize },

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid forecaster spec: {0}")]
    Spec(String),

    #[error("singular normal equations: {0} (try a positive ridge penalty)")]
    SingularSystem(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("out of memory allocating {0}")]
    OutOfMemory(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse error category, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Runtime,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Stage { source, .. } => source.class(),
            Error::Config(_) | Error::Spec(_) => ErrorClass::Usage,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorClass::Usage
            }
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::EmptyDataset
            | Error::Cache(_)
            | Error::Split(_)
            | Error::Window(_)
            | Error::Shape(_)
            | Error::EmptyMask
            | Error::InsufficientInsample { .. }
            | Error::InsufficientData(_)
            | Error::DegenerateScale(_)
            | Error::Checkpoint(_)
            | Error::Report(_) => ErrorClass::Data,
            Error::SingularSystem(_) | Error::Divergence { .. } | Error::OutOfMemory(_) => {
                ErrorClass::Runtime
            }
        }
    }
}

/// Attach a stage name to errors flowing out of a pipeline step.
pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
