use std::fmt;
use std::path::PathBuf;

use regimekit_core::Error as CoreError;

/// Failure reading or writing an artifact.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}, column {col}: cannot parse {text:?} as a number")]
    Parse { row: usize, col: usize, text: String },
    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("input contains no data rows")]
    Empty,
    #[error("stream ended at byte {offset} inside a segment ({rows} of {expected} rows read)")]
    TruncatedSegment {
        offset: u64,
        rows: usize,
        expected: usize,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl IoError {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::File {
            path: path.into(),
            source,
        }
    }
}

/// Exit-code class of a failed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config,
    Data,
    Numerical,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Config => 2,
            ExitKind::Data => 3,
            ExitKind::Numerical => 4,
        }
    }

    pub fn of_core(e: &CoreError) -> Self {
        match e {
            CoreError::NumericalFailure { .. } | CoreError::NotPositiveDefinite => {
                ExitKind::Numerical
            }
            CoreError::InvalidArgument(_)
            | CoreError::UnknownKernel(_)
            | CoreError::EmptyPrototypes
            | CoreError::ClusterCount { .. } => ExitKind::Config,
            _ => ExitKind::Data,
        }
    }

    pub fn of_io(e: &IoError) -> Self {
        match e {
            IoError::Core(c) => Self::of_core(c),
            _ => ExitKind::Data,
        }
    }
}

/// A failure tagged with the stage it happened in.
#[derive(Debug)]
pub struct RunError {
    pub stage: &'static str,
    pub kind: ExitKind,
    pub message: String,
}

impl RunError {
    pub fn config(stage: &'static str, message: impl Into<String>) -> Self {
        RunError {
            stage,
            kind: ExitKind::Config,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.code()
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for RunError {}

/// Attaches a stage tag to core and IO results.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, RunError>;
}

impl<T> Stage<T> for Result<T, CoreError> {
    fn stage(self, stage: &'static str) -> Result<T, RunError> {
        self.map_err(|e| RunError {
            stage,
            kind: ExitKind::of_core(&e),
            message: e.to_string(),
        })
    }
}

impl<T> Stage<T> for Result<T, IoError> {
    fn stage(self, stage: &'static str) -> Result<T, RunError> {
        self.map_err(|e| RunError {
            stage,
            kind: ExitKind::of_io(&e),
            message: e.to_string(),
        })
    }
}
