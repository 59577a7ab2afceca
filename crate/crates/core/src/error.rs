use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the stratifold library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read directory '{path}': {source}")]
    UnreadableDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("label directory '{path}' does not exist")]
    MissingLabelDir { path: PathBuf },

    #[error("{path}:{line}: {kind}")]
    LabelParse {
        path: PathBuf,
        line: usize,
        kind: LineError,
    },

    #[error("nothing to stratify: the record set is empty")]
    EmptyRecordSet,

    #[error("class distribution is empty")]
    EmptyDistribution,

    #[error("class universes differ: {left:?} vs {right:?}")]
    ClassUniverseMismatch { left: Vec<u32>, right: Vec<u32> },

    #[error("k must be at least {min}, got {k}")]
    TooFewFolds { k: usize, min: usize },

    #[error("cannot split {n} image(s) into {k} folds")]
    MoreFoldsThanImages { k: usize, n: usize },

    #[error("label column '{column}' has negative value {value} for '{file_name}'")]
    NegativeLabel {
        file_name: String,
        column: String,
        value: f64,
    },

    #[error("label column '{column}' has non-finite value for '{file_name}'")]
    NonFiniteLabel { file_name: String, column: String },

    #[error("fold index {fold} out of range for k = {k}")]
    FoldOutOfRange { fold: usize, k: usize },

    #[error("fold assignment does not match the feature matrix: {0}")]
    CoverageMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("source file '{0}' does not exist")]
    MissingSource(PathBuf),

    #[error("path '{path}' is not under dataset root '{root}'")]
    OutsideRoot { path: PathBuf, root: PathBuf },

    #[error("i/o error on '{path}': {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to serialize: {0}")]
    Serialize(#[from] serde_json::Error),

    #[error("failed to write csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Reasons a single YOLO label line can be rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LineError {
    #[error("expected 5 fields, found {0}")]
    FieldCount(usize),
    #[error("invalid class id '{0}'")]
    ClassId(String),
    #[error("invalid number '{0}' in field '{1}'")]
    Number(String, &'static str),
    #[error("field '{field}' = {value} is outside {range}")]
    OutOfRange {
        field: &'static str,
        value: f64,
        range: &'static str,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
