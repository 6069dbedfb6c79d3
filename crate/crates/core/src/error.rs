use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("classification input must start with the CLS token")]
    MissingCls,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("shape mismatch for {name}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("gradient for {0} contains non-finite values")]
    NonFinite(String),
    #[error("canary plan: {0}")]
    Canary(String),
    #[error("privacy accounting: {0}")]
    Accounting(String),
    #[error("generation: {0}")]
    Generation(String),
    #[error("gazetteer: {0}")]
    Gazetteer(String),
    #[error("unknown entity type {0:?}")]
    UnknownEntityType(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Stable snake_case name of the variant, for machine-readable records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedLine { .. } => "malformed_line",
            Error::DuplicateId(_) => "duplicate_id",
            Error::EmptyCorpus => "empty_corpus",
            Error::Config(_) => "config",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::MissingCls => "missing_cls",
            Error::EmptyBatch => "empty_batch",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::Canary(_) => "canary",
            Error::Accounting(_) => "accounting",
            Error::Generation(_) => "generation",
            Error::Gazetteer(_) => "gazetteer",
            Error::UnknownEntityType(_) => "unknown_entity_type",
            Error::Checkpoint(_) => "checkpoint",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Toml(_) => "toml",
        }
    }
}
