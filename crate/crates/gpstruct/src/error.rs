use std::path::PathBuf;

/// Crate-wide error type.
///
/// Each variant maps onto a short machine-parsable code (see [`Error::code`])
/// used by the CLI for its single-line failure output.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("no sequences in input")]
    NoSequences,

    #[error("empty sequence")]
    EmptySequence,

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("kernel matrix factorization failed ({0})")]
    Factorization(String),

    #[error("elliptical slice bracket shrank {0} times without acceptance")]
    SliceShrinkCap(u32),

    #[error("store format mismatch: {0}")]
    StoreFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("path not readable: {}", .0.display())]
    PathNotReadable(PathBuf),

    #[error("alignment mismatch: {0}")]
    Alignment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code for machine-parsable CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::NoSequences => "no-sequences",
            Error::EmptySequence => "empty-sequence",
            Error::DimMismatch(_) => "dim-mismatch",
            Error::Invalid(_) => "invalid-value",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Factorization(_) => "factorization",
            Error::SliceShrinkCap(_) => "slice-shrink-cap",
            Error::StoreFormat(_) => "store-format",
            Error::Config(_) => "config",
            Error::PathNotReadable(_) => "path-not-readable",
            Error::Alignment(_) => "alignment",
            Error::Io(_) => "io",
            Error::Serde(_) => "serde",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
