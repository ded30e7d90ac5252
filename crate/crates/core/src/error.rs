use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),
    #[error("invalid opinion: {0}")]
    InvalidOpinion(String),
    #[error("invalid Dirichlet parameters: {0}")]
    InvalidDirichlet(String),
    #[error("opinion with zero uncertainty has infinite Dirichlet strength")]
    InfiniteStrength,
    #[error("total conflict between opinions (1 - kappa = {0:e})")]
    TotalConflict(f64),
    #[error("argument {0} outside the domain of {1}")]
    Domain(f64, &'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: String,
        expected: String,
        found: String,
    },
    #[error("truncated payload in {path}: header needs {expected} bytes, file has {actual}")]
    Truncated {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("trailing bytes in {path}: header needs {expected} bytes, file has {actual}")]
    TrailingBytes {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("dimension overflow in {path}: {rows} x {dims}")]
    DimensionOverflow { path: String, rows: u64, dims: u64 },
    #[error("unsupported format version {found} in {path}")]
    Version { path: String, found: u32 },
    #[error("malformed data in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("view alignment: {0}")]
    Alignment(String),
    #[error("label {label} out of range for {num_classes} classes (sample {sample})")]
    LabelRange {
        sample: String,
        label: usize,
        num_classes: usize,
    },
    #[error("stratification: {0}")]
    Stratification(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::InfiniteStrength
                | Error::TotalConflict(_)
                | Error::Domain(..)
                | Error::InvalidEvidence(_)
                | Error::InvalidOpinion(_)
                | Error::InvalidDirichlet(_)
                | Error::UndefinedMetric(_)
        )
    }
}
