use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: I/O failure: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic bytes at offset 0 (expected \"FEAT\", found {found:?})")]
    MagicMismatch { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported format version {version} at offset 4")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: {extra} unexpected trailing bytes after offset {expected}")]
    TrailingData {
        path: PathBuf,
        expected: u64,
        extra: u64,
    },

    #[error("{path}: sidecar has {found} rows but the feature file has {expected}")]
    LabelCountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: malformed sidecar: {message}")]
    BadSidecar { path: PathBuf, message: String },

    #[error("{path}: non-finite value at row {row}, column {col} (byte offset {offset})")]
    NonFiniteFeature {
        path: PathBuf,
        row: usize,
        col: usize,
        offset: u64,
    },

    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),

    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),

    #[error("row {row} has (near-)zero norm")]
    ZeroVector { row: usize },

    #[error("k = {k} out of range for {n} items")]
    KOutOfRange { k: usize, n: usize },

    #[error("dimension mismatch: query d = {query}, gallery d = {gallery}")]
    DimensionMismatch { query: usize, gallery: usize },

    #[error("node {row} has no neighbours")]
    EmptyRow { row: usize },

    #[error("negative edge weight {weight} between {from} and {to} with fractional alpha {alpha}")]
    NegativeWeightWithFractionalAlpha {
        from: usize,
        to: usize,
        weight: f64,
        alpha: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("both Jaccard operands are empty (rows {query}, {gallery})")]
    ZeroDenominator { query: usize, gallery: usize },

    #[error("query {query} has no valid positives in the gallery")]
    NoValidPositives { query: usize },

    #[error("{path}: malformed ranking file: {message}")]
    BadRanking { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
