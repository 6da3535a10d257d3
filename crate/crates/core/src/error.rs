use std::path::PathBuf;

use thiserror::Error;

use crate::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize a zero-length vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("triplet index {index} out of range for {len} embeddings")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("cannot compute the centroid of an identity without samples")]
    EmptyIdentity,
    #[error("batch has no usable anchor/positive/negative combination")]
    DegenerateBatch,
    #[error("no {0} embeddings supplied")]
    EmptyModality(&'static str),
    #[error("no source centroid for identity {0}")]
    MissingCentroid(Label),
    #[error("identity {0} has no cluster assignment")]
    UnmappedIdentity(Label),
    #[error("frame sequence is empty")]
    EmptySequence,
    #[error("parameter shape mismatch in block `{block}`: expected {expected}, found {found}")]
    ShapeMismatch { block: &'static str, expected: usize, found: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("score list is empty")]
    EmptyScores,
    #[error("partition is empty or contains an empty cluster")]
    EmptyPartition,
    #[error("retrieval gallery must hold exactly {expected} items, found {found}")]
    BadGallerySize { expected: usize, found: usize },
    #[error("cut-off K={k} outside 1..={max}")]
    BadCutoff { k: usize, max: usize },
    #[error("{labels} labels supplied for a trace over {leaves} leaves")]
    LabelMismatch { labels: usize, leaves: usize },
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("invalid configuration: {key}: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error("non-finite loss encountered at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("need at least 2 identities to split, found {0}")]
    TooFewIdentities(usize),
    #[error("line {line}: {message}")]
    SchemaError { line: usize, message: String },
    #[error("line {line}: frames have inconsistent dimensions ({expected} vs {found})")]
    InconsistentFrameDim { line: usize, expected: usize, found: usize },
    #[error("dataset invariant violated: {0}")]
    InvalidDataset(String),
    #[error("unsupported checkpoint format version `{found}` (expected `{expected}`)")]
    FormatVersionMismatch { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    FormatError(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by malformed or missing input data rather than
    /// bad configuration or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::SchemaError { .. }
                | Error::InconsistentFrameDim { .. }
                | Error::InvalidDataset(_)
                | Error::FormatVersionMismatch { .. }
                | Error::FormatError(_)
                | Error::InsufficientData(_)
                | Error::TooFewIdentities(_)
                | Error::EmptyScores
                | Error::DegenerateBatch
                | Error::EmptyModality(_)
                | Error::MissingCentroid(_)
                | Error::UnmappedIdentity(_)
                | Error::TooFewPoints { .. }
        )
    }
}
