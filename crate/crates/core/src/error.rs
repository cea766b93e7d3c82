use std::path::PathBuf;

use crate::corpus::Polarity;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("class {class} has {available} documents, {requested} requested")]
    InsufficientClass {
        class: Polarity,
        available: usize,
        requested: usize,
    },

    #[error("{available} documents cannot be split into {folds} folds")]
    TooFewDocs { available: usize, folds: usize },

    #[error("corpus too small for size {size}: {available} documents per class available")]
    UnreachableSize { size: usize, available: usize },

    #[error("class {0} has no training examples")]
    EmptyClass(Polarity),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("vocabulary is empty after dropping words below min_count={min_count}")]
    EmptyVocabulary { min_count: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite feature value in row {row}")]
    NonFinite { row: usize },

    #[error("cosine is undefined for a zero vector")]
    ZeroVector,

    #[error("logistic regression did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    LrNotConverged { iterations: usize, grad_norm: f64 },

    #[error("svm dual solver did not converge after {sweeps} sweeps (duality gap {gap:.3e})")]
    SvmNotConverged { sweeps: usize, gap: f64 },

    #[error("document has no in-vocabulary tokens")]
    NoKnownTokens,

    #[error("frame {rows}x{cols} is not divisible by pool {pool_rows}x{pool_cols}")]
    IndivisiblePool {
        rows: usize,
        cols: usize,
        pool_rows: usize,
        pool_cols: usize,
    },

    #[error("invalid network architecture: {0}")]
    Architecture(String),

    #[error(
        "training diverged at epoch {epoch} (loss is not finite); try a smaller learning rate"
    )]
    Diverged { epoch: usize },

    #[error("cannot vote on an empty prediction vector")]
    EmptyVote,

    #[error("provenance violation: {0}")]
    Provenance(String),

    #[error("base classifier mismatch: {0}")]
    BaseMismatch(String),

    #[error("unknown model name `{0}`")]
    UnknownModel(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
