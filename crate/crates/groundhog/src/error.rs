//! Crate-wide error type.

/// Errors produced by mask algebra, model evaluation, data generation and IO.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two rasters (or a raster and a parameter block) disagree on size.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A value is outside its documented domain (score out of [0,1], bad box, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation that requires at least one set pixel received an empty mask.
    #[error("empty mask: {0}")]
    EmptyMask(String),

    /// A pooling mask with zero total weight; pooling over it is undefined.
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    /// A corpus line, scene file or checkpoint violates its schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A word is not part of the template vocabulary.
    #[error("out-of-vocabulary word: {0}")]
    Vocabulary(String),

    /// Non-finite values appeared where they must not (training aborts here).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
