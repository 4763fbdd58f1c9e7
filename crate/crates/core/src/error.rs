use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range for {n} observations")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("matrix not positive definite after jitter sequence {attempted:?}")]
    NotPositiveDefinite { attempted: Vec<f64> },

    #[error("no valid split exists for any leaf")]
    NoValidSplit,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("tree snapshots were not retained by this fit")]
    MissingSnapshots,

    #[error("unsupported location type: {0}")]
    UnsupportedLocations(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NotPositiveDefinite { .. } | Error::NoValidSplit)
    }
}
