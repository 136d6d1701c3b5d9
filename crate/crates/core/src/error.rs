use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    Sizing(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("n = {n} exceeds the exhaustive-search cap of {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the error is a violated numeric domain (bad parameter, non-PD
    /// covariance) rather than a sizing or I/O problem.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::OutOfRange { .. } | Error::NotPositiveDefinite | Error::Unsupported(_)
        )
    }

    pub fn is_cap(&self) -> bool {
        matches!(self, Error::CapExceeded { .. })
    }
}

pub(crate) fn check_range(
    name: &'static str,
    value: f64,
    ok: bool,
    range: &'static str,
) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::OutOfRange { name, value, range })
    }
}
