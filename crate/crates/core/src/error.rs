use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice size: {0}")]
    InvalidSize(String),
    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("spin value {0} is not +1 or -1")]
    InvalidSpin(i64),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("lattice too large for exact enumeration: n = {n}, limit {limit}")]
    TooLargeForEnumeration { n: usize, limit: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("format error: {0}")]
    Format(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSize(_) => "invalid_size",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::InvalidSpin(_) => "invalid_spin",
            Error::InvalidField(_) => "invalid_field",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::TooLargeForEnumeration { .. } => "too_large",
            Error::Empty(_) => "empty",
            Error::Divergence { .. } => "divergence",
            Error::Format(_) => "format",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
