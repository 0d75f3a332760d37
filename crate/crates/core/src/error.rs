use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transformation code {0} is not in 1..=7")]
    UnknownCode(u8),

    #[error("log transform requires strictly positive values, found {value} at position {index}")]
    NonPositiveForLog { index: usize, value: f64 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("transformation code `{raw}` for column `{column}` is not an integer")]
    NonIntegerTcode { column: String, raw: String },

    #[error("panel has no usable columns or rows: {0}")]
    EmptyPanel(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("every column has zero variance")]
    ZeroVarianceColumn,

    #[error("design matrix is rank deficient (column {column})")]
    RankDeficient { column: usize },

    #[error("too few rows: need at least {needed}, have {available}")]
    TooFewRows { needed: usize, available: usize },

    #[error("requested {k} components but at most {max} are available")]
    KTooLarge { k: usize, max: usize },

    #[error("input contains non-finite values")]
    NonFiniteInput,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("lasso did not converge after {sweeps} sweeps (max change {max_change:e})")]
    NoConvergence { sweeps: usize, max_change: f64 },

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
