use thiserror::Error;

/// Errors raised by model construction, ingestion and fitting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("parameter not identified: {0}")]
    Unidentified(String),

    #[error("csv row {row}, column `{column}`: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
