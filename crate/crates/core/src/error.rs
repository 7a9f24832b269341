use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is numerically singular (condition number {condition:.3e}); check model identification: {context}")]
    NearSingular { condition: f64, context: String },

    #[error("degenerate censoring pattern: orthant probability underflowed ({0:.3e})")]
    DegeneratePattern(f64),

    #[error("data error: {0}")]
    Data(String),

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite log-likelihood at the starting values")]
    NonFiniteStart,

    #[error("information matrix is singular; parameters are not identified{0}")]
    SingularInformation(String),

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_row(self, row: usize) -> Error {
        match self {
            e @ Error::Row { .. } => e,
            e => Error::Row {
                row,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by malformed input data rather than numerics.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Data(_) | Error::Csv(_) | Error::Io(_) => true,
            Error::Row { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}
