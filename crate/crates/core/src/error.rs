use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is singular (zero pivot in column {column})")]
    SingularMatrix { column: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("model shape error: {0}")]
    ModelShape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("input {value} at plan entry ({row}, {col}) is outside the barrier domain ({lo}, {hi})")]
    BarrierDomain {
        row: usize,
        col: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("non-finite value in {0}")]
    Numerics(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Training(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
