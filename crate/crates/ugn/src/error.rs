use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum UgnError {
    /// Incompatible tensor or matrix shapes.
    #[error("shape mismatch: {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A dimension is invalid for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid argument outside of shapes (ranges, flags, counts).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Bad configuration detected at model or run build time.
    #[error("configuration error: {0}")]
    Config(String),

    /// Textual input could not be parsed.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Graph data violates an invariant.
    #[error("graph error: {0}")]
    Graph(String),

    /// Sampling could not satisfy the request.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Autograd misuse (non-scalar backward, double backward, empty mask, ...).
    #[error("autograd error: {0}")]
    Autograd(String),

    /// Training aborted (NaN loss, checkpoint incompatibility, ...).
    #[error("training error: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, UgnError>;

impl UgnError {
    pub fn shape(context: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        UgnError::ShapeMismatch {
            context: context.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
