use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    /// Incompatible extents between operands, or an op producing an empty output.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An operand has the wrong number of elements or rank for the op.
    #[error("shape error: {0}")]
    Shape(String),
    /// The requested gradient is not defined by the recorded graph.
    #[error("graph error: {0}")]
    Graph(String),
    #[error("state error: {0}")]
    State(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
