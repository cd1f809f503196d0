use std::fmt;

/// Errors from tensor construction, graph ops, and the optimizer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TensorError {
    /// Constructor data length does not match the shape product.
    DataLength { expected: usize, got: usize },
    /// Two operands have incompatible shapes for the named op.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An operand violates a structural precondition of the named op.
    BadOperand { op: &'static str, detail: String },
    /// backward/grad was asked to differentiate a non-scalar.
    NotScalar { shape: Vec<usize> },
    /// A `Var` from one graph was used with another graph.
    GraphMismatch,
    /// The differentiation target is not reachable from the scalar.
    Unreachable,
    /// Optimizer was handed a parameter set of the wrong length.
    ParamCount { expected: usize, got: usize },
    /// A gradient entry required by the caller is absent.
    MissingGradient { index: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch {left:?} vs {right:?}")
            }
            TensorError::BadOperand { op, detail } => write!(f, "{op}: {detail}"),
            TensorError::NotScalar { shape } => {
                write!(f, "expected a scalar (one element), got shape {shape:?}")
            }
            TensorError::GraphMismatch => write!(f, "variable belongs to a different graph"),
            TensorError::Unreachable => {
                write!(f, "target is not reachable from the scalar being differentiated")
            }
            TensorError::ParamCount { expected, got } => {
                write!(f, "expected {expected} parameter tensors, got {got}")
            }
            TensorError::MissingGradient { index } => {
                write!(f, "no gradient entry for leaf {index}")
            }
        }
    }
}

impl std::error::Error for TensorError {}
