use voxdn_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// Malformed file contents (volume or checkpoint): bad magic, version,
    /// lengths that do not add up, undecodable headers.
    #[error("{0}")]
    Format(String),

    /// Invalid user-supplied configuration or operands: bad specs, shape
    /// mismatches between volumes, out-of-range parameters.
    #[error("{0}")]
    Config(String),
}

impl CoreError {
    pub fn format(msg: impl Into<String>) -> Self {
        CoreError::Format(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }
}
