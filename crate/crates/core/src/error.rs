use thiserror::Error;

#[derive(Debug, Error)]
pub enum VfError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{0}")]
    Format(String),

    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint variant mismatch: {0}")]
    VariantMismatch(String),

    #[error("{0}")]
    Data(String),
}
