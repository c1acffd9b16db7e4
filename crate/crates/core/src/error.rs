use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("weight count mismatch: expected {expected}, got {actual}")]
    WeightCount { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(
    context: impl Into<String>,
    expected: impl std::fmt::Display,
    actual: impl std::fmt::Display,
) -> Error {
    Error::Shape {
        context: context.into(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
