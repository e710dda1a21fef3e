use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::Shape;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch} of {stage}")]
    NonFiniteLoss { stage: &'static str, epoch: usize },

    #[error("{stage} diverged at iteration {iteration}: loss {loss:.6e} exceeds 10x the initial {initial:.6e}")]
    Diverged {
        stage: &'static str,
        iteration: usize,
        loss: f64,
        initial: f64,
    },

    #[error("non-finite activation in {stage} block {block}")]
    NonFiniteActivation { stage: String, block: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing upstream artifact {path}: run `padsharp {command}` first")]
    MissingUpstream { path: PathBuf, command: &'static str },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Whether the error stems from a numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient(_)
                | Error::NonFiniteLoss { .. }
                | Error::Diverged { .. }
                | Error::NonFiniteActivation { .. }
        )
    }
}
