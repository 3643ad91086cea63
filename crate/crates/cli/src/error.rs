//! CLI error classification: exit code 1 for validation problems (bad flags
//! or input files), exit code 2 for internal invariant violations.

use primgrasp::anchors::AnchorError;
use primgrasp::grasp::GraspError;
use primgrasp::loss::LossError;
use primgrasp::primitives::{EncodeError, PrimitiveError};
use primgrasp::scene::SceneError;
use primgrasp::suppression::DetectionIoError;
use primgrasp::tensor::TensorError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or malformed/missing input files; exit code 1.
    Validation(String),
    /// A broken invariant inside the pipeline; exit code 2.
    Internal(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Internal(m) => write!(f, "internal invariant violation: {m}"),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<AnchorError> for CliError {
    fn from(e: AnchorError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<DetectionIoError> for CliError {
    fn from(e: DetectionIoError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<GraspError> for CliError {
    fn from(e: GraspError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::InvalidWeights => CliError::Validation(e.to_string()),
            LossError::NonFiniteLoss { .. } => CliError::Internal(e.to_string()),
        }
    }
}

impl From<PrimitiveError> for CliError {
    fn from(e: PrimitiveError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<EncodeError> for CliError {
    fn from(e: EncodeError) -> Self {
        CliError::Internal(e.to_string())
    }
}

/// Wraps a filesystem error with the path that caused it.
pub fn io_context(path: &std::path::Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Validation(format!("{}: {e}", path.display()))
}
