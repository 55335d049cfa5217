use serde::{Deserialize, Serialize};
use shapval_core::review::SCHEMA_VERSION;

pub type StudyResult<T> = std::result::Result<T, StudyError>;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown bundle {0}")]
    UnknownBundle(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Conflict(String),
    #[error("session is open in another tab")]
    Locked,
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("injected fault after append")]
    Fault,
    #[error("storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Core(#[from] shapval_core::Error),
}

impl StudyError {
    pub fn kind(&self) -> &'static str {
        match self {
            StudyError::UnknownSession(_) | StudyError::UnknownBundle(_) => "not_found",
            StudyError::Validation(_) => "validation",
            StudyError::Conflict(_) => "conflict",
            StudyError::Locked => "locked",
            StudyError::MissingCheckpoint(_) => "missing_checkpoint",
            StudyError::Fault => "fault",
            StudyError::Storage(_) => "storage",
            StudyError::Core(shapval_core::Error::Checkpoint(_)) => "missing_checkpoint",
            StudyError::Core(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self.kind() {
            "not_found" => 404,
            "validation" => 422,
            "conflict" | "locked" => 409,
            "missing_checkpoint" => 503,
            _ => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            v: SCHEMA_VERSION.to_string(),
            error: ErrorDetail {
                kind: self.kind().to_string(),
                message: self.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub v: String,
    pub error: ErrorDetail,
}
