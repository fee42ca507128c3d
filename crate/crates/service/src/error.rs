use serde::Serialize;

use crate::session::{Phase, LOOP_MESSAGE};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("{0}")]
    Validation(String),
    #[error("expected the {expected:?} phase, session is in {found:?}")]
    Sequence { expected: Phase, found: Phase },
    #[error("{}", LOOP_MESSAGE)]
    Loop,
    #[error("analytics are disabled for this session")]
    Policy,
    #[error("no session with id {0}")]
    NotFound(String),
    #[error("replay failed: {0}")]
    Replay(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

/// JSON error body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Validation(_) => "validation",
            SessionError::Sequence { .. } => "sequence",
            SessionError::Loop => "loop",
            SessionError::Policy => "policy",
            SessionError::NotFound(_) => "not_found",
            SessionError::Replay(_) => "replay",
            SessionError::Io(_) => "io",
            SessionError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            SessionError::Validation(_) => 400,
            SessionError::Policy => 403,
            SessionError::NotFound(_) => 404,
            SessionError::Sequence { .. } => 409,
            SessionError::Loop => 422,
            _ => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code().to_string(),
            message: self.to_string(),
        }
    }
}
