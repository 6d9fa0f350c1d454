use fewsim_core::CoreError;
use thiserror::Error;

pub type Result<T, E = MiddlewareError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MiddlewareError {
    #[error("invalid case configuration: {0}")]
    InvalidConfig(String),

    #[error("case `{0}` already exists")]
    DuplicateCase(String),

    #[error("unknown case `{0}`")]
    UnknownCase(String),

    #[error("case `{0}` is still running")]
    CaseBusy(String),

    #[error("{0} not found")]
    NotFound(String),

    #[error("{0}")]
    BadRequest(String),

    #[error("store i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt store document {path}: {source}")]
    Corrupt {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by callers that map errors onto protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Invalid,
    NotFound,
    Conflict,
    Internal,
}

impl MiddlewareError {
    pub fn class(&self) -> ErrorClass {
        match self {
            MiddlewareError::InvalidConfig(_) | MiddlewareError::BadRequest(_) => ErrorClass::Invalid,
            MiddlewareError::UnknownCase(_) | MiddlewareError::NotFound(_) => ErrorClass::NotFound,
            MiddlewareError::DuplicateCase(_) | MiddlewareError::CaseBusy(_) => ErrorClass::Conflict,
            MiddlewareError::Core(e) => match e {
                CoreError::BranchNotFound { .. } | CoreError::Unknown { .. } => ErrorClass::NotFound,
                CoreError::InvalidPath(_)
                | CoreError::InvalidScenario(_)
                | CoreError::YearOutsideHorizon { .. }
                | CoreError::UnknownStrategy { .. } => ErrorClass::Invalid,
                _ => ErrorClass::Internal,
            },
            _ => ErrorClass::Internal,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            MiddlewareError::InvalidConfig(_) => "invalid_config",
            MiddlewareError::DuplicateCase(_) => "duplicate_case",
            MiddlewareError::UnknownCase(_) => "unknown_case",
            MiddlewareError::CaseBusy(_) => "case_busy",
            MiddlewareError::NotFound(_) => "not_found",
            MiddlewareError::BadRequest(_) => "bad_request",
            MiddlewareError::Io { .. } | MiddlewareError::Corrupt { .. } | MiddlewareError::Csv(_) => "store_error",
            MiddlewareError::Core(e) => match e {
                CoreError::BranchNotFound { .. } => "branch_not_found",
                CoreError::InvalidPath(_) => "invalid_path",
                CoreError::InvalidScenario(_) => "invalid_scenario",
                CoreError::YearOutsideHorizon { .. } => "year_outside_horizon",
                CoreError::Unknown { .. } => "not_found",
                CoreError::UnknownStrategy { .. } => "unknown_strategy",
                _ => "internal",
            },
        }
    }
}
