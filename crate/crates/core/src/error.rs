use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("missing file {path}: {source}")]
    MissingFile {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("horizon mismatch at `{field}`: expected {expected} months, found {found}")]
    HorizonMismatch {
        field: String,
        expected: usize,
        found: usize,
    },

    #[error("branch `{path}` not found{}", hint.as_ref().map(|h| format!(" (nearest ancestor: `{h}`)")).unwrap_or_default())]
    BranchNotFound { path: String, hint: Option<String> },

    #[error("invalid branch path `{0}`")]
    InvalidPath(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("unknown {kind} strategy `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("year {year} outside horizon {start}..={end}")]
    YearOutsideHorizon { year: i32, start: i32, end: i32 },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        CoreError::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}
