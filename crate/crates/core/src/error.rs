use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("schema error: {0}")]
    Schema(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// EM could not produce a usable model.
    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),

    #[error("unknown app: {0}")]
    UnknownApp(String),

    #[error("undefined pivot: {0}")]
    UndefinedPivot(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}
