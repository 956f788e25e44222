use thiserror::Error;

/// Errors produced anywhere in the training stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, dimensions or indices that do not fit together.
    #[error("malformed input: {0}")]
    Malformed(String),

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinite value showed up in a loss, gradient or parameter.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    /// An environment was driven outside its contract.
    #[error("environment error: {0}")]
    Env(String),

    /// A grid layout failed to parse or validate.
    #[error("layout error: {0}")]
    Layout(String),

    /// A demonstration record carried action data.
    #[error("state-only violation: {0}")]
    StateOnly(String),

    #[error("demo file line {line}: {msg}")]
    DemoParse { line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Prefix the message with some context, keeping the variant.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Malformed(m) => Error::Malformed(format!("{ctx}: {m}")),
            Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
            Error::Divergence(m) => Error::Divergence(format!("{ctx}: {m}")),
            Error::Env(m) => Error::Env(format!("{ctx}: {m}")),
            Error::Layout(m) => Error::Layout(format!("{ctx}: {m}")),
            Error::StateOnly(m) => Error::StateOnly(format!("{ctx}: {m}")),
            Error::Checkpoint(m) => Error::Checkpoint(format!("{ctx}: {m}")),
            other => other,
        }
    }

    /// Whether this error stems from user-supplied configuration rather than
    /// a failure during execution.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Layout(_) | Error::StateOnly(_) | Error::DemoParse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
