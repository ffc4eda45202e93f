use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate batch: train-mode batch norm needs at least 2 rows, got {rows}")]
    DegenerateBatch { rows: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("load error for record `{id}`: {reason}")]
    Load { id: String, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f32 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Short stable identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::DegenerateBatch { .. } => "degenerate_batch",
            Error::Usage(_) => "usage",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Numeric(_) => "numeric",
            Error::Load { .. } => "load",
            Error::Format(_) => "format",
            Error::Diverged { .. } => "diverged",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
