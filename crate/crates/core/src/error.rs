use thiserror::Error;

/// Errors surfaced by the library. The CLI maps each variant onto its
/// exit-code contract via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    /// 1 usage error, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Unsupported(_) => 1,
            Error::NonFinite(_) | Error::Shape { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
