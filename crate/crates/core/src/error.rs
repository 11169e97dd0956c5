use std::path::PathBuf;

/// Errors raised anywhere in the SGSG pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown scene `{0}`")]
    UnknownScene(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch window ids {window_ids:?}")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        window_ids: Vec<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Dimension {
        op,
        detail: detail.into(),
    }
}
