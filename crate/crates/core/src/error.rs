use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("channel {channel:?} not found in {path}")]
    ChannelNotFound { channel: String, path: PathBuf },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("empty evaluation: confusion matrix has no entries")]
    EmptyEvaluation,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in loss term `{term}`")]
    Numerical { term: String },

    #[error("label error: {0}")]
    Label(String),

    #[error("batch error: {0}")]
    Batch(String),

    #[error("degenerate batch: no anchor has a positive")]
    DegenerateBatch,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, unwrapping fold context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Fold { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn numerical(term: impl Into<String>) -> Self {
        Error::Numerical { term: term.into() }
    }
}
