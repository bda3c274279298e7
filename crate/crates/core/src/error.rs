use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: entry {index}: {message}")]
    InvalidEntry {
        path: PathBuf,
        index: usize,
        message: String,
    },

    #[error("invalid template `{id}`: {message}")]
    InvalidTemplate { id: String, message: String },

    #[error("template `{template}` has no binding for slot [{slot}]")]
    MissingBinding { template: String, slot: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("no stored embedding for text {text:?}")]
    MissingEmbedding { text: String },

    #[error("{count} texts have no stored embedding (first: {first:?})")]
    MissingEmbeddings { count: usize, first: String },

    #[error("no stored score for sentence {text:?}")]
    MissingScore { text: String },

    #[error("item {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("probe `{template}`/`{adjective}` ({nationality}): {source}")]
    Probe {
        template: String,
        adjective: String,
        nationality: String,
        #[source]
        source: Box<Error>,
    },

    #[error("external encoder: {0}")]
    Transport(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    /// True when the failure is caused by absent data (embeddings, scores,
    /// input files) rather than by malformed input.
    pub fn is_missing_data(&self) -> bool {
        match self {
            Error::MissingEmbedding { .. }
            | Error::MissingEmbeddings { .. }
            | Error::MissingScore { .. } => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::AtIndex { source, .. } | Error::Probe { source, .. } => {
                source.is_missing_data()
            }
            _ => false,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> u8 {
        if self.is_missing_data() {
            3
        } else if matches!(self, Error::Io { .. } | Error::Transport(_)) {
            1
        } else {
            2
        }
    }
}
