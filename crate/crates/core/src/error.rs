use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("i/o error: {0}")]
    Stream(#[from] io::Error),
    #[error("{context}, line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },
    #[error("no valid triples in {0}")]
    NoValidTriples(String),
    #[error("empty vocabulary after filtering (min_count = {min_count})")]
    EmptyVocabulary { min_count: usize },
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("missing embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("query id mismatch: `{0}` vs `{1}`")]
    QueryMismatch(String, String),
    #[error("{0}")]
    Invalid(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures of the file system or an output stream, as opposed
    /// to malformed input or invalid parameters.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Stream(_) => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }
}

impl From<crate::embedding::MissingEmbedding> for Error {
    fn from(m: crate::embedding::MissingEmbedding) -> Self {
        Error::MissingEmbedding(m.0)
    }
}
