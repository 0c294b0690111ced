use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A row of an input file could not be read or failed a field check.
    #[error("{file}:{line}: field `{field}`: {message}")]
    Malformed {
        file: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("{from_kind} `{from_id}` references unknown {to_kind} `{to_id}`")]
    DanglingReference {
        from_kind: &'static str,
        from_id: String,
        to_kind: &'static str,
        to_id: String,
    },

    #[error("invalid {what}: {message}")]
    Invalid { what: String, message: String },

    /// No usable human responses (or no usable mass) for a group/question.
    #[error("no data for group `{group}` on question `{question}`")]
    NoData { group: String, question: String },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("unknown subpopulation `{0}`")]
    UnknownGroup(String),

    #[error("unknown question `{0}`")]
    UnknownQuestion(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("endpoint capability error: {0}")]
    Capability(String),

    #[error("could not parse distribution: {message} (near `{snippet}`)")]
    ParseDistribution { message: String, snippet: String },

    #[error("degenerate gap: zero-shot {zero_shot} is not above lower bound {lower}")]
    DegenerateGap { lower: f64, zero_shot: f64 },

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("every evaluated pair failed ({0} attempted)")]
    AllPairsFailed(usize),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            message: message.into(),
        }
    }

    pub(crate) fn no_data(group: impl Into<String>, question: impl Into<String>) -> Self {
        Error::NoData {
            group: group.into(),
            question: question.into(),
        }
    }
}
