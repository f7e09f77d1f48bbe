use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// A row of an input file violates the schema; `line` is the 1-based file line.
    #[error("{file}, line {line}, column `{column}`: {message}")]
    Schema {
        file: String,
        line: u64,
        column: String,
        message: String,
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("day {day} is outside the calendar grid [{start}, {end}]")]
    OutOfGrid { day: i64, start: i64, end: i64 },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid model parameters: {0}")]
    Parameters(String),

    #[error("invalid prior: {0}")]
    Prior(String),

    #[error("non-finite log-likelihood for subject(s) {}", .subjects.join(", "))]
    NonFinite { subjects: Vec<String> },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("invalid configuration: {0}")]
    Config(String),

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

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
