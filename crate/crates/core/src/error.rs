use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A trace record could not be parsed. `file` is filled in by callers
    /// that know which file the reader was attached to.
    #[error("{}: {msg}", location(.file, *.line))]
    Parse {
        file: Option<PathBuf>,
        line: usize,
        msg: String,
    },

    /// Malformed matrix, label, or manifest input.
    #[error("input error: {0}")]
    Input(String),

    #[error("config error: `{key}`: {msg}")]
    Config { key: String, msg: String },

    /// An operation was applied outside its domain (empty stream, no defects, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An internal consistency check failed.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn location(file: &Option<PathBuf>, line: usize) -> String {
    match file {
        Some(path) => format!("{}:{line}", path.display()),
        None => format!("line {line}"),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    /// Attach a file name to a parse error produced from an anonymous reader.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Parse {
                file: None,
                line,
                msg,
            } => Error::Parse {
                file: Some(path.into()),
                line,
                msg,
            },
            other => other,
        }
    }

    /// True for errors caused by bad user input (as opposed to internal faults).
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Invariant(_))
    }
}
