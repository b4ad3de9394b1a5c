use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the quantification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violates an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structured text or binary file could not be parsed.
    #[error("{}:{line}: field `{field}`: {message}", path.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "<input>".into()))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        field: String,
        message: String,
    },

    /// A value parsed correctly but breaks a type invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tile identifiers differ between files that must describe the same tiles.
    #[error("tile ids do not align: {}", offenders.join(", "))]
    Alignment { offenders: Vec<String> },

    /// Synthetic placement could not satisfy its constraints.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// No metric could be computed from the supplied data.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure stems from unreadable or inconsistent input files
    /// rather than from a violated numeric constraint.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Io { .. } | Error::Image { .. } | Error::Alignment { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
