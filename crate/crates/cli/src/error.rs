use std::fmt;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONSTRAINT: i32 = 3;

/// A command failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn constraint(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONSTRAINT,
            message: message.into(),
        }
    }

    /// Same error with `context: ` in front of the message.
    pub fn prefixed(self, context: &str) -> Self {
        Self {
            code: self.code,
            message: format!("{context}: {}", self.message),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<hscore_core::Error> for CliError {
    fn from(e: hscore_core::Error) -> Self {
        let code = if e.is_input_error() { EXIT_INPUT } else { EXIT_CONSTRAINT };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wraps a filesystem error with its path as an input error.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}
