use std::fmt;

use attriq_core::ErrorCode;

/// A failure reported to the user as one machine-parsable line:
/// `error: code=<Code> message="<text>"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("InvalidArgument", message)
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self::new("IoFailure", format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: code={} message={:?}", self.code, self.message)
    }
}

impl<E: ErrorCode + std::error::Error> From<E> for CliError {
    fn from(err: E) -> Self {
        Self::new(err.code(), err.to_string())
    }
}
