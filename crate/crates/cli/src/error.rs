use std::fmt;

use decoopt_core::error::Error;

/// Failure classes shared by exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Malformed input; exit 2, HTTP 400.
    Validation,
    /// Well-formed but no plan exists; exit 3, HTTP 422.
    Infeasible,
    /// Bug or I/O failure on our side; exit 1, HTTP 500.
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        CliError {
            kind: Kind::Internal,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Validation => 2,
            Kind::Infeasible => 3,
            Kind::Internal => 1,
        }
    }

    pub fn http_status(&self) -> u16 {
        match self.kind {
            Kind::Validation => 400,
            Kind::Infeasible => 422,
            Kind::Internal => 500,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = if e.is_infeasible() {
            Kind::Infeasible
        } else if matches!(e, Error::Logic(_)) {
            Kind::Internal
        } else {
            Kind::Validation
        };
        CliError {
            kind,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
