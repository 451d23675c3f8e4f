use std::fmt;

use dcinv_core::Error;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FIT: i32 = 3;
pub const EXIT_UNREACHABLE: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INPUT, message: message.into() }
    }

    /// Errors raised while fitting a surrogate exit with the fit code unless
    /// they are plain I/O or input problems.
    pub fn from_fit(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Input(_) | Error::Dimension { .. } => e.into(),
            other => CliError { code: EXIT_FIT, message: other.to_string() },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Input(_) | Error::Dimension { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => EXIT_INPUT,
            Error::Fit(_) => EXIT_FIT,
            Error::Unreachable { .. } | Error::NoAcceptance { .. } => EXIT_UNREACHABLE,
            Error::DegenerateSamples { .. }
            | Error::Factorization { .. }
            | Error::MapEvaluation { .. }
            | Error::Numerical(_) => EXIT_NUMERICAL,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
