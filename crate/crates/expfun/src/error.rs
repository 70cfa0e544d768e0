//! Crate-wide error type.
//!
//! Errors fall into two broad groups, which the CLI maps onto exit codes:
//! mathematical/usage failures (invalid model, domain violations, pole
//! proximity, non-convergence) exit with code 1, while input/output and
//! configuration-parsing failures exit with code 2.

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Model parameters violate a structural requirement (negative rates,
    /// duplicate rates, failing mean condition, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested evaluation point is too close to a pole or a root for
    /// the result to be trustworthy.
    #[error("pole proximity: {0}")]
    PoleProximity(String),

    /// An iterative scheme hit its iteration cap before meeting its
    /// convergence criterion.
    #[error("failed to converge: {0}")]
    NonConvergence(String),

    /// A coefficient or expansion order was requested beyond the range where
    /// the defining recurrence is valid.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// The model sits in a regime the analytic machinery does not support
    /// (e.g. confluent/non-simple pole configurations).
    #[error("unsupported regime: {0}")]
    Unsupported(String),

    /// Reading or writing files failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A configuration file or command-line value could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Exit code the CLI should use for this error: 2 for input/parse
    /// problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Parse(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_math_from_io() {
        assert_eq!(Error::InvalidModel("x".into()).exit_code(), 1);
        assert_eq!(Error::Domain("x".into()).exit_code(), 1);
        assert_eq!(Error::PoleProximity("x".into()).exit_code(), 1);
        assert_eq!(Error::NonConvergence("x".into()).exit_code(), 1);
        assert_eq!(Error::OutOfRange("x".into()).exit_code(), 1);
        assert_eq!(Error::Unsupported("x".into()).exit_code(), 1);
        assert_eq!(Error::Parse("x".into()).exit_code(), 2);
        assert_eq!(
            Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "x")).exit_code(),
            2
        );
    }

    #[test]
    fn messages_carry_context() {
        let e = Error::Domain("sigma must be positive".into());
        assert!(e.to_string().contains("sigma must be positive"));
    }
}
