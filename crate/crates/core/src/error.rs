use thiserror::Error;

/// Errors raised by the solvers and validators of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside the domain accepted by an operation.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A turning kernel violates one of the structural hypotheses.
    #[error("turning kernel violates {hypothesis}: {detail}")]
    Hypothesis {
        hypothesis: &'static str,
        detail: String,
    },

    /// The root of the dispersion relation could not be bracketed.
    #[error("dispersion relation has no admissible root: {0}")]
    NoBracket(String),

    /// An iteration stopped at its budget without meeting its tolerance.
    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A field that must stay positive did not.
    #[error("positivity violated at cell {cell}, velocity {velocity}: value {value:e}")]
    Positivity {
        cell: usize,
        velocity: usize,
        value: f64,
    },

    /// A NaN or infinite value appeared.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A linear system that should be regular turned out singular.
    #[error("singular linear system in {0}")]
    Singular(&'static str),

    /// A structured-text document could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A least-squares window contained too few usable points.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
