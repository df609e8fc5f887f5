use thiserror::Error;

use crate::training::TrainReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{what}: m = {m} exceeds the limit of {limit}")]
    SizeLimit {
        what: &'static str,
        m: usize,
        limit: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The bound handed to the sampler broke super-additivity.
    #[error("bound is not super-additive: branch mass {mass} exceeds 1")]
    BoundInvalid { mass: f64 },

    #[error(
        "acceptance rate too low: {accepted} accepted in {attempts} attempts (rate {rate:.3e})"
    )]
    AcceptanceTooLow {
        accepted: usize,
        attempts: u64,
        rate: f64,
    },

    /// Backtracking could not find a decrease. The report holds the last iterate.
    #[error("line search stagnated at iteration {}", .0.iterations)]
    Stagnation(Box<TrainReport>),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
