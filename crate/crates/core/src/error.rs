use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A vector or matrix did not have the length the operation requires.
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    /// Invalid construction parameters (operator, problem or controller).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A call-site argument violated a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Conjugate gradient met a non-positive curvature or non-finite value.
    #[error("conjugate gradient breakdown at iteration {iteration}: {reason}")]
    Breakdown { iteration: usize, reason: &'static str },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A conditional distribution is undefined for the current state.
    #[error("degenerate conditional: {0}")]
    Degenerate(String),

    /// Wraps an error raised while advancing a chain.
    #[error("at chain step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Breakdown { .. } | Error::NonFinite(_) | Error::Degenerate(_) => true,
            Error::AtStep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape { expected, found })
    }
}
