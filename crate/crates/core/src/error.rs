use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape mismatch, empty batch, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Too few or degenerate points to fit a distribution.
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    /// An input value (log-density, sample, covariance) was unusable.
    #[error("invalid input: {0}")]
    Input(String),
    /// A Markov chain left the finite reals.
    #[error("chain diverged at step {step}")]
    Divergence { step: usize },
    #[error("unsupported input dimension {dim} (at most {max})")]
    UnsupportedDimension { dim: usize, max: usize },
    #[error("unknown name `{0}`")]
    UnknownName(String),
}

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(alloc::format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
