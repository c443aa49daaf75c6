use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sampler failed at level {level}, sample {index}: {reason}")]
    Sampler {
        level: usize,
        index: u64,
        reason: String,
    },

    #[error("hierarchy cannot shrink from L={current} to L={target}")]
    Shrink { current: usize, target: usize },

    #[error("bias of derivative {m} is not decaying (fitted rate {rate:.4})")]
    NonDecayingBias { m: usize, rate: f64 },

    #[error("degenerate sample set: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The continuation loop ran out of iterations. The partial run is kept
    /// so callers can still report what was reached.
    #[error("iteration cap of {cap} reached before the MSE tolerance was met")]
    IterationCap {
        cap: usize,
        partial: Box<crate::tuning::RunResult>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
