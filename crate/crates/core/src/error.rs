use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid lag configuration: {0}")]
    InvalidConfig(String),

    #[error("chains did not meet within {max_sweeps} joint sweeps")]
    CapExceeded { max_sweeps: usize },

    #[error("trace has no meeting time")]
    MissingTau,

    #[error("index {index} lies outside the stored {chain} path (length {len})")]
    IndexOutOfTrace {
        chain: &'static str,
        index: usize,
        len: usize,
    },

    #[error("need at least two processes, got {0}")]
    TooFewProcesses(usize),

    #[error("invalid J distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid survival sequence: {0}")]
    InvalidSurvival(String),

    #[error("invalid geometric spec: {0}")]
    InvalidSpec(String),

    #[error("invalid transition matrix: {0}")]
    InvalidMatrix(String),

    #[error("density is not pointwise evaluable at the sampled point")]
    NonEvaluableDensity,

    #[error("log-density evaluation failed: {0}")]
    Evaluation(String),

    #[error("joint chain with {0} states is too large to enumerate")]
    StateSpaceTooLarge(usize),

    #[error("residual meeting-time mass {0:e} is too large")]
    TailTooHeavy(f64),

    #[error("plain estimator has zero variance in coordinate {0}")]
    ZeroVariance(usize),

    #[error("invalid plan: {0}")]
    PlanInvalid(String),

    #[error("replicate {replicate}, process {process}, lag {lag}: {source}")]
    Process {
        replicate: usize,
        process: usize,
        lag: usize,
        source: Box<Error>,
    },

    #[error("trace format: {0}")]
    TraceFormat(String),
}

impl Error {
    /// True when this error, possibly wrapped with process provenance, is a
    /// meeting-cap failure.
    pub fn is_cap_exceeded(&self) -> bool {
        match self {
            Error::CapExceeded { .. } => true,
            Error::Process { source, .. } => source.is_cap_exceeded(),
            _ => false,
        }
    }
}
