use thiserror::Error;

pub type Result<T> = std::result::Result<T, IcrError>;

#[derive(Debug, Error)]
pub enum IcrError {
    #[error("scope error: {0}")]
    Scope(String),

    #[error("conditioning configuration {slice} has zero total mass")]
    AllZeroSlice { slice: usize },

    #[error("support error: {0}")]
    Support(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown block `{0}`")]
    UnknownBlock(String),

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("no permissible updating cycle")]
    NoCycle,

    #[error("impermissible cycle: {0}")]
    ImpermissibleCycle(String),

    #[error("run has not converged")]
    NotConverged,

    #[error("slot distributions are not mutually stationary (max symmetric KL {0:e})")]
    NotStationary(f64),

    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("inconsistent marginals: {0}")]
    Inconsistent(String),

    #[error("block `{0}` is not a full conditional")]
    NotFullConditional(String),

    #[error("phase `{phase}` failed: {source}")]
    Phase {
        phase: String,
        #[source]
        source: Box<IcrError>,
    },
}

impl IcrError {
    pub(crate) fn in_phase(phase: &str, source: IcrError) -> Self {
        IcrError::Phase { phase: phase.to_string(), source: Box::new(source) }
    }
}
