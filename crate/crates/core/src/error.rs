use thiserror::Error;

/// Errors produced by the search engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backprop requested for a node that was never evaluated")]
    BackpropBeforeForward,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),

    #[error("state {state} has {available} candidate sources, need at least 2")]
    TooFewSources { state: usize, available: usize },

    #[error("constraint set has {size} members, above the enumeration guard of {guard}")]
    EnumerationGuard { size: u128, guard: u128 },

    #[error("step {step} is past the annealing horizon {horizon}")]
    StepPastHorizon { step: usize, horizon: usize },

    #[error("dataset has {size} examples, need at least {needed}")]
    DatasetTooSmall { size: usize, needed: usize },

    #[error("operation requires {0} activation mode")]
    WrongActivationMode(&'static str),

    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
