use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid state space: {0}")]
    InvalidStateSpace(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid observation model: {0}")]
    InvalidObservationModel(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("beta not bounded below: atom {state} has zero weight")]
    BetaNotBoundedBelow { state: usize },

    #[error("no unique invariant density found after {iterations} iterations")]
    NoInvariantDensity { iterations: usize },

    #[error("invariant density degenerate: atom {state} has zero mass")]
    DegenerateInvariantDensity { state: usize },

    #[error("zero-likelihood observation at step {step}")]
    ZeroLikelihood { step: usize },

    #[error("state {state} unreachable in one step")]
    StateUnreachable { state: usize },

    #[error("state {state} has zero predicted mass at step {step}")]
    ZeroPredictedMass { state: usize, step: usize },

    #[error("conditioning event has probability zero")]
    ConditioningProbabilityZero,

    #[error("observation symbol {symbol} out of range for alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },

    #[error("observation kind does not match the observation model: {0}")]
    ObservationKind(&'static str),

    #[error("horizon must be at least 1")]
    InvalidHorizon,

    #[error("instance too large for path enumeration: {paths:.3e} paths")]
    InstanceTooLarge { paths: f64 },

    #[error("insufficient data: {usable} usable points")]
    InsufficientData { usable: usize },

    #[error("series did not converge within {terms} terms")]
    SeriesNotConvergent { terms: usize },

    #[error("observation sequences of the two runs differ")]
    ObservationMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("replicate {index} (seed {seed}): {source}")]
    Replicate {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for errors caused by malformed user input, as opposed to
    /// numerical breakdowns during a run.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidStateSpace(_)
            | Error::InvalidKernel(_)
            | Error::InvalidObservationModel(_)
            | Error::InvalidDensity(_)
            | Error::BetaNotBoundedBelow { .. }
            | Error::SymbolOutOfRange { .. }
            | Error::ObservationKind(_)
            | Error::InvalidHorizon
            | Error::InvalidArgument(_)
            | Error::Config { .. }
            | Error::UnknownScenario(_) => true,
            Error::Replicate { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
