use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("all weights are zero; cannot normalize")]
    AllZeroWeights,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("token {token} is outside the alphabet of size {alphabet}")]
    TokenOutOfRange { token: usize, alphabet: usize },
    #[error("beta at step {step} is {value}, expected a value in [0, 1]")]
    InvalidBeta { step: usize, value: f64 },
    #[error("timestep {t} is outside [{min}, {max}]")]
    TimeOutOfRange { t: usize, min: usize, max: usize },
    #[error("conditioning event has zero probability: {0}")]
    ZeroProbabilityEvent(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("enumeration guard exceeded: {0}")]
    TooLarge(String),
    #[error("degenerate factor: p(x_i | x_t without i) is zero at token {token} where the target is positive")]
    DegenerateFactor { token: usize },
    #[error("target and draft agree everywhere; rejection has probability zero")]
    ZeroRejectionMass,
    #[error("budget {budget} exceeds the {available} available positions")]
    BudgetTooLarge { budget: usize, available: usize },
    #[error("context has no counts and smoothing is zero")]
    UnseenContext,
    #[error("supports differ: {left} vs {right} entries")]
    SupportMismatch { left: usize, right: usize },
    #[error("acceptance rate {0} is outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("no proposals recorded")]
    NoProposals,
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("invalid configuration at `{path}`: {message}")]
    Invariant { path: String, message: String },
    #[error("configuration schema error: {0}")]
    Schema(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invariant(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invariant {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
