use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix family {0}; expected 1..=4")]
    InvalidFamily(u8),

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("state space size must be at least 2, got {0}")]
    SizeTooSmall(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("row {row} of stochastic matrix is invalid: {reason}")]
    InvalidRow { row: usize, reason: String },

    #[error("invalid probability vector: {0}")]
    InvalidPmf(String),

    #[error("invalid cost vectors: {0}")]
    InvalidCost(String),

    #[error("discount factor {0} outside (0, 1)")]
    InvalidDiscount(f64),

    #[error("threshold {theta} out of range 0..={max}")]
    ThresholdOutOfRange { theta: usize, max: usize },

    #[error("revealed state supplied for model A")]
    UnexpectedRevealedState,

    #[error("model B activation requires the revealed post-reset state")]
    MissingRevealedState,

    #[error("information state does not match the chain: {0}")]
    InfoMismatch(String),

    #[error("linear system (I - Z) reported singular")]
    SingularSystem,

    #[error("empty comparison set at information state {state}: {detail}")]
    EmptyLambdaSet { state: String, detail: String },

    #[error("passive set is not threshold-representable: {0}")]
    NotThreshold(String),

    #[error("indexability violation: {0}")]
    NotIndexable(String),

    #[error("joint state space has {states} states, above the cap of {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("policy requested {requested} activations with a budget of {budget}")]
    BudgetExceeded { requested: usize, budget: usize },

    #[error("invalid fleet: {0}")]
    InvalidFleet(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("ratio undefined: {0}")]
    ZeroDenominator(&'static str),

    #[error("serialization failed: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
