use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("truncation index {k_max} is below the largest occupied size {largest}")]
    Truncation { k_max: usize, largest: usize },

    #[error("state mass {mass} exceeds the state-space radius {radius}")]
    OutsideBall { mass: f64, radius: f64 },

    #[error("control value {0} lies outside [0, 1]")]
    ControlOutOfRange(f64),

    #[error("unknown control label `{0}`")]
    UnknownLabel(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("fragmentation index j={j} must satisfy 1 <= j < i={i}")]
    SplitIndex { i: usize, j: usize },

    #[error("invalid action function: {0}")]
    InvalidAction(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid reward: {0}")]
    InvalidReward(String),

    #[error("expression `{expr}`: {reason}")]
    Expression { expr: String, reason: String },

    #[error("total jump rate is zero; the state is absorbing under this control")]
    Absorbing,

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error(
        "target m*={target} is unreachable from m0={m0} over horizon {horizon}; use the constant control b={suggested}"
    )]
    Unreachable {
        m0: f64,
        target: f64,
        horizon: f64,
        suggested: f64,
    },

    #[error("state space has {count} states, above the cap of {cap}")]
    StateSpaceTooLarge { count: usize, cap: usize },

    #[error("search family has {count} members, above the cap of {cap}")]
    FamilyTooLarge { count: u128, cap: u128 },

    #[error("time step {dt} violates the CFL bound; need dt <= {required}")]
    Cfl { dt: f64, required: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
