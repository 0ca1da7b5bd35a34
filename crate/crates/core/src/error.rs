use thiserror::Error;

/// Errors raised by the simulator, the networks and the trainers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("power {value} W at (sbs {sbs}, subframe {subframe}) is outside [0, {p_max}] W")]
    PowerOutOfRange {
        sbs: usize,
        subframe: usize,
        value: f64,
        p_max: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("reward exponent {exponent} exceeds 500; reward scaling is miscalibrated")]
    RewardOverflow { exponent: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("analytic and finite-difference efficiency gradients disagree (relative error {rel_err:e})")]
    GradientMismatch { rel_err: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
