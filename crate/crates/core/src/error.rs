use crate::mechanisms::Mechanism;

/// Errors raised by mechanism evaluation, checks and solvers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid project: {0}")]
    InvalidProject(String),

    #[error("invalid scheme parameters: {0}")]
    InvalidScheme(String),

    #[error("invalid strategy profile: {0}")]
    InvalidProfile(String),

    /// Proportional refunds are undefined when nothing has been contributed.
    #[error("refund share is undefined for an empty profile (total contribution is zero)")]
    EmptyProfile,

    #[error("contribution sequence {seq} out of range 1..={len}")]
    InvalidSeq { seq: usize, len: usize },

    #[error("time {t} outside [0, {deadline}]")]
    TimeOutOfRange { t: f64, deadline: f64 },

    #[error("market liquidity must be positive, got {0}")]
    InvalidLiquidity(f64),

    #[error("cost {cost} is below the market minimum {min}")]
    OutOfRange { cost: f64, min: f64 },

    #[error("no valid budget: total valuation {theta_sum} does not exceed provision point {provision_point}")]
    NoValidBudget { theta_sum: f64, provision_point: f64 },

    #[error("{operation} is not defined for {mechanism}")]
    UnsupportedScheme {
        mechanism: Mechanism,
        operation: &'static str,
    },

    #[error("no gas model for {0}")]
    UnsupportedMechanism(Mechanism),

    #[error("invalid sample specification: {0}")]
    InvalidSample(String),

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
