use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("energy conservation constraint violated: a + b + c = {sum} (must be exactly 0)")]
    ConservationViolated { sum: f64 },

    #[error("dimension mismatch: expected {expected} shells, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("projection cutoff {m} exceeds shell count {n}")]
    CutoffTooLarge { m: usize, n: usize },

    #[error("invalid norm: {0}")]
    InvalidNorm(String),

    #[error("operation requires the {expected} variant")]
    VariantMismatch { expected: &'static str },

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trajectory blew up at step {step} (t = {t})")]
    Blowup { step: usize, t: f64 },

    #[error("adjoint became non-finite at step {step}")]
    AdjointNonFinite { step: usize },

    #[error("epsilon = {epsilon} violates {bound} (threshold {threshold})")]
    EpsilonThreshold {
        bound: &'static str,
        epsilon: f64,
        threshold: f64,
    },

    #[error("control energy {energy} exceeds cap {cap}")]
    EnergyCapExceeded { energy: f64, cap: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
