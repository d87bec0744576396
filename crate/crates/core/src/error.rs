use thiserror::Error;

/// Errors raised by models, solvers and the experiment layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("barrier evaluated outside its domain (zeta = {zeta})")]
    Domain { zeta: f64 },

    #[error("attitude too close to the Euler singularity (pitch = {pitch})")]
    SingularAttitude { pitch: f64 },

    #[error("Q_uu not positive definite at step {step} (reg = {reg:e})")]
    NotPositiveDefinite { step: usize, reg: f64 },

    #[error("rollout produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("inner solve did not converge for parameter {index} (kkt = {kkt:e})")]
    InnerSolveFailed { index: usize, kkt: f64 },

    #[error("horizon mismatch: {left} vs {right}")]
    HorizonMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
