use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which weight matrix an admissibility check failed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightKind {
    Q,
    R,
}

/// Which inequality of the admissibility envelope failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationSide {
    /// Below the lower bound `Q_lo` / `R_lo`.
    BelowLower,
    /// Above the upper bound `Q_hi` / `R_hi`.
    AboveUpper,
    /// `(1 - delta) W_t <= W_{t+1}` failed.
    RateDecrease,
    /// `W_{t+1} <= (1 + delta) W_t` failed.
    RateIncrease,
}

/// A structured admissibility failure: the offending agent, matrix and side,
/// plus the minimum eigenvalue of the difference that should have been PSD.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub agent: usize,
    pub matrix: WeightKind,
    pub side: ViolationSide,
    pub min_eigenvalue: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "agent {} weight {:?} violates {:?} (min eigenvalue {:.3e})",
            self.agent + 1,
            self.matrix,
            self.side,
            self.min_eigenvalue
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("index {index} out of range for {what} (len {len})")]
    IndexOutOfRange { what: &'static str, index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("Riccati iteration did not converge after {iterations} iterations (last step {residual:.3e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("closed loop blew up at step {step}: |x| = {norm:.3e} exceeds guard {limit:.3e}")]
    Instability { step: usize, norm: f64, limit: f64 },

    #[error("degenerate matrix: {0}")]
    Degenerate(String),

    #[error("no efficiency certificate: gamma = {gamma:.6} >= 1")]
    NoCertificate { gamma: f64 },

    #[error("inadmissible report: {0}")]
    Inadmissible(Violation),

    #[error("sandwich inequality falsified at sample {sample}: J = {optimal:.6e}, J_hat = {realized:.6e}, bound = {bound:.6e}")]
    CertificateFalsified { sample: usize, optimal: f64, realized: f64, bound: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.into(), reason: reason.into() }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidParameter { .. } | Error::Inadmissible(_) => 2,
            Error::NoCertificate { .. } => 4,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}
