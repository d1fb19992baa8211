use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid hamiltonian: {0}")]
    InvalidHamiltonian(String),

    #[error("energy {s} outside the range [{lo}, {hi}] of branch {branch}")]
    OutOfRange { branch: String, s: f64, lo: f64, hi: f64 },

    #[error("coercivity not detected on [-{probe}, {probe}]")]
    NotCoercive { probe: f64 },

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("window under-resolves oscillation: min {min}, max {max}, required range [-{mbar}, 0]")]
    UnderResolved { min: f64, max: f64, mbar: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("level {mu} outside the admissible range ({lo}, {hi})")]
    LevelOutside { mu: f64, lo: f64, hi: f64 },

    #[error("no admissible selection: {0}")]
    NoSelection(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("internal inconsistency: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
