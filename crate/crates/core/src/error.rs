use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mass matrix not SPD")]
    MassNotSpd,

    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("requested reduced dimension {requested} exceeds numerical rank; achievable maximum is {max}")]
    RankExceeded { requested: usize, max: usize },

    #[error("isotropic or near-degenerate basis: sigma_min(U^T J U) = {sigma_min:.3e}")]
    DegenerateSymplectic { sigma_min: f64 },

    #[error(
        "reduced snapshot matrix is rank deficient: sigma_min = {sigma_min:.3e} for n = {n}; \
         reduce n or add snapshots"
    )]
    RankDeficientData { sigma_min: f64, n: usize },

    #[error("not enough snapshots: need {required}, have {available}")]
    NotEnoughSnapshots { required: usize, available: usize },

    #[error("nonlinear Hamiltonian part is not supported by {0}")]
    NonlinearUnsupported(&'static str),

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
