use thiserror::Error;

/// Errors produced across the engine.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is outside its valid domain.
    #[error("invalid config: {0}")]
    Config(String),

    /// Drift, diffusion, reward or an intermediate value became non-finite.
    #[error("non-finite value in {what} at x={x:?}, a={a:?}")]
    NumericDomain {
        what: String,
        x: Vec<f64>,
        a: Vec<f64>,
    },

    /// A value field cannot supply the derivatives an operator needs.
    #[error("value field lacks {0} access")]
    Capability(&'static str),

    /// Array shapes do not line up (grid vs values, action rows, ...).
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Required input is missing or malformed.
    #[error("invalid input: {0}")]
    Input(String),

    /// An iteration blew past its divergence guard.
    #[error("divergence at iteration {iter}: sup norm {norm:.3e} exceeds guard {guard:.3e}")]
    Divergence { iter: usize, norm: f64, guard: f64 },

    /// An iterative solver hit its cap before reaching tolerance.
    #[error("no convergence after {iters} iterations (residual {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },

    /// Training produced a NaN loss or exploded.
    #[error("training aborted at step {step}: {cause}")]
    TrainingAbort { step: usize, cause: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(what: &str, v: f64, x: &[f64], a: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericDomain {
            what: what.to_string(),
            x: x.to_vec(),
            a: a.to_vec(),
        })
    }
}
