use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Index(String),

    #[error("capacity exceeded: {what} = {value} is above the cap of {cap}")]
    Capacity { what: &'static str, value: usize, cap: usize },

    #[error("boson number must be even and positive, got {0}")]
    OddBosonCount(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid shape mismatch: {0}")]
    Shape(String),

    #[error("grid cannot resolve the requested fields: {0}")]
    Resolution(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Mode solve did not reach the residual tolerance.
    #[error(
        "mode equations did not converge at t = {time} after {iterations} iterations \
         (residual {residual:.3e}, tolerance {tolerance:.1e})"
    )]
    Convergence {
        time: f64,
        iterations: usize,
        residual: f64,
        tolerance: f64,
        history: Vec<f64>,
    },

    /// The fixed-point iteration on the mode time derivatives hit its cap.
    #[error(
        "time-derivative iteration diverged at t = {time} after {iterations} iterations \
         (last change {last_change:.3e}, tolerance {tolerance:.1e})"
    )]
    Diverged {
        time: f64,
        iterations: usize,
        last_change: f64,
        tolerance: f64,
        history: Vec<f64>,
    },
}

impl Error {
    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Index(_) => "index",
            Error::Capacity { .. } => "capacity",
            Error::OddBosonCount(_) => "odd_boson_count",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Shape(_) => "shape",
            Error::Resolution(_) => "resolution",
            Error::Numerical(_) => "numerical",
            Error::Convergence { .. } => "convergence",
            Error::Diverged { .. } => "diverged",
        }
    }

    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::Convergence { .. } | Error::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
