use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the domain [0, {side}]^2")]
    OutsideDomain { x: f64, y: f64, side: f64 },

    #[error("operands live in different spline spaces")]
    SpaceMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero diagonal entry in active row {row}; diagonal preconditioner undefined")]
    ZeroDiagonal { row: usize },

    #[error("iterative solver stalled after {iterations} iterations (relative residual {residual:.3e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error(
        "Newton did not converge at t = {time} after {iterations} iterations \
         (block residual ratios {ratios:?})"
    )]
    Newton {
        time: f64,
        iterations: usize,
        ratios: [f64; 3],
    },

    #[error("time step failed at t = {time}: {source}")]
    Step {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("background trajectory does not cover t = {0}")]
    MissingBackground(f64),

    #[error("steepest-descent step undefined at iteration {0}: linearised image of the gradient vanishes")]
    StepSingular(usize),

    #[error("reconstruction aborted at iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate measurement: integral of phi_meas is {0} (must be positive)")]
    DegenerateMeasurement(f64),

    #[error("reference tumour volume is zero; relative volume error undefined")]
    ZeroReferenceVolume,

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(self, time: f64) -> Error {
        Error::Step {
            time,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }
}
