use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid input data (probabilities, parameters, shapes).
    Config(String),
    /// Quadrature or grid does not resolve the microstructure.
    Resolution { cell_width: f64, spacing: f64 },
    /// Two fields that must live on the same grid do not.
    GridMismatch { expected: usize, found: usize },
    /// A stiffness tensor or cell operator is not positive definite.
    Ellipticity(String),
    /// Conjugate gradients stagnated.
    IllConditioned {
        iterations: usize,
        residual: f64,
        condition_estimate: f64,
    },
    /// An inner iteration (root find, local Newton, sweep) failed.
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    /// A Rothe step did not converge; smaller steps usually help.
    StepFailure {
        step: usize,
        sweeps: usize,
        residual: f64,
    },
    /// A supremum kept growing up to the search radius.
    Unbounded { radius: f64, value: f64 },
    /// Evaluation outside the admissible range (e.g. time outside `[0, T]`).
    OutOfRange(String),
    /// A documented precondition of the operation does not hold.
    Precondition(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Resolution { cell_width, spacing } => write!(
                f,
                "resolution error: spacing {spacing} does not resolve microstructure cells of width {cell_width}"
            ),
            Error::GridMismatch { expected, found } => {
                write!(f, "grid mismatch: expected {expected} values, found {found}")
            }
            Error::Ellipticity(msg) => write!(f, "ellipticity error: {msg}"),
            Error::IllConditioned {
                iterations,
                residual,
                condition_estimate,
            } => write!(
                f,
                "conjugate gradients stagnated after {iterations} iterations (residual {residual:e}, condition estimate {condition_estimate:e})"
            ),
            Error::NonConvergence {
                what,
                iterations,
                residual,
            } => write!(
                f,
                "{what} did not converge in {iterations} iterations (residual {residual:e})"
            ),
            Error::StepFailure {
                step,
                sweeps,
                residual,
            } => write!(
                f,
                "time step {step} failed after {sweeps} sweeps (residual {residual:e}); try a smaller step"
            ),
            Error::Unbounded { radius, value } => write!(
                f,
                "supremum unbounded: value {value:e} still growing at search radius {radius}"
            ),
            Error::OutOfRange(msg) => write!(f, "out of range: {msg}"),
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
