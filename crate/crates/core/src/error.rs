use thiserror::Error;

/// Failure signals raised by the simulation and optimization routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no connected graph on {devices} devices with {absent} of {pairs} pairs absent")]
    InfeasibleSparsity {
        devices: usize,
        absent: usize,
        pairs: usize,
    },
    #[error("device index {index} out of range for {devices} devices")]
    IndexOutOfRange { index: usize, devices: usize },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error(
        "hyperparameters leave a non-positive denominator; learning rate must stay below {lambda_max:.6e}"
    )]
    InvalidHyperparameters { lambda_max: f64 },
    #[error("starting point violates the constraint set: {0}")]
    Infeasible(&'static str),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("transmit power {power:.6e} exceeds budget {budget:.6e}")]
    PowerViolation { power: f64, budget: f64 },
    #[error("receive form is singular and needs a ridge term")]
    RequiresRegularization,
}

pub type Result<T> = core::result::Result<T, Error>;
