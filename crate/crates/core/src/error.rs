use alloc::string::String;
use core::fmt;

use crate::expr::VarRef;

/// Errors raised by the analysis routines.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// A variable required for evaluation has no value in the binding.
    MissingVariable(VarRef),
    /// A denominator evaluated to (almost) zero.
    DivisionNearZero,
    /// Every sample drawn was rejected by the exclusion predicates or hit a
    /// singularity.
    AllSamplesSingular,
    /// Backward shifts need the inverse of the system extension.
    MissingInverse,
    /// A system definition violates its structural invariants.
    InvalidSystem(String),
    /// A function uses variables outside the extended coordinates it is
    /// declared on.
    InvalidCoordinates(String),
    InvalidParameterization(String),
    /// The trajectory does not provide a value at step `k`.
    TrajectoryUnavailable { k: i64 },
    /// The trajectory does not satisfy the system dynamics.
    InvalidTrajectory { residual: f64 },
    /// The trajectory passes through a singularity of the flat pair.
    SingularTrajectory { k: i64 },
    /// The parameterization cannot be evaluated at step `k`.
    SingularParameterization { k: i64 },
    NoConvergence { restarts: usize, residual: f64 },
    Precondition(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::MissingVariable(v) => write!(f, "no value bound for variable {v}"),
            Error::DivisionNearZero => f.write_str("division by a value numerically equal to zero"),
            Error::AllSamplesSingular => f.write_str("every sample was rejected as singular"),
            Error::MissingInverse => f.write_str("backward shift requires the inverse map psi"),
            Error::InvalidSystem(msg) => write!(f, "invalid system: {msg}"),
            Error::InvalidCoordinates(msg) => write!(f, "invalid coordinates: {msg}"),
            Error::InvalidParameterization(msg) => write!(f, "invalid parameterization: {msg}"),
            Error::TrajectoryUnavailable { k } => write!(f, "trajectory has no value at k = {k}"),
            Error::InvalidTrajectory { residual } => {
                write!(f, "trajectory violates the dynamics (residual {residual:e})")
            }
            Error::SingularTrajectory { k } => {
                write!(f, "trajectory meets a singularity of the flat pair at k = {k}")
            }
            Error::SingularParameterization { k } => {
                write!(f, "parameterization is singular at k = {k}")
            }
            Error::NoConvergence { restarts, residual } => write!(
                f,
                "no convergence after {restarts} restarts (best residual {residual:e})"
            ),
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
