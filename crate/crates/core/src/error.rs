use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A value outside the domain of a kernel or potential, typically a coincident pair.
    #[error("domain error: {0}")]
    Domain(String),
    /// The requested operation is not defined for this kernel or potential form.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// Invalid parameters supplied by the caller.
    #[error("usage error: {0}")]
    Usage(String),
    /// An iterative solver stopped before reaching its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e}): {context}")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        context: String,
    },
    /// The equilibrium solver ran out of iterations; carries its best iterate.
    #[error("equilibrium solver stopped after {} iterations with duality gap {:.3e}", .0.iterations, .0.gap)]
    EquilibriumUnconverged(Box<crate::equilibrium::EquilibriumResult>),
    /// Two particles came closer than the collision guard.
    #[error("collision at t = {time}: pair distance {distance:.3e} below guard")]
    Collision { time: f64, distance: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
