//! Crate-wide error type.

use crate::mesh::ElementId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid argument or evaluation point outside the admissible set.
    #[error("domain error: {0}")]
    Domain(String),

    /// Requested size exceeds what index types or memory limits allow.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Polynomial degree outside the supported range 1..=3.
    #[error("unsupported polynomial degree {0} (supported: 1, 2, 3)")]
    Degree(usize),

    /// A refinement mark does not name a current leaf element.
    #[error("marked element {0:?} is not a leaf of this mesh")]
    InvalidMark(ElementId),

    /// Face enumeration ran into a >2:1 size jump.
    #[error("mesh is not 2:1 balanced near element {0:?}")]
    Unbalanced(ElementId),

    /// An operation that needs an exact solution was called on a problem
    /// without one.
    #[error("problem `{0}` has no exact solution")]
    NoExactSolution(String),

    /// Iterative solver failed to reach the requested tolerance.
    #[error("linear solve did not converge: {iterations} iterations, relative residual {residual:.3e}")]
    SolveFailed { iterations: usize, residual: f64 },

    /// Time marching aborted mid-run.
    #[error("time march failed at step {step}: {source}")]
    TimeMarch {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn capacity(msg: impl Into<String>) -> Self {
        Error::Capacity(msg.into())
    }
}
