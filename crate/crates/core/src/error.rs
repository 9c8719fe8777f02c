use std::fmt;

/// Broad failure classes, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// A precondition on the caller's arguments was violated.
    Usage,
    /// Input data or a file was malformed.
    Data,
    /// A numerical procedure or code construction did not succeed.
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{0}")]
    Quadrature(QuadratureFailure),

    #[error("root finding failed: {0}")]
    Root(String),

    /// The stationarity recurrence produced a target probability inside the atom at +1.
    #[error("escaped support at a{index}: rho = {rho} >= {limit}")]
    EscapedSupport { index: usize, rho: f64, limit: f64 },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("cancelled")]
    Cancelled,

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("corrupt quantized tensor: {0}")]
    Corruption(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain(_) => ErrorClass::Usage,
            Error::Format(_) | Error::Data(_) | Error::Corruption(_) | Error::Io(_) => {
                ErrorClass::Data
            }
            Error::Quadrature(_)
            | Error::Root(_)
            | Error::EscapedSupport { .. }
            | Error::Construction(_)
            | Error::Cancelled => ErrorClass::Numerical,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

/// Diagnostics from an adaptive integration that ran out of subdivisions.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureFailure {
    pub estimate: f64,
    pub error_estimate: f64,
    pub abs_tol: f64,
    pub subdivisions: usize,
}

impl fmt::Display for QuadratureFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "quadrature did not converge after {} subdivisions: estimate {:.12e}, error estimate {:.3e} > tolerance {:.3e}",
            self.subdivisions, self.estimate, self.error_estimate, self.abs_tol
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
