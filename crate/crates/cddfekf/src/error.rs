//! Error types shared by the factorization kernels and the filter recursions.

use std::fmt;

/// Numerical failure modes surfaced by the kernels and filters.
///
/// `NotPositiveDefinite` and `SingularResidualCovariance` are the breakdown
/// signals the benchmark records as filter failure; they are expected
/// outcomes on ill-conditioned scenarios, not bugs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// A Cholesky pivot was not strictly positive.
    NotPositiveDefinite,
    /// An input matrix or vector contained a NaN or infinity.
    NonFiniteInput,
    /// A model evaluation or recursion produced a NaN or infinity.
    NonFiniteOutput,
    /// The residual covariance could not be inverted or solved against.
    SingularResidualCovariance,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::NotPositiveDefinite => "matrix is not positive definite",
            ErrorKind::NonFiniteInput => "input contains non-finite entries",
            ErrorKind::NonFiniteOutput => "computation produced non-finite values",
            ErrorKind::SingularResidualCovariance => "residual covariance is singular",
        };
        f.write_str(s)
    }
}

/// A numerical error, optionally tagged with the prediction substep at which
/// it surfaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NumError {
    pub kind: ErrorKind,
    pub substep: Option<usize>,
}

impl NumError {
    pub fn new(kind: ErrorKind) -> Self {
        NumError {
            kind,
            substep: None,
        }
    }

    /// Attach the index of the failing prediction substep.
    pub fn at_substep(mut self, index: usize) -> Self {
        self.substep = Some(index);
        self
    }
}

impl From<ErrorKind> for NumError {
    fn from(kind: ErrorKind) -> Self {
        NumError::new(kind)
    }
}

impl fmt::Display for NumError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.substep {
            Some(l) => write!(f, "{} (substep {})", self.kind, l),
            None => self.kind.fmt(f),
        }
    }
}

impl std::error::Error for NumError {}

pub type NumResult<T> = Result<T, NumError>;
