use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A value violates a type invariant. `name` is the offending field.
    #[error("invalid `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("division by zero: {what} vanishes at s = {s}")]
    DivisionByZero { what: &'static str, s: Complex64 },

    #[error("non-finite frequency response at omega = {omega}")]
    NonFinite { omega: f64 },

    /// The point is excluded by the chain analysis (m, the closed-form
    /// denominator or a boundary determinant is numerically zero).
    #[error("degenerate point s = {s}: {what}")]
    Degenerate { what: &'static str, s: Complex64 },

    #[error("tridiagonal system is near-singular at s = {s} (pivot {pivot:e}, scale {scale:e})")]
    Singular { s: Complex64, pivot: f64, scale: f64 },

    #[error("eigenvalue iteration did not converge for a {dim}x{dim} matrix")]
    EigenNoConvergence { dim: usize },

    #[error("simulation diverged at t = {t}")]
    Divergence { t: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
