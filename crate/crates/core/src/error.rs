use thiserror::Error;

/// Errors raised by the library. Variants carry enough context to name
/// the offending object without a backtrace.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("reality violation: term with zbar={zbar:?} z={z:?} has no conjugate partner")]
    RealityViolation { zbar: Vec<u16>, z: Vec<u16> },

    #[error("observable is not U(1)-invariant (term zbar={zbar:?} z={z:?})")]
    NotInvariant { zbar: Vec<u16>, z: Vec<u16> },

    #[error("imaginary residue {residue:e} exceeds tolerance when evaluating a real observable")]
    ImaginaryResidue { residue: f64 },

    #[error("matrix is not Hermitian (max deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositive { min_eigenvalue: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("step size underflow at t = {time} (dt = {dt:e})")]
    StepUnderflow { time: f64, dt: f64 },

    #[error("degenerate state: trace {trace:e} must be positive")]
    DegenerateState { trace: f64 },

    #[error("spectral gap {gap:e} below minimum {gap_min:e} at t = {time}")]
    SpectralGap { time: f64, gap: f64, gap_min: f64 },

    #[error("eigenvector tracking failed at t = {time}: overlap {overlap:.3} too small, refine the grid")]
    FrameTooCoarse { time: f64, overlap: f64 },

    #[error("frame does not cover requested time {requested} (grid ends at {end})")]
    FrameMismatch { requested: f64, end: f64 },

    #[error("propagation did not converge to tolerance {tol:e} after {steps} steps")]
    NoConvergence { tol: f64, steps: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.into(), reason: reason.into() }
    }
}
