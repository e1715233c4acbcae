//! Error types shared across the crate.

use thiserror::Error;

/// Errors surfaced by model construction, bandstructure computation,
/// correlation dynamics, entropy evaluation and the Fock oracle.
#[derive(Debug, Error)]
pub enum Error {
    /// Configuration rejected during validation.
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    /// Two eigenvalues of the classical generator are too close for the
    /// eigenvector-based canonical transformation to be trusted.
    #[error("degenerate bands at k = {k}: eigenvalue gap {gap:.3e} below tolerance")]
    DegenerateBands { k: f64, gap: f64 },

    /// Band continuity matching between adjacent mesh points was ambiguous.
    #[error("band sorting failure at k = {k}: {reason}")]
    BandSortingFailure { k: f64, reason: String },

    /// Requested integrator step exceeds the stability/accuracy bound, or
    /// Hermiticity drift during integration exceeded tolerance.
    #[error("step size too large: {0}")]
    StepSizeTooLarge(String),

    /// A correlation matrix or covariance violated the uncertainty relation
    /// beyond tolerance.
    #[error("nonphysical state: {0}")]
    NonphysicalState(String),

    /// Matrix inversion inside the slow-mode closed-form solution failed.
    #[error("singular matrix in slow-mode solution at t = {t}")]
    SingularMatrix { t: f64 },

    /// Real-space covariance assembly left an imaginary residue above
    /// tolerance, indicating inconsistent correlation data.
    #[error("assembly inconsistency: imaginary residue {residue:.3e}")]
    AssemblyInconsistency { residue: f64 },

    /// Covariance with a symplectic eigenvalue below the physical bound.
    #[error("nonphysical covariance: symplectic eigenvalue {nu} < 1/2")]
    NonphysicalCovariance { nu: f64 },

    /// Quadrature refinement did not converge to the requested tolerance.
    #[error("quadrature unconverged: relative change {change:.3e} after doubling")]
    QuadratureUnconverged { change: f64 },

    /// Not enough samples in the requested fit window.
    #[error("fit window too small: {n} samples (need >= {min})")]
    WindowTooSmall { n: usize, min: usize },

    /// Polynomial fit residual exceeded tolerance.
    #[error("poor fit: residual {residual:.3e} exceeds {threshold:.3e}")]
    PoorFit { residual: f64, threshold: f64 },

    /// An extrapolation ladder failed to stabilise.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Fock-space truncation leaked probability above threshold.
    #[error("fock cutoff leak: top-level occupation {occupation:.3e}")]
    CutoffLeak { occupation: f64 },

    /// Density matrix developed a negative eigenvalue beyond tolerance.
    #[error("nonpositive state: min eigenvalue {min_eig:.3e}")]
    NonpositiveState { min_eig: f64 },

    /// Linear algebra backend failure.
    #[error("linear algebra error: {0}")]
    Linalg(String),

    /// I/O failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Config file could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    /// Snapshot file malformed.
    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}
