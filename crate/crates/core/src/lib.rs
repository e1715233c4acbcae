//! Core library for simulating a harmonic oscillator chain under continuous
//! weak monitoring of coarse-grained (range-`R`) position observables.
//!
//! The chain Hamiltonian is quadratic and the measured observables are linear,
//! so the conditional state stays Gaussian and all equal-time two-point
//! functions evolve deterministically. The library is organised around that
//! structure:
//!
//! - [`model`]: real-space couplings, measurement matrix, initial product
//!   state, configuration handling.
//! - [`bloch`]: per-wavevector `2R x 2R` blocks of the non-Hermitian effective
//!   Hamiltonian, canonical (commutation-preserving) triangularisation, and
//!   the complex bandstructure with its small-`k` expansion.
//! - [`dynamics`]: matrix Riccati evolution of the correlation matrices, the
//!   diagonal slow-mode closed-form solution, and quasiparticle density decay.
//! - [`entropy`]: covariance assembly, symplectic entanglement entropy,
//!   quasiparticle entropy predictions, sqrt-time fits and scaling collapse.
//! - [`oracle`]: truncated Fock-space ground truth (stochastic trajectories
//!   and non-Hermitian evolution) for desk-scale validation.

pub mod bloch;
pub mod dynamics;
pub mod entropy;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracle;

pub use error::Error;

/// Shorthand complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
