//! Plane-wave electronic structure of periodic crystals: Bloch band structures,
//! frequency-dependent RPA polarization matrices, macroscopic dielectric tensors,
//! and time-dependent Hartree dynamics of density-matrix perturbations.
//!
//! Everything works in Hartree atomic units. The spatial dimension (1, 2 or 3) is
//! a runtime property of [`lattice::Lattice`]; all modules are dimension-generic.
//!
//! Layout:
//! - [`lattice`]: Bravais lattices, reciprocal lattices, plane-wave basis sets,
//!   Brillouin-zone grids and folding.
//! - [`coulomb`]: periodic Coulomb kernel (4π/|k|²), its square root, and the
//!   Coulomb inner product on zero-mean densities.
//! - [`bands`]: Bloch fiber Hamiltonians, band structures, Fermi data, and a
//!   damped-mixing SCF loop for the periodic Hartree problem.
//! - [`response`]: Adler–Wiser polarization matrices T/ℰ at complex or real
//!   frequency, contour-integral cross-evaluation, dielectric screening blocks,
//!   and the positive quadratic form of the screening operator.
//! - [`dynamics`]: supercell density-matrix propagation — Dyson expansion,
//!   per-step Picard integration of the mild (Duhamel) form, unitary reference
//!   propagator, conservation and energy-budget diagnostics.
//! - [`dielectric`]: macroscopic permittivity tensor via the small-q
//!   homogenization limit (L matrix, b vectors, C operator) plus the scalar
//!   probe of the full microscopic operator.
//! - [`oracle`]: small dense brute-force references (exact propagation,
//!   finite-difference static response, resolvent solves) used for validation.
//! - [`config`]/[`report`]: run configuration schema, hashing, CSV/JSON output.

pub mod bands;
pub mod cli;
pub mod config;
pub mod coulomb;
pub mod dielectric;
pub mod dynamics;
pub mod error;
pub mod lattice;
pub mod oracle;
pub mod report;
pub mod response;

/// Complex double — the scalar type of every matrix in this crate.
pub type C64 = num_complex::Complex<f64>;

pub use error::QuartzError;

/// Crate result alias.
pub type Result<T> = std::result::Result<T, QuartzError>;
