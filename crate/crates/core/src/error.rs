//! Error taxonomy shared by all modules.
//!
//! Variants are grouped by how the CLI maps them to exit codes:
//! configuration/input problems (exit 1), physics preconditions that the input
//! genuinely violates (exit 2), and numerical failures (exit 3).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuartzError {
    // --- configuration / input -------------------------------------------------
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // --- physics preconditions -------------------------------------------------
    /// No spectral gap above the requested number of occupied bands.
    #[error("metallic system: band {n} and band {np1} overlap (max_occ = {sigma_plus:.12e}, min_unocc = {sigma_minus:.12e})")]
    MetallicSystem {
        n: usize,
        np1: usize,
        sigma_plus: f64,
        sigma_minus: f64,
    },

    /// A frequency sample lies outside the window where the undamped
    /// polarization sum converges term by term.
    #[error("frequency {omega:.6e} outside the admissible band window (gap = {gap:.6e})")]
    FrequencyOutOfBand { omega: f64, gap: f64 },

    /// A frequency lies outside (-g, g), where the homogenization operators
    /// cease to be positive.
    #[error("frequency {omega:.6e} outside the spectral gap (gap = {gap:.6e})")]
    FrequencyOutOfGap { omega: f64, gap: f64 },

    /// The finite-difference oracle detected an occupied/unoccupied crossing
    /// under the perturbation.
    #[error("gap closed under perturbation: {0}")]
    GapClosed(String),

    // --- numerical failures ------------------------------------------------------
    #[error("eigensolver failure at q = {q:?}: {message}")]
    NumericalFailure { q: [f64; 3], message: String },

    #[error("degenerate denominator in polarization sum: |{denom:.3e}| below threshold at bands ({n}, {m})")]
    DegenerateDenominator { denom: f64, n: usize, m: usize },

    #[error("screening matrix numerically singular: residual {residual:.3e}")]
    SingularScreening { residual: f64 },

    #[error("dense solve failed: {0}")]
    SolveFailure(String),

    #[error("linear system near-singular: {0}")]
    NearSingular(String),

    #[error("SCF did not converge within {max_iter} iterations (last residual {residual:.3e})")]
    MaxIterations { max_iter: usize, residual: f64 },

    #[error("Picard iteration did not converge within {max_iter} sweeps at t = {t:.6} (last update {update:.3e})")]
    MaxPicardIterations { max_iter: usize, t: f64, update: f64 },

    /// The propagated state left the admissible set by more than the
    /// configured tolerance.
    #[error("state constraint violated at t = {t:.6}: spectrum of gamma exceeds [0,1] by {violation:.3e}")]
    KViolation { t: f64, violation: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl QuartzError {
    /// CLI exit code class. 1 = config error, 2 = physics precondition,
    /// 3 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        use QuartzError::*;
        match self {
            InvalidLattice(_) | InvalidConfig(_) | InvalidArgument(_) | Io(_) => 1,
            MetallicSystem { .. }
            | FrequencyOutOfBand { .. }
            | FrequencyOutOfGap { .. }
            | GapClosed(_) => 2,
            NumericalFailure { .. }
            | DegenerateDenominator { .. }
            | SingularScreening { .. }
            | SolveFailure(_)
            | NearSingular(_)
            | MaxIterations { .. }
            | MaxPicardIterations { .. }
            | KViolation { .. } => 3,
        }
    }
}
