//! Density-matrix dynamics on a finite periodic supercell.
//!
//! The model is the Γ-point restriction of the crystal Hamiltonian to a
//! supercell of `counts` primitive cells: plane-wave modes of the supercell
//! reciprocal lattice inside a kinetic-energy ball, the primitive periodic
//! potential carried over, and the occupied projector γ⁰ of the gapped
//! ground state. States are Hermitian perturbations Q of γ⁰ expressed in
//! the H⁰ eigenbasis and constrained to −γ⁰ ≤ Q ≤ 1 − γ⁰.
//!
//! Propagation paths, all second order in the time step and validated
//! against each other and against the dense brute-force propagator:
//! exact free evolution, the order-by-order Dyson expansion of the driven
//! linear dynamics, per-step Picard solution of the Duhamel integral form,
//! a unitary midpoint propagator, and the self-consistent Hartree dynamics
//! with conservation and energy-budget diagnostics.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};

use crate::bands::{assemble_hq, solve_fiber, PeriodicPotential};
use crate::error::QuartzError;
use crate::lattice::{build_reciprocal, plane_wave_basis, Lattice, PlaneWaveBasis};
use crate::oracle::dagger;
use crate::{Result, C64};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Hilbert–Schmidt (Frobenius) norm.
pub fn hs_norm(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn comm(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let mut c = a.dot(b);
    c -= &b.dot(a);
    c
}

/// Eigendecomposition of a Hermitian matrix, ascending eigenvalues.
///
/// `eigh` hands row-major data to column-major LAPACK, which therefore
/// diagonalizes conj(H); the true eigenvectors are the conjugates of the
/// returned columns (same convention fix as the band solver).
fn herm_eigh(a: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let (vals, mut vecs) = a
        .eigh(UPLO::Lower)
        .map_err(|e| QuartzError::SolveFailure(format!("dense eigensolve failed: {e}")))?;
    vecs.mapv_inplace(|z| z.conj());
    Ok((vals, vecs))
}

/// exp(−i dt A) for Hermitian A, by spectral decomposition.
fn herm_phase_exp(a: &Array2<C64>, dt: f64) -> Result<Array2<C64>> {
    let (vals, vecs) = herm_eigh(a)?;
    let n = a.nrows();
    let mut scaled = vecs.clone();
    for c in 0..n {
        let phase = C64::from_polar(1.0, -dt * vals[c]);
        for r in 0..n {
            scaled[[r, c]] *= phase;
        }
    }
    Ok(scaled.dot(&dagger(&vecs)))
}

/// U₀(s)† A U₀(s) in the H⁰ eigenbasis: entrywise e^{+i(ε_i−ε_j)s} A_ij.
/// The inverse frame change (free propagation by s) is `s → −s`.
fn interaction_frame(eps: &Array1<f64>, a: &Array2<C64>, s: f64) -> Array2<C64> {
    let n = eps.len();
    let mut out = a.clone();
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] *= C64::from_polar(1.0, (eps[i] - eps[j]) * s);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Supercell model
// ---------------------------------------------------------------------------

/// Γ-point supercell restriction of a gapped crystal: H⁰ eigenpairs on the
/// supercell plane-wave ball, the occupied projector, and the Coulomb
/// pairing used by the Hartree dynamics and its energy diagnostics.
#[derive(Debug, Clone)]
pub struct SupercellModel {
    basis: Arc<PlaneWaveBasis>,
    h0_pw: Array2<C64>,
    eps: Array1<f64>,
    phi: Array2<C64>,
    n_occ: usize,
    n_cells: usize,
    axis_counts: [usize; 3],
    gap: f64,
    volume: f64,
}

impl SupercellModel {
    /// Build the supercell model: `counts[i]` primitive cells along lattice
    /// direction `i`, plane-wave modes with ½|K|² ≤ `e_cut` on the supercell
    /// reciprocal lattice, and `n_occ_per_cell` filled states per primitive
    /// cell. The primitive potential is periodized exactly (its coefficients
    /// land on the sublattice of supercell modes that are primitive
    /// reciprocal vectors).
    pub fn build(
        lat: &Lattice,
        pot: &PeriodicPotential,
        counts: &[usize],
        e_cut: f64,
        n_occ_per_cell: usize,
    ) -> Result<Self> {
        if counts.len() != lat.dim() {
            return Err(QuartzError::InvalidArgument(format!(
                "need one cell count per lattice direction ({} given, dim {})",
                counts.len(),
                lat.dim()
            )));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(QuartzError::InvalidArgument(
                "cell counts must be positive".into(),
            ));
        }
        let n_cells: usize = counts.iter().product();
        let vecs: Vec<[f64; 3]> = (0..lat.dim())
            .map(|i| {
                let v = lat.vec(i);
                let c = counts[i] as f64;
                [v[0] * c, v[1] * c, v[2] * c]
            })
            .collect();
        let lat_s = Lattice::new(lat.dim(), &vecs)?;
        let rl_s = build_reciprocal(&lat_s)?;
        let basis = Arc::new(plane_wave_basis(&rl_s, e_cut)?);

        // primitive coefficient at K ↦ supercell coefficient at K·counts,
        // scaled by √n_cells so that V̂_s/√|Γ_s| = V̂/√|Γ| entrywise
        let scale = (n_cells as f64).sqrt();
        let pairs: Vec<([i64; 3], C64)> = pot
            .coeffs()
            .iter()
            .map(|(k, v)| {
                let mut ks = *k;
                for (ax, &c) in counts.iter().enumerate() {
                    ks[ax] *= c as i64;
                }
                (ks, v * scale)
            })
            .collect();
        let pot_s = PeriodicPotential::from_pairs(&pairs)?;

        let h0_pw = assemble_hq(&basis, &pot_s, &[0.0; 3]).matrix().clone();
        let (eps, phi) = solve_fiber(&basis, &pot_s, &[0.0; 3])?;
        let n_occ = n_occ_per_cell * n_cells;
        if n_occ == 0 || n_occ >= basis.len() {
            return Err(QuartzError::InvalidArgument(format!(
                "need 1 ≤ occupied count < basis size ({} of {})",
                n_occ,
                basis.len()
            )));
        }
        let gap = eps[n_occ] - eps[n_occ - 1];
        if gap <= 1e-10 {
            return Err(QuartzError::GapClosed(format!(
                "supercell spectrum has no gap after {n_occ} states (gap {gap:.3e})"
            )));
        }
        let volume = lat_s.volume();
        let mut axis_counts = [1usize; 3];
        axis_counts[..counts.len()].copy_from_slice(counts);
        Ok(SupercellModel {
            basis,
            h0_pw,
            eps,
            phi,
            n_occ,
            n_cells,
            axis_counts,
            gap,
            volume,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn n_occ(&self) -> usize {
        self.n_occ
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    /// Supercell volume |Γ_s|.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn basis(&self) -> &Arc<PlaneWaveBasis> {
        &self.basis
    }

    /// H⁰ in the plane-wave basis (for brute-force cross-checks).
    pub fn h0_planewave(&self) -> &Array2<C64> {
        &self.h0_pw
    }

    /// Ascending H⁰ eigenvalues.
    pub fn energies(&self) -> &Array1<f64> {
        &self.eps
    }

    /// Eigenvector columns in plane-wave coordinates.
    pub fn orbitals(&self) -> &Array2<C64> {
        &self.phi
    }

    /// Ground-state occupation of eigenstate `i`.
    pub fn occupation(&self, i: usize) -> f64 {
        if i < self.n_occ {
            1.0
        } else {
            0.0
        }
    }

    /// γ⁰ in the eigenbasis: diagonal 0/1.
    pub fn gamma0(&self) -> Array2<C64> {
        let mut g = Array2::zeros((self.dim(), self.dim()));
        for i in 0..self.n_occ {
            g[[i, i]] = C64::new(1.0, 0.0);
        }
        g
    }

    pub fn to_planewave(&self, a_eig: &Array2<C64>) -> Array2<C64> {
        self.phi.dot(a_eig).dot(&dagger(&self.phi))
    }

    pub fn to_eigenbasis(&self, a_pw: &Array2<C64>) -> Array2<C64> {
        dagger(&self.phi).dot(a_pw).dot(&self.phi)
    }

    /// Fourier coefficients over supercell modes of a primitive-cell field:
    /// primitive coordinate K ↦ supercell coordinate K·counts, amplitudes
    /// scaled by √n_cells (the primitive-to-supercell normalization). Errors
    /// if a lifted mode falls outside the basis ball.
    pub fn lift_primitive_profile(&self, pairs: &[([i64; 3], C64)]) -> Result<Array1<C64>> {
        let mut out = Array1::zeros(self.dim());
        let scale = (self.n_cells as f64).sqrt();
        for (k, v) in pairs {
            let ks = [
                k[0] * self.axis_counts[0] as i64,
                k[1] * self.axis_counts[1] as i64,
                k[2] * self.axis_counts[2] as i64,
            ];
            let idx = self.basis.index_of(&ks).ok_or_else(|| {
                QuartzError::InvalidArgument(format!(
                    "primitive mode {k:?} lifts outside the supercell basis ball"
                ))
            })?;
            out[idx] += v * scale;
        }
        Ok(out)
    }

    /// Fourier density of a plane-wave operator kernel A: the coefficient at
    /// mode K is |Γ_s|^{−1/2} Σ_G A[G+K, G] (out-of-ball terms drop, the
    /// same truncation as every operator product in the model).
    pub fn density_kernel(&self, a_pw: &Array2<C64>) -> Array1<C64> {
        let m = self.dim();
        let inv = 1.0 / self.volume.sqrt();
        let mut rho = Array1::zeros(m);
        for t in 0..m {
            let kt = self.basis.coord(t);
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..m {
                let g = self.basis.coord(j);
                let shifted = [g[0] + kt[0], g[1] + kt[1], g[2] + kt[2]];
                if let Some(i) = self.basis.index_of(&shifted) {
                    acc += a_pw[[i, j]];
                }
            }
            rho[t] = acc * inv;
        }
        rho
    }

    /// Fourier density ρ_Q of an eigenbasis density-matrix perturbation.
    pub fn density_of(&self, q_eig: &Array2<C64>) -> Array1<C64> {
        self.density_kernel(&self.to_planewave(q_eig))
    }

    /// Periodic Coulomb potential of a charge: ŵ(K) = 4π f̂(K)/|K|², with
    /// the neutral K = 0 mode dropped.
    pub fn coulomb_potential(&self, charge_hat: &Array1<C64>) -> Array1<C64> {
        let m = self.dim();
        let zero = self.basis.zero_index();
        let mut w = Array1::zeros(m);
        for i in 0..m {
            if i == zero {
                continue;
            }
            let k = self.basis.shifted_norm(&[0.0; 3], i);
            w[i] = charge_hat[i] * (FOUR_PI / (k * k));
        }
        w
    }

    /// Multiplication operator of a Fourier field, in the eigenbasis:
    /// plane-wave entries ŵ(G−G′)/√|Γ_s|, rotated by the orbitals.
    pub fn operator_from_fourier(&self, w_hat: &Array1<C64>) -> Array2<C64> {
        let m = self.dim();
        let inv = 1.0 / self.volume.sqrt();
        let mut w_pw = Array2::zeros((m, m));
        for i in 0..m {
            let ki = self.basis.coord(i);
            for j in 0..m {
                let kj = self.basis.coord(j);
                let diff = [ki[0] - kj[0], ki[1] - kj[1], ki[2] - kj[2]];
                if let Some(idx) = self.basis.index_of(&diff) {
                    w_pw[[i, j]] = w_hat[idx] * inv;
                }
            }
        }
        self.to_eigenbasis(&w_pw)
    }

    /// Coulomb pairing of two supercell Fourier densities:
    /// D(f,g) = 4π Σ_{K≠0} conj(f̂(K)) ĝ(K) / |K|². Real whenever both
    /// densities are Hermitian-symmetric, and Tr(v_c(g)·Q) = D(ρ_Q, g)
    /// exactly in the truncated model.
    pub fn coulomb_pairing(&self, f: &Array1<C64>, g: &Array1<C64>) -> C64 {
        let zero = self.basis.zero_index();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.dim() {
            if i == zero {
                continue;
            }
            let k = self.basis.shifted_norm(&[0.0; 3], i);
            acc += f[i].conj() * g[i] * (FOUR_PI / (k * k));
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// States and drives
// ---------------------------------------------------------------------------

/// A density-matrix perturbation at one time, in the H⁰ eigenbasis.
#[derive(Debug, Clone)]
pub struct DensityMatrixState {
    pub t: f64,
    pub q: Array2<C64>,
}

impl DensityMatrixState {
    pub fn new(t: f64, q: Array2<C64>) -> Self {
        DensityMatrixState { t, q }
    }
}

/// Largest violation of the spectral constraint 0 ≤ γ⁰ + Q ≤ 1.
pub fn k_violation(model: &SupercellModel, q_eig: &Array2<C64>) -> Result<f64> {
    let mut a = model.gamma0();
    a += q_eig;
    let (vals, _) = herm_eigh(&a)?;
    let low = vals.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let high = vals.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    Ok((-low).max(high - 1.0).max(0.0))
}

/// ‖(γ⁰+Q)² − (γ⁰+Q)‖_HS — zero exactly when γ⁰+Q is an orthogonal projector.
pub fn projector_residual(model: &SupercellModel, q_eig: &Array2<C64>) -> f64 {
    let mut g = model.gamma0();
    g += q_eig;
    let mut r = g.dot(&g);
    r -= &g;
    hs_norm(&r)
}

/// One separable drive term: a fixed Fourier profile over supercell modes
/// modulated by a closed-form amplitude g(t), with g′ supplied in closed
/// form as well (the energy budget never differentiates numerically).
pub struct DriveTerm {
    profile: Array1<C64>,
    g: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    g_prime: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl DriveTerm {
    /// `real: true` asserts the profile is Hermitian-symmetric
    /// (f̂(−K) = conj f̂(K)), making the real-space field real-valued.
    pub fn new(
        model: &SupercellModel,
        profile: Array1<C64>,
        real: bool,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if profile.len() != model.dim() {
            return Err(QuartzError::InvalidArgument(format!(
                "drive profile has {} coefficients for {} modes",
                profile.len(),
                model.dim()
            )));
        }
        if real {
            let scale = profile.iter().map(|z| z.norm()).fold(1e-300, f64::max);
            for i in 0..profile.len() {
                let k = model.basis.coord(i);
                let neg = [-k[0], -k[1], -k[2]];
                let partner = model
                    .basis
                    .index_of(&neg)
                    .map(|j| profile[j])
                    .unwrap_or_else(|| C64::new(0.0, 0.0));
                if (partner - profile[i].conj()).norm() > 1e-12 * scale {
                    return Err(QuartzError::InvalidArgument(format!(
                        "profile flagged real is not Hermitian-symmetric at K = {k:?}"
                    )));
                }
            }
        }
        Ok(DriveTerm {
            profile,
            g: Box::new(g),
            g_prime: Box::new(g_prime),
        })
    }
}

/// Whether a drive perturbs the Hamiltonian directly (potential) or through
/// the self-consistent Coulomb field of an external charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveKind {
    Potential,
    Charge,
}

/// Time-dependent external drive: Σ_j g_j(t) · (fixed Fourier profile).
pub struct ExternalDrive {
    kind: DriveKind,
    terms: Vec<DriveTerm>,
    /// eigenbasis multiplication operator per term (potential drives)
    ops: Vec<Array2<C64>>,
    dim: usize,
    n_modes: usize,
}

impl ExternalDrive {
    /// A potential drive w(t) = Σ_j g_j(t) W_j added to the Hamiltonian.
    pub fn potential(model: &SupercellModel, terms: Vec<DriveTerm>) -> Self {
        let ops = terms
            .iter()
            .map(|term| model.operator_from_fourier(&term.profile))
            .collect();
        ExternalDrive {
            kind: DriveKind::Potential,
            terms,
            ops,
            dim: model.dim(),
            n_modes: model.dim(),
        }
    }

    /// A charge drive ν(t) = Σ_j g_j(t) ν̂_j entering through the Coulomb
    /// field. Profiles must be neutral (zero coefficient at K = 0).
    pub fn charge(model: &SupercellModel, terms: Vec<DriveTerm>) -> Result<Self> {
        let zero = model.basis.zero_index();
        for term in &terms {
            if term.profile[zero].norm() > 0.0 {
                return Err(QuartzError::InvalidArgument(
                    "charge drive profiles must be neutral (zero K = 0 mode)".into(),
                ));
            }
        }
        Ok(ExternalDrive {
            kind: DriveKind::Charge,
            terms,
            ops: Vec::new(),
            dim: model.dim(),
            n_modes: model.dim(),
        })
    }

    pub fn kind(&self) -> DriveKind {
        self.kind
    }

    /// Σ_j g_j(t) ν̂_j over supercell modes.
    pub fn charge_hat(&self, t: f64) -> Array1<C64> {
        let mut out = Array1::zeros(self.n_modes);
        for term in &self.terms {
            let g = (term.g)(t);
            out.zip_mut_with(&term.profile, |o, p| *o += p * g);
        }
        out
    }

    /// Σ_j g_j′(t) ν̂_j over supercell modes.
    pub fn charge_hat_prime(&self, t: f64) -> Array1<C64> {
        let mut out = Array1::zeros(self.n_modes);
        for term in &self.terms {
            let gp = (term.g_prime)(t);
            out.zip_mut_with(&term.profile, |o, p| *o += p * gp);
        }
        out
    }

    /// Eigenbasis potential operator Σ_j g_j(t) W_j (potential drives only).
    pub fn potential_operator(&self, t: f64) -> Array2<C64> {
        let mut w = Array2::zeros((self.dim, self.dim));
        for (term, op) in self.terms.iter().zip(&self.ops) {
            let g = (term.g)(t);
            w.zip_mut_with(op, |o, p| *o += p * g);
        }
        w
    }
}

// ---------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------

/// Exact free evolution Q ← U₀(dt) Q U₀(dt)†.
pub fn free_evolve(
    model: &SupercellModel,
    state: &DensityMatrixState,
    dt: f64,
) -> DensityMatrixState {
    DensityMatrixState {
        t: state.t + dt,
        q: interaction_frame(&model.eps, &state.q, -dt),
    }
}

fn validate_dyson_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() || t_grid[0] != 0.0 {
        return Err(QuartzError::InvalidArgument(
            "Dyson time grid must start at t = 0".into(),
        ));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QuartzError::InvalidArgument(
            "time grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// All Dyson orders 1..=n_max of the driven linear dynamics on a shared
/// time grid, in the Schrödinger picture: result[n−1][k] is Q_n(t_k).
///
/// The nested Duhamel integrals are evaluated as cumulative trapezoid sums
/// in the interaction frame, where the recursion is
/// Q̃_n(t) = ∫₀ᵗ −i [W̃(s), X(s)] ds with X = γ⁰ + Q⁰ for n = 1 and
/// X = Q̃_{n−1} afterwards. The fixed point of this discretization is
/// exactly the per-step trapezoid (Picard) solution, so the truncated sum
/// and the Picard trajectory differ only by the series tail.
pub fn dyson_expansion(
    model: &SupercellModel,
    drive: &ExternalDrive,
    n_max: usize,
    t_grid: &[f64],
    q0: &Array2<C64>,
) -> Result<Vec<Vec<Array2<C64>>>> {
    if drive.kind() != DriveKind::Potential {
        return Err(QuartzError::InvalidArgument(
            "the Dyson expansion is defined for potential drives".into(),
        ));
    }
    if n_max == 0 {
        return Err(QuartzError::InvalidArgument(
            "need at least one Dyson order".into(),
        ));
    }
    validate_dyson_grid(t_grid)?;
    let m = model.dim();
    if q0.nrows() != m || q0.ncols() != m {
        return Err(QuartzError::InvalidArgument(
            "initial state dimension does not match the model".into(),
        ));
    }
    let nt = t_grid.len();
    // interaction-frame drive at every grid time
    let w_tilde: Vec<Array2<C64>> = t_grid
        .iter()
        .map(|&t| interaction_frame(&model.eps, &drive.potential_operator(t), t))
        .collect();
    let source0 = {
        let mut s = model.gamma0();
        s += q0;
        s
    };

    let minus_i = C64::new(0.0, -1.0);
    let mut orders: Vec<Vec<Array2<C64>>> = Vec::with_capacity(n_max);
    let mut prev: Vec<Array2<C64>> = Vec::new(); // Q̃_{n−1} trajectory
    for n in 1..=n_max {
        let mut integrand: Vec<Array2<C64>> = Vec::with_capacity(nt);
        for k in 0..nt {
            let x = if n == 1 { &source0 } else { &prev[k] };
            integrand.push(comm(&w_tilde[k], x).mapv(|z| z * minus_i));
        }
        let mut cur: Vec<Array2<C64>> = Vec::with_capacity(nt);
        cur.push(Array2::zeros((m, m)));
        for k in 1..nt {
            let h = t_grid[k] - t_grid[k - 1];
            let mut next = cur[k - 1].clone();
            next.zip_mut_with(&integrand[k - 1], |a, b| *a += b * (h / 2.0));
            next.zip_mut_with(&integrand[k], |a, b| *a += b * (h / 2.0));
            cur.push(next);
        }
        orders.push(
            cur.iter()
                .zip(t_grid)
                .map(|(qt, &t)| interaction_frame(&model.eps, qt, -t))
                .collect(),
        );
        prev = cur;
    }
    Ok(orders)
}

/// The order-n Dyson term Q_n(t) on the grid (Schrödinger picture).
pub fn dyson_term(
    model: &SupercellModel,
    drive: &ExternalDrive,
    n: usize,
    t_grid: &[f64],
    q0: &Array2<C64>,
) -> Result<Vec<Array2<C64>>> {
    Ok(dyson_expansion(model, drive, n, t_grid, q0)?.pop().unwrap())
}

/// Stopping control for the per-step Picard iterations.
#[derive(Debug, Clone, Copy)]
pub struct PicardOptions {
    /// successive-iterate HS distance below which a step is accepted
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            tol: 1e-12,
            max_iter: 80,
        }
    }
}

/// Iterate q ← known + (h/2)·rhs(q) to the fixed point.
fn picard_fixed_point(
    known: &Array2<C64>,
    h: f64,
    mut rhs: impl FnMut(&Array2<C64>) -> Array2<C64>,
    guess: Array2<C64>,
    t_next: f64,
    opts: &PicardOptions,
) -> Result<Array2<C64>> {
    let mut q = guess;
    let mut update = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut next = known.clone();
        next.zip_mut_with(&rhs(&q), |a, b| *a += b * (h / 2.0));
        let mut diff = next.clone();
        diff -= &q;
        update = hs_norm(&diff);
        q = next;
        if update < opts.tol {
            // symmetrize away rounding drift; the exact iteration is
            // Hermiticity-preserving
            let qd = dagger(&q);
            q.zip_mut_with(&qd, |a, b| *a = (*a + *b) / 2.0);
            return Ok(q);
        }
    }
    Err(QuartzError::MaxPicardIterations {
        max_iter: opts.max_iter,
        t: t_next,
        update,
    })
}

/// Per-step Picard solution of the effective (externally driven) dynamics
/// in Duhamel form: over each step,
/// Q(t+h) = U₀(h) Q(t) U₀(h)† + ∫ U₀(t+h−s)(−i)[w(s), γ⁰+Q(s)] U₀(t+h−s)† ds
/// with the integral closed by the trapezoid rule and the implicit right
/// endpoint iterated to the fixed point.
pub fn effective_picard(
    model: &SupercellModel,
    drive: &ExternalDrive,
    q0: &Array2<C64>,
    t_grid: &[f64],
    opts: &PicardOptions,
) -> Result<Vec<DensityMatrixState>> {
    if drive.kind() != DriveKind::Potential {
        return Err(QuartzError::InvalidArgument(
            "the effective dynamics takes a potential drive".into(),
        ));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QuartzError::InvalidArgument(
            "time grid must be non-empty and strictly increasing".into(),
        ));
    }
    let m = model.dim();
    if q0.nrows() != m || q0.ncols() != m {
        return Err(QuartzError::InvalidArgument(
            "initial state dimension does not match the model".into(),
        ));
    }
    let gamma0 = model.gamma0();
    let minus_i = C64::new(0.0, -1.0);
    let rhs_at = |w: &Array2<C64>, q: &Array2<C64>| -> Array2<C64> {
        let mut x = gamma0.clone();
        x += q;
        comm(w, &x).mapv(|z| z * minus_i)
    };

    let mut out = Vec::with_capacity(t_grid.len());
    out.push(DensityMatrixState::new(t_grid[0], q0.clone()));
    for k in 1..t_grid.len() {
        let (t_prev, t_next) = (t_grid[k - 1], t_grid[k]);
        let h = t_next - t_prev;
        let w_prev = drive.potential_operator(t_prev);
        let w_next = drive.potential_operator(t_next);
        let q_prev = &out[k - 1].q;
        let mut known = q_prev.clone();
        known.zip_mut_with(&rhs_at(&w_prev, q_prev), |a, b| *a += b * (h / 2.0));
        let known = interaction_frame(&model.eps, &known, -h);
        let guess = interaction_frame(&model.eps, q_prev, -h);
        let q_next = picard_fixed_point(
            &known,
            h,
            |q| rhs_at(&w_next, q),
            guess,
            t_next,
            opts,
        )?;
        out.push(DensityMatrixState::new(t_next, q_next));
    }
    Ok(out)
}

/// Unitary reference propagator: exponential midpoint stepping
/// U(t+h) = exp(−i h (H⁰ + w(t+h/2))) U(t) in the eigenbasis, with a polar
/// correction whenever ‖U†U − I‖ drifts above 1e-10.
pub fn unitary_propagator(
    model: &SupercellModel,
    drive: &ExternalDrive,
    t_grid: &[f64],
) -> Result<Vec<Array2<C64>>> {
    if drive.kind() != DriveKind::Potential {
        return Err(QuartzError::InvalidArgument(
            "the unitary propagator takes a potential drive".into(),
        ));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QuartzError::InvalidArgument(
            "time grid must be non-empty and strictly increasing".into(),
        ));
    }
    let m = model.dim();
    let h0 = Array2::from_diag(&model.eps.mapv(|e| C64::new(e, 0.0)));
    let mut u = Array2::eye(m);
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(u.clone());
    for k in 1..t_grid.len() {
        let h = t_grid[k] - t_grid[k - 1];
        let t_mid = t_grid[k - 1] + h / 2.0;
        let mut ham = h0.clone();
        ham += &drive.potential_operator(t_mid);
        u = herm_phase_exp(&ham, h)?.dot(&u);
        let mut drift = dagger(&u).dot(&u);
        for i in 0..m {
            drift[[i, i]] -= C64::new(1.0, 0.0);
        }
        if hs_norm(&drift) > 1e-10 {
            // polar correction U ← U (U†U)^{−1/2}
            let mut s = dagger(&u).dot(&u);
            let (vals, vecs) = herm_eigh(&s)?;
            let mut scaled = vecs.clone();
            for c in 0..m {
                let f = C64::new(1.0 / vals[c].max(1e-300).sqrt(), 0.0);
                for r in 0..m {
                    scaled[[r, c]] *= f;
                }
            }
            s = scaled.dot(&dagger(&vecs));
            u = u.dot(&s);
        }
        out.push(u.clone());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Self-consistent Hartree dynamics
// ---------------------------------------------------------------------------

/// Control for [`hartree_evolve`].
#[derive(Debug, Clone, Copy)]
pub struct HartreeOptions {
    pub picard: PicardOptions,
    /// Drop the induced Coulomb term v_c(ρ_Q), leaving the linear dynamics
    /// driven by −v_c(ν(t)) alone — the linearization used for brute-force
    /// cross-checks against the dense propagator.
    pub linearized: bool,
}

impl Default for HartreeOptions {
    fn default() -> Self {
        HartreeOptions {
            picard: PicardOptions::default(),
            linearized: false,
        }
    }
}

/// One recorded sample of a Hartree trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    /// density-matrix perturbation in the eigenbasis
    pub q: Array2<C64>,
    /// Fourier density ρ_Q over supercell modes
    pub rho: Array1<C64>,
    /// self-consistent potential operator applied at this time (eigenbasis)
    pub w_eig: Array2<C64>,
}

/// Conservation and energy diagnostics along a trajectory, sample-aligned.
#[derive(Debug, Clone, Default)]
pub struct EnergyReport {
    pub t: Vec<f64>,
    /// Tr Q(t) — conserved by the commutator structure
    pub trace: Vec<f64>,
    /// E(t) = Tr(H⁰Q) − D(ρ_Q, ν(t)) + ½ D(ρ_Q, ρ_Q)
    pub energy: Vec<f64>,
    /// ∫₀ᵗ D(ρ_{Q(s)}, ν′(s)) ds by the trapezoid rule
    pub work_integral: Vec<f64>,
    /// |E(t) − E(0) + work(t)| — O(Δt²) for the exact dynamics
    pub budget_residual: Vec<f64>,
    /// spectral excursion of γ⁰+Q outside [0, 1]
    pub k_violation: Vec<f64>,
    /// ‖(γ⁰+Q)² − (γ⁰+Q)‖_HS
    pub projector_residual: Vec<f64>,
}

/// Self-consistent Hartree propagation under an external charge drive:
/// per-step Picard on the mild form with w(s) = v_c(ρ_{Q(s)} − ν(s)),
/// recording the trajectory, densities, and the energy/conservation report.
///
/// Errors with `KViolation` if the spectral constraint on γ⁰+Q drifts
/// beyond 1e-6 (the scheme preserves it to its order), and with
/// `MaxPicardIterations` if a step fails to contract.
pub fn hartree_evolve(
    model: &SupercellModel,
    drive: &ExternalDrive,
    q0: &Array2<C64>,
    t_grid: &[f64],
    opts: &HartreeOptions,
) -> Result<(Vec<TrajectorySample>, EnergyReport)> {
    if drive.kind() != DriveKind::Charge {
        return Err(QuartzError::InvalidArgument(
            "the Hartree dynamics takes a charge drive".into(),
        ));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QuartzError::InvalidArgument(
            "time grid must be non-empty and strictly increasing".into(),
        ));
    }
    let m = model.dim();
    if q0.nrows() != m || q0.ncols() != m {
        return Err(QuartzError::InvalidArgument(
            "initial state dimension does not match the model".into(),
        ));
    }
    let gamma0 = model.gamma0();
    let minus_i = C64::new(0.0, -1.0);
    let k_tol = 1e-6;

    // self-consistent potential operator at (t, Q)
    let w_of = |t: f64, rho: &Array1<C64>| -> Array2<C64> {
        let nu = drive.charge_hat(t);
        let mut charge: Array1<C64> = if opts.linearized {
            Array1::zeros(m)
        } else {
            rho.clone()
        };
        charge.zip_mut_with(&nu, |c, n| *c -= n);
        model.operator_from_fourier(&model.coulomb_potential(&charge))
    };
    let rhs = |w: &Array2<C64>, q: &Array2<C64>| -> Array2<C64> {
        let mut x = gamma0.clone();
        x += q;
        comm(w, &x).mapv(|z| z * minus_i)
    };

    let mut samples: Vec<TrajectorySample> = Vec::with_capacity(t_grid.len());
    let mut report = EnergyReport::default();

    let push_sample = |samples: &mut Vec<TrajectorySample>,
                           report: &mut EnergyReport,
                           t: f64,
                           q: Array2<C64>|
     -> Result<()> {
        let viol = k_violation(model, &q)?;
        if viol > k_tol {
            return Err(QuartzError::KViolation { t, violation: viol });
        }
        let rho = model.density_of(&q);
        let w_eig = w_of(t, &rho);
        let nu = drive.charge_hat(t);
        let trace = q.diag().iter().map(|z| z.re).sum::<f64>();
        let e_band: f64 = (0..m).map(|i| model.eps[i] * q[[i, i]].re).sum();
        let energy = e_band - model.coulomb_pairing(&rho, &nu).re
            + 0.5 * model.coulomb_pairing(&rho, &rho).re;
        let power = model.coulomb_pairing(&rho, &drive.charge_hat_prime(t)).re;
        let (work, budget) = if report.t.is_empty() {
            (0.0, 0.0)
        } else {
            let k = report.t.len() - 1;
            let h = t - report.t[k];
            let prev_power = model
                .coulomb_pairing(&samples[k].rho, &drive.charge_hat_prime(report.t[k]))
                .re;
            let work = report.work_integral[k] + (h / 2.0) * (prev_power + power);
            (work, (energy - report.energy[0] + work).abs())
        };
        report.t.push(t);
        report.trace.push(trace);
        report.energy.push(energy);
        report.work_integral.push(work);
        report.budget_residual.push(budget);
        report.k_violation.push(viol);
        report
            .projector_residual
            .push(projector_residual(model, &q));
        samples.push(TrajectorySample { t, q, rho, w_eig });
        Ok(())
    };

    push_sample(&mut samples, &mut report, t_grid[0], q0.clone())?;
    for k in 1..t_grid.len() {
        let (t_prev, t_next) = (t_grid[k - 1], t_grid[k]);
        let h = t_next - t_prev;
        let (q_prev, w_prev) = {
            let s = &samples[k - 1];
            (s.q.clone(), s.w_eig.clone())
        };
        let mut known = q_prev.clone();
        known.zip_mut_with(&rhs(&w_prev, &q_prev), |a, b| *a += b * (h / 2.0));
        let known = interaction_frame(&model.eps, &known, -h);
        let guess = interaction_frame(&model.eps, &q_prev, -h);
        let q_next = picard_fixed_point(
            &known,
            h,
            |q| {
                let rho = model.density_of(q);
                rhs(&w_of(t_next, &rho), q)
            },
            guess,
            t_next,
            &opts.picard,
        )?;
        push_sample(&mut samples, &mut report, t_next, q_next)?;
    }
    Ok((samples, report))
}

// ---------------------------------------------------------------------------
// Sobolev-weighted norm diagnostics
// ---------------------------------------------------------------------------

/// The three pieces of the perturbation norm: the Hilbert–Schmidt size of
/// the kinetically weighted off-diagonal part and the trace norms of the
/// weighted occupied/unoccupied diagonal blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QNormDiagnostics {
    /// ‖(1−Δ)^{1/2} (γ⁰ Q γ⊥ + γ⊥ Q γ⁰)‖_HS
    pub hs_offdiag_weighted: f64,
    /// Tr |(1−Δ)^{1/2} γ⊥ Q γ⊥ (1−Δ)^{1/2}|
    pub trace_pp: f64,
    /// Tr |(1−Δ)^{1/2} γ⁰ Q γ⁰ (1−Δ)^{1/2}|
    pub trace_mm: f64,
}

impl QNormDiagnostics {
    pub fn total(&self) -> f64 {
        self.hs_offdiag_weighted + self.trace_pp + self.trace_mm
    }
}

/// Evaluate the norm pieces of a Hermitian eigenbasis perturbation Q, with
/// (1−Δ)^{1/2} the diagonal weight √(1+|K|²) in the plane-wave basis.
pub fn q_norm_diagnostics(model: &SupercellModel, q_eig: &Array2<C64>) -> Result<QNormDiagnostics> {
    let m = model.dim();
    let n_occ = model.n_occ();
    let weights: Vec<f64> = (0..m)
        .map(|i| {
            let k = model.basis.shifted_norm(&[0.0; 3], i);
            (1.0 + k * k).sqrt()
        })
        .collect();
    let weighted = |a_pw: &Array2<C64>, both_sides: bool| -> Array2<C64> {
        let mut out = a_pw.clone();
        for i in 0..m {
            for j in 0..m {
                out[[i, j]] *= C64::new(weights[i], 0.0);
                if both_sides {
                    out[[i, j]] *= C64::new(weights[j], 0.0);
                }
            }
        }
        out
    };
    let block = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| -> Array2<C64> {
        let mut b: Array2<C64> = Array2::zeros((m, m));
        for i in rows {
            for j in cols.clone() {
                b[[i, j]] = q_eig[[i, j]];
            }
        }
        b
    };

    let mut offdiag = block(0..n_occ, n_occ..m);
    offdiag += &block(n_occ..m, 0..n_occ);
    let hs_offdiag_weighted = hs_norm(&weighted(&model.to_planewave(&offdiag), false));

    let trace_norm = |b_eig: &Array2<C64>| -> Result<f64> {
        let w = weighted(&model.to_planewave(b_eig), true);
        let (vals, _) = herm_eigh(&w)?;
        Ok(vals.iter().map(|v| v.abs()).sum())
    };
    let trace_mm = trace_norm(&block(0..n_occ, 0..n_occ))?;
    let trace_pp = trace_norm(&block(n_occ..m, n_occ..m))?;
    Ok(QNormDiagnostics {
        hs_offdiag_weighted,
        trace_pp,
        trace_mm,
    })
}
