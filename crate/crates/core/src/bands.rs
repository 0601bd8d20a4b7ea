//! Bloch fibers of a periodic one-body Hamiltonian in a plane-wave basis.
//!
//! The fiber at quasi-momentum q is H(q) = ½|q - i∇|² + V acting on
//! cell-periodic functions; on the orthonormal plane waves e_G its matrix is
//!
//!   H(q)[G, G'] = ½|q + G|² δ_{GG'} + V̂(G - G') / √|Γ|,
//!
//! where V(x) = |Γ|^{-1/2} Σ_K V̂(K) e^{iK·x}. Eigenvalues are the bands
//! ε_{n,q} (ascending), eigenvectors the periodic parts u_{n,q}.

use crate::coulomb::{vc_apply, FourierCoeffs, FourierDensity};
use crate::error::QuartzError;
use crate::lattice::{BrillouinGrid, PlaneWaveBasis};
use crate::{Result, C64};
use ndarray::{Array1, Array2, ArrayView1};
use ndarray_linalg::{Eigh, UPLO};
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::Arc;

/// Real-valued periodic potential, stored as Fourier coefficients on integer
/// reciprocal coordinates. Entries absent from the map are zero, so the same
/// potential can be evaluated on any difference set G - G′.
///
/// Real-valuedness (V̂(-K) = conj V̂(K)) is enforced at construction; it is
/// what makes every fiber matrix Hermitian.
#[derive(Debug, Clone, Default)]
pub struct PeriodicPotential {
    coeffs: HashMap<[i64; 3], C64>,
}

impl PeriodicPotential {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: &[([i64; 3], C64)]) -> Result<Self> {
        let mut coeffs = HashMap::with_capacity(pairs.len());
        for (k, v) in pairs {
            if coeffs.insert(*k, *v).is_some() {
                return Err(QuartzError::InvalidArgument(format!(
                    "duplicate potential coefficient at K = {k:?}"
                )));
            }
        }
        let scale = coeffs
            .values()
            .map(|z: &C64| z.norm())
            .fold(0.0_f64, f64::max)
            .max(1.0);
        for (k, v) in &coeffs {
            let neg = [-k[0], -k[1], -k[2]];
            let partner = coeffs.get(&neg).copied().unwrap_or_else(|| C64::new(0.0, 0.0));
            if (partner - v.conj()).norm() > 1e-12 * scale {
                return Err(QuartzError::InvalidArgument(format!(
                    "potential is not real-valued: V̂({neg:?}) != conj V̂({k:?})"
                )));
            }
        }
        Ok(PeriodicPotential { coeffs })
    }

    /// Adopt the coefficients of a basis-resident field (e.g. an SCF iterate).
    pub fn from_fourier(f: &FourierCoeffs) -> Result<Self> {
        let pairs: Vec<_> = f
            .basis()
            .coords()
            .iter()
            .enumerate()
            .map(|(i, m)| (*m, f.coeffs()[i]))
            .collect();
        Self::from_pairs(&pairs)
    }

    pub fn at(&self, k: &[i64; 3]) -> C64 {
        self.coeffs.get(k).copied().unwrap_or_else(|| C64::new(0.0, 0.0))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|v| v.norm() == 0.0)
    }

    pub fn coeffs(&self) -> &HashMap<[i64; 3], C64> {
        &self.coeffs
    }
}

/// Dense fiber Hamiltonian at one quasi-momentum.
#[derive(Debug, Clone)]
pub struct BlochHamiltonian {
    q: [f64; 3],
    h: Array2<C64>,
}

impl BlochHamiltonian {
    pub fn q(&self) -> &[f64; 3] {
        &self.q
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.h
    }

    /// max |H - H†| over entries.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.h.nrows();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.h[[i, j]] - self.h[[j, i]].conj()).norm());
            }
        }
        worst
    }
}

/// Assemble the fiber matrix at Cartesian quasi-momentum q.
pub fn assemble_hq(basis: &PlaneWaveBasis, pot: &PeriodicPotential, q: &[f64; 3]) -> BlochHamiltonian {
    let m = basis.len();
    let inv_sqrt_vol = 1.0 / basis.reciprocal().cell_volume().sqrt();
    let mut h = Array2::zeros((m, m));
    for i in 0..m {
        let ki = basis.coord(i);
        for j in 0..m {
            let kj = basis.coord(j);
            let diff = [ki[0] - kj[0], ki[1] - kj[1], ki[2] - kj[2]];
            h[[i, j]] = pot.at(&diff) * inv_sqrt_vol;
        }
        let kin = basis.shifted_norm(q, i);
        h[[i, i]] += C64::new(0.5 * kin * kin, 0.0);
    }
    BlochHamiltonian { q: *q, h }
}

/// Diagonalize one fiber: ascending eigenvalues, orthonormal columns.
pub fn solve_fiber(
    basis: &PlaneWaveBasis,
    pot: &PeriodicPotential,
    q: &[f64; 3],
) -> Result<(Array1<f64>, Array2<C64>)> {
    let h = assemble_hq(basis, pot, q);
    let (eps, mut vecs) = h
        .h
        .eigh(UPLO::Lower)
        .map_err(|e| QuartzError::NumericalFailure {
            q: *q,
            message: e.to_string(),
        })?;
    // eigh hands row-major data to column-major LAPACK, which therefore
    // diagonalizes conj(H); the true eigenvectors are the conjugates of the
    // returned columns. Verified against H u = ε u in the test suite.
    vecs.mapv_inplace(|z| z.conj());
    debug_assert!(eps.windows(2).into_iter().all(|w| w[0] <= w[1]));
    Ok((eps, vecs))
}

/// Band structure over a Brillouin-zone grid: all eigenpairs of every fiber.
#[derive(Debug, Clone)]
pub struct BandStructure {
    basis: Arc<PlaneWaveBasis>,
    grid: Arc<BrillouinGrid>,
    eps: Vec<Array1<f64>>,
    vecs: Vec<Array2<C64>>,
}

impl BandStructure {
    pub fn basis(&self) -> &Arc<PlaneWaveBasis> {
        &self.basis
    }

    pub fn grid(&self) -> &Arc<BrillouinGrid> {
        &self.grid
    }

    pub fn n_bands(&self) -> usize {
        self.basis.len()
    }

    /// Eigenvalues at grid point iq, ascending.
    pub fn energies(&self, iq: usize) -> &Array1<f64> {
        &self.eps[iq]
    }

    /// Eigenvector matrix at grid point iq; column n is band n.
    pub fn vectors(&self, iq: usize) -> &Array2<C64> {
        &self.vecs[iq]
    }

    pub fn band(&self, iq: usize, n: usize) -> ArrayView1<'_, C64> {
        self.vecs[iq].column(n)
    }

    /// Replace the eigenvector phases/degenerate mixing. Test hook for gauge
    /// invariance; keeps energies untouched.
    #[doc(hidden)]
    pub fn set_vectors(&mut self, iq: usize, v: Array2<C64>) {
        assert_eq!(v.dim(), self.vecs[iq].dim());
        self.vecs[iq] = v;
    }
}

/// Diagonalize every fiber of the grid (in parallel).
pub fn solve_bands(
    basis: &Arc<PlaneWaveBasis>,
    grid: &Arc<BrillouinGrid>,
    pot: &PeriodicPotential,
) -> Result<BandStructure> {
    let solved: Vec<Result<(Array1<f64>, Array2<C64>)>> = (0..grid.len())
        .into_par_iter()
        .map(|iq| solve_fiber(basis, pot, grid.cart(iq)))
        .collect();
    let mut eps = Vec::with_capacity(grid.len());
    let mut vecs = Vec::with_capacity(grid.len());
    for r in solved {
        let (e, v) = r?;
        eps.push(e);
        vecs.push(v);
    }
    Ok(BandStructure {
        basis: basis.clone(),
        grid: grid.clone(),
        eps,
        vecs,
    })
}

/// Free-electron reference: the exact spectrum { ½|q+G|² } of every fiber,
/// assembled without touching the eigensolver. Eigenvector columns are the
/// coordinate unit vectors permuted into energy order.
pub fn free_bands(basis: &Arc<PlaneWaveBasis>, grid: &Arc<BrillouinGrid>) -> BandStructure {
    let m = basis.len();
    let mut eps = Vec::with_capacity(grid.len());
    let mut vecs = Vec::with_capacity(grid.len());
    for iq in 0..grid.len() {
        let q = grid.cart(iq);
        let mut pairs: Vec<(f64, usize)> = (0..m)
            .map(|i| {
                let k = basis.shifted_norm(q, i);
                (0.5 * k * k, i)
            })
            .collect();
        // stable sort: ties keep lexicographic G order, deterministic
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut e = Array1::zeros(m);
        let mut v: Array2<C64> = Array2::zeros((m, m));
        for (n, (en, g)) in pairs.into_iter().enumerate() {
            e[n] = en;
            v[[g, n]] = C64::new(1.0, 0.0);
        }
        eps.push(e);
        vecs.push(v);
    }
    BandStructure {
        basis: basis.clone(),
        grid: grid.clone(),
        eps,
        vecs,
    }
}

/// Fermi-level data of an insulating configuration with `n_occupied` filled
/// bands (spinless).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct FermiData {
    pub n_occupied: usize,
    /// max over the grid of band N
    pub sigma_plus: f64,
    /// min over the grid of band N+1
    pub sigma_minus: f64,
    /// midgap Fermi level
    pub fermi: f64,
    /// spectral gap (positive for an insulator)
    pub gap: f64,
}

pub fn fermi_data(bands: &BandStructure, n_occupied: usize) -> Result<FermiData> {
    let nb = bands.n_bands();
    if n_occupied == 0 || n_occupied >= nb {
        return Err(QuartzError::InvalidArgument(format!(
            "need 1 ≤ n_occupied < {nb}, got {n_occupied}"
        )));
    }
    let mut sigma_plus = f64::NEG_INFINITY;
    let mut sigma_minus = f64::INFINITY;
    for iq in 0..bands.grid().len() {
        let e = bands.energies(iq);
        sigma_plus = sigma_plus.max(e[n_occupied - 1]);
        sigma_minus = sigma_minus.min(e[n_occupied]);
    }
    if sigma_plus >= sigma_minus {
        return Err(QuartzError::MetallicSystem {
            n: n_occupied,
            np1: n_occupied + 1,
            sigma_plus,
            sigma_minus,
        });
    }
    Ok(FermiData {
        n_occupied,
        sigma_plus,
        sigma_minus,
        fermi: 0.5 * (sigma_plus + sigma_minus),
        gap: sigma_minus - sigma_plus,
    })
}

/// ⟨bra, e^{-iK·x} ket⟩ on coefficient vectors of the same basis:
/// Σ_G conj(bra(G)) ket(G + K). Modes shifted outside the basis contribute
/// zero — the sum is exact for in-basis data, no aliasing.
pub fn matrix_element(
    basis: &PlaneWaveBasis,
    bra: ArrayView1<C64>,
    ket: ArrayView1<C64>,
    k: &[i64; 3],
) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (i, g) in basis.coords().iter().enumerate() {
        let shifted = [g[0] + k[0], g[1] + k[1], g[2] + k[2]];
        if let Some(j) = basis.index_of(&shifted) {
            acc += bra[i].conj() * ket[j];
        }
    }
    acc
}

/// ⟨u_{m, q_bra}, e^{-iK·x} u_{n, q_ket}⟩ between two stored fibers.
pub fn bloch_matrix_element(
    bands: &BandStructure,
    m_band: usize,
    iq_bra: usize,
    n_band: usize,
    iq_ket: usize,
    k: &[i64; 3],
) -> C64 {
    matrix_element(
        bands.basis(),
        bands.band(iq_bra, m_band),
        bands.band(iq_ket, n_band),
        k,
    )
}

/// Electronic density of the lowest `n_occupied` bands, on the basis ball:
/// ρ̂(K) = |Γ|^{-1/2} Σ_q w_q Σ_{n≤N} ⟨u_{n,q}, e^{-iK·x} u_{n,q}⟩.
///
/// The |Γ|^{-1/2} factor places ρ̂ in the same normalization as every other
/// field here (f = |Γ|^{-1/2} Σ f̂ e^{iK·x}), so that ∫_Γ ρ = N exactly.
pub fn density_from_bands(bands: &BandStructure, n_occupied: usize) -> Result<FourierDensity> {
    let basis = bands.basis();
    let grid = bands.grid();
    let inv_sqrt_vol = 1.0 / basis.reciprocal().cell_volume().sqrt();
    let mut rho: Array1<C64> = Array1::zeros(basis.len());
    for iq in 0..grid.len() {
        let w = grid.weight(iq);
        for n in 0..n_occupied {
            let u = bands.band(iq, n);
            for (ik, k) in basis.coords().iter().enumerate() {
                rho[ik] += w * matrix_element(basis, u, u, k);
            }
        }
    }
    rho.mapv_inplace(|z| z * inv_sqrt_vol);
    FourierCoeffs::new(basis.clone(), rho, true)
}

/// Options for the self-consistent loop.
#[derive(Debug, Clone)]
pub struct ScfOptions {
    pub n_occupied: usize,
    /// linear mixing fraction of the new iterate
    pub alpha: f64,
    /// sup-norm tolerance on successive potential coefficients
    pub tol: f64,
    pub max_iter: usize,
    /// warm-start coefficients on the basis ball; default is the bare nuclear
    /// potential v_c(-ρ_nuc)
    pub initial: Option<Array1<C64>>,
}

impl ScfOptions {
    pub fn new(n_occupied: usize) -> Self {
        ScfOptions {
            n_occupied,
            alpha: 0.4,
            tol: 1e-10,
            max_iter: 500,
            initial: None,
        }
    }
}

#[derive(Debug)]
pub struct ScfResult {
    pub potential: PeriodicPotential,
    /// converged potential on the basis ball (same data as `potential`)
    pub coeffs: Array1<C64>,
    pub bands: BandStructure,
    pub fermi: FermiData,
    pub density: FourierDensity,
    pub iterations: usize,
    pub residual: f64,
}

/// Damped fixed-point iteration for the periodic Hartree potential:
/// V ↦ v_c(ρ[V] − ρ_nuc), V_{k+1} = (1-α) V_k + α F(V_k).
///
/// The loop errors with `MetallicSystem` as soon as any iterate loses the
/// spectral gap, and with `MaxIterations` when the sup-norm update fails to
/// reach `tol`.
pub fn scf_periodic(
    basis: &Arc<PlaneWaveBasis>,
    grid: &Arc<BrillouinGrid>,
    rho_nuc: &FourierDensity,
    opts: &ScfOptions,
) -> Result<ScfResult> {
    if !(opts.alpha > 0.0 && opts.alpha <= 1.0) {
        return Err(QuartzError::InvalidArgument(format!(
            "mixing fraction must lie in (0, 1], got {}",
            opts.alpha
        )));
    }
    // neutrality: ∫ρ_nuc = √|Γ| ρ̂_nuc(0) must equal the electron count
    let vol = basis.reciprocal().cell_volume();
    let nuc_charge = (rho_nuc.coeffs()[basis.zero_index()] * vol.sqrt()).re;
    if (nuc_charge - opts.n_occupied as f64).abs() > 1e-8 * (opts.n_occupied as f64).max(1.0) {
        return Err(QuartzError::InvalidArgument(format!(
            "nuclear charge {nuc_charge:.6} does not match {} electrons per cell",
            opts.n_occupied
        )));
    }

    let mut v: Array1<C64> = match &opts.initial {
        Some(v0) => {
            if v0.len() != basis.len() {
                return Err(QuartzError::InvalidArgument(
                    "warm-start potential has wrong length".into(),
                ));
            }
            v0.clone()
        }
        None => {
            // bare nuclear potential v_c(-ρ_nuc)
            let mut neg = rho_nuc.clone();
            neg.coeffs_mut().mapv_inplace(|z| -z);
            vc_apply(&neg).coeffs().clone()
        }
    };

    let mut last = (None, f64::INFINITY); // (state, residual)
    for it in 0..opts.max_iter {
        let vf = FourierCoeffs::new(basis.clone(), v.clone(), false)?;
        let pot = PeriodicPotential::from_fourier(&vf)?;
        let bands = solve_bands(basis, grid, &pot)?;
        let fermi = fermi_data(&bands, opts.n_occupied)?;
        let rho = density_from_bands(&bands, opts.n_occupied)?;
        let mut diff = rho.clone();
        for i in 0..basis.len() {
            diff.coeffs_mut()[i] -= rho_nuc.coeffs()[i];
        }
        let target = vc_apply(&diff);
        let mut residual = 0.0_f64;
        let mut v_next = v.clone();
        for i in 0..basis.len() {
            let step = target.coeffs()[i] - v[i];
            v_next[i] = v[i] + opts.alpha * step;
            residual = residual.max((v_next[i] - v[i]).norm());
        }
        if residual < opts.tol {
            return Ok(ScfResult {
                potential: pot,
                coeffs: v,
                bands,
                fermi,
                density: rho,
                iterations: it + 1,
                residual,
            });
        }
        v = v_next;
        last = (Some(()), residual);
    }
    Err(QuartzError::MaxIterations {
        max_iter: opts.max_iter,
        residual: last.1,
    })
}

/// Least-squares slope of log y against log x; used for the spectral growth
/// and matrix-element decay checks.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_reciprocal, bz_grid, plane_wave_basis, Lattice};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    fn setup_1d(e_cut: f64, nq: usize) -> (Arc<PlaneWaveBasis>, Arc<BrillouinGrid>) {
        let lat = Lattice::new(1, &[[TWO_PI, 0.0, 0.0]]).unwrap();
        let rl = build_reciprocal(&lat).unwrap();
        let basis = Arc::new(plane_wave_basis(&rl, e_cut).unwrap());
        let grid = Arc::new(bz_grid(&rl, &[nq]).unwrap());
        (basis, grid)
    }

    /// V = 2 v cos(x) on the unit-frequency lattice (a = 2π, b = 1).
    fn cosine_potential(v: f64) -> PeriodicPotential {
        let amp = C64::new(v * TWO_PI.sqrt(), 0.0);
        PeriodicPotential::from_pairs(&[([1, 0, 0], amp), ([-1, 0, 0], amp)]).unwrap()
    }

    #[test]
    fn three_mode_fiber_matches_dense_reference() {
        // reference: dense 3×3 eigensolve of the frozen matrix
        // [[1/8, v, 0], [v, 1/8, v], [0, v, 9/8]] at the zone edge and
        // [[1/2, v, 0], [v, 0, v], [0, v, 1/2]] at the zone center, v = 0.15.
        let (basis, _) = setup_1d(0.6, 4);
        assert_eq!(basis.len(), 3);
        let pot = cosine_potential(0.15);

        let (e_edge, _) = solve_fiber(&basis, &pot, &[0.5, 0.0, 0.0]).unwrap();
        let expect_edge = [-0.03501136955282481, 0.26252225408780505, 1.1474891154650197];
        for (a, b) in e_edge.iter().zip(expect_edge) {
            assert_relative_eq!(*a, b, epsilon = 1e-13);
        }

        let (e_center, _) = solve_fiber(&basis, &pot, &[0.0, 0.0, 0.0]).unwrap();
        let expect_center = [-0.07787192621509997, 0.5, 0.5778719262151];
        for (a, b) in e_center.iter().zip(expect_center) {
            assert_relative_eq!(*a, b, epsilon = 1e-13);
        }
        // the zone-center middle level is pinned at ½ by parity, exactly
        assert_relative_eq!(e_center[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn assembled_fiber_is_hermitian() {
        let (basis, _) = setup_1d(18.0, 4);
        let pot = cosine_potential(0.3);
        let h = assemble_hq(&basis, &pot, &[0.37, 0.0, 0.0]);
        assert!(h.hermiticity_defect() <= 1e-12);
    }

    #[test]
    fn eigenvector_columns_satisfy_the_eigenproblem() {
        // a genuinely complex Hermitian fiber (asymmetric potential, q ≠ 0):
        // catches eigenvector layout/conjugation mix-ups that orthonormality
        // and eigenvalue checks cannot see
        let (basis, _) = setup_1d(18.0, 4);
        let z = C64::new(0.11, 0.07) * TWO_PI.sqrt();
        let pot =
            PeriodicPotential::from_pairs(&[([1, 0, 0], z), ([-1, 0, 0], z.conj())]).unwrap();
        let q = [0.31, 0.0, 0.0];
        let h = assemble_hq(&basis, &pot, &q);
        let (eps, u) = solve_fiber(&basis, &pot, &q).unwrap();
        let m = basis.len();
        for c in 0..m {
            for r in 0..m {
                let mut hu = C64::new(0.0, 0.0);
                for k in 0..m {
                    hu += h.h[[r, k]] * u[[k, c]];
                }
                assert!(
                    (hu - u[[r, c]] * eps[c]).norm() < 1e-12,
                    "H u ≠ ε u at ({r},{c})"
                );
            }
        }
    }

    #[test]
    fn eigenvectors_orthonormal_and_sorted() {
        let (basis, grid) = setup_1d(18.0, 6);
        let pot = cosine_potential(0.25);
        let bands = solve_bands(&basis, &grid, &pot).unwrap();
        for iq in 0..grid.len() {
            let e = bands.energies(iq);
            assert!(e.windows(2).into_iter().all(|w| w[0] <= w[1]));
            let u = bands.vectors(iq);
            let m = u.ncols();
            for a in 0..m {
                for b in 0..m {
                    let mut dot = C64::new(0.0, 0.0);
                    for g in 0..m {
                        dot += u[[g, a]].conj() * u[[g, b]];
                    }
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!(
                        (dot - want).norm() <= 1e-10,
                        "q {iq}, bands ({a},{b}): {dot}"
                    );
                }
            }
        }
    }

    #[test]
    fn free_fibers_match_analytic_reference() {
        let (basis, grid) = setup_1d(40.0, 16);
        let pot = PeriodicPotential::zero();
        let solved = solve_bands(&basis, &grid, &pot).unwrap();
        let exact = free_bands(&basis, &grid);
        for iq in 0..grid.len() {
            for n in 0..basis.len() {
                let d = (solved.energies(iq)[n] - exact.energies(iq)[n]).abs();
                assert!(d <= 1e-12, "q {iq} band {n}: err {d:.2e}");
            }
        }
    }

    #[test]
    fn free_electrons_on_even_grid_are_metallic() {
        // the zone edge sits on every even grid, where bands 1 and 2 touch
        let (basis, grid) = setup_1d(8.0, 4);
        let bands = solve_bands(&basis, &grid, &PeriodicPotential::zero()).unwrap();
        match fermi_data(&bands, 1) {
            Err(QuartzError::MetallicSystem { sigma_plus, sigma_minus, .. }) => {
                assert_relative_eq!(sigma_plus, sigma_minus, epsilon = 1e-12);
            }
            other => panic!("expected MetallicSystem, got {other:?}"),
        }
    }

    #[test]
    fn cosine_coupling_opens_gap_of_twice_amplitude() {
        let v = 0.05;
        let (basis, grid) = setup_1d(18.0, 8);
        let bands = solve_bands(&basis, &grid, &cosine_potential(v)).unwrap();
        let fermi = fermi_data(&bands, 1).unwrap();
        // weak-coupling gap at the zone edge: 2v + O(v²)
        assert_relative_eq!(fermi.gap, 2.0 * v, max_relative = 0.05);
        assert!(fermi.sigma_plus < fermi.fermi && fermi.fermi < fermi.sigma_minus);
    }

    #[test]
    fn density_is_gauge_invariant() {
        let (basis, grid) = setup_1d(12.0, 5);
        let pot = cosine_potential(0.2);
        let bands = solve_bands(&basis, &grid, &pot).unwrap();
        let rho = density_from_bands(&bands, 1).unwrap();

        let mut rotated = bands.clone();
        for iq in 0..grid.len() {
            let mut v = rotated.vectors(iq).clone();
            for n in 0..v.ncols() {
                let phase = C64::from_polar(1.0, 0.7 + 1.3 * (iq as f64) + 0.41 * (n as f64));
                for g in 0..v.nrows() {
                    v[[g, n]] *= phase;
                }
            }
            rotated.set_vectors(iq, v);
        }
        let rho2 = density_from_bands(&rotated, 1).unwrap();
        for i in 0..basis.len() {
            assert!((rho.coeffs()[i] - rho2.coeffs()[i]).norm() <= 1e-12);
        }
    }

    #[test]
    fn matrix_element_reduces_to_overlap_at_zero_shift() {
        let (basis, grid) = setup_1d(12.0, 5);
        let pot = cosine_potential(0.2);
        let bands = solve_bands(&basis, &grid, &pot).unwrap();
        for n in 0..3 {
            for m in 0..3 {
                let el = bloch_matrix_element(&bands, m, 2, n, 2, &[0, 0, 0]);
                let want = if m == n { 1.0 } else { 0.0 };
                assert!((el - want).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn band_growth_follows_two_over_d() {
        // ε_n ~ c n^{2/d} for large n; fit the top half on a log-log scale
        let (basis, grid) = setup_1d(180.0, 3);
        let bands = solve_bands(&basis, &grid, &cosine_potential(0.2)).unwrap();
        let nb = basis.len();
        let e = bands.energies(0);
        let xs: Vec<f64> = (nb / 2..nb).map(|n| (n + 1) as f64).collect();
        let ys: Vec<f64> = (nb / 2..nb).map(|n| e[n]).collect();
        let slope = fit_loglog_slope(&xs, &ys);
        assert!(
            (slope - 2.0).abs() <= 0.3,
            "1D growth exponent {slope:.3} not within 15% of 2"
        );

        let lat2 = Lattice::new(2, &[[TWO_PI, 0.0, 0.0], [0.0, TWO_PI, 0.0]]).unwrap();
        let rl2 = build_reciprocal(&lat2).unwrap();
        let basis2 = Arc::new(plane_wave_basis(&rl2, 30.0).unwrap());
        let grid2 = Arc::new(bz_grid(&rl2, &[3, 3]).unwrap());
        let bands2 = solve_bands(&basis2, &grid2, &PeriodicPotential::zero()).unwrap();
        let nb2 = basis2.len();
        let e2 = bands2.energies(0);
        let xs2: Vec<f64> = (nb2 / 2..nb2).map(|n| (n + 1) as f64).collect();
        let ys2: Vec<f64> = (nb2 / 2..nb2).map(|n| e2[n]).collect();
        let slope2 = fit_loglog_slope(&xs2, &ys2);
        assert!(
            (slope2 - 1.0).abs() <= 0.15,
            "2D growth exponent {slope2:.3} not within 15% of 1"
        );
    }

    #[test]
    fn degenerate_pair_projector_is_stable() {
        // free electrons at the zone edge carry an exact two-fold degeneracy;
        // the pair projector is basis-independent even though the individual
        // eigenvectors are arbitrary within the pair
        let (basis, _) = setup_1d(8.0, 4);
        let q = [0.5, 0.0, 0.0];
        let (_, v1) = solve_fiber(&basis, &PeriodicPotential::zero(), &q).unwrap();
        let tiny = PeriodicPotential::from_pairs(&[
            ([2, 0, 0], C64::new(1e-10, 0.0)),
            ([-2, 0, 0], C64::new(1e-10, 0.0)),
        ])
        .unwrap();
        let (_, v2) = solve_fiber(&basis, &tiny, &q).unwrap();
        let m = basis.len();
        let proj = |v: &Array2<C64>| {
            let mut p: Array2<C64> = Array2::zeros((m, m));
            for n in 0..2 {
                for a in 0..m {
                    for b in 0..m {
                        p[[a, b]] += v[[a, n]] * v[[b, n]].conj();
                    }
                }
            }
            p
        };
        let p1 = proj(&v1);
        let p2 = proj(&v2);
        let mut worst = 0.0_f64;
        for a in 0..m {
            for b in 0..m {
                worst = worst.max((p1[[a, b]] - p2[[a, b]]).norm());
            }
        }
        assert!(worst <= 1e-6, "projector drift {worst:.2e}");
    }

    #[test]
    fn scf_uniform_nuclei_give_free_bands() {
        // odd grid keeps the free spectrum gapped on the grid points
        let (basis, grid) = setup_1d(8.0, 5);
        let mut rho_nuc = FourierCoeffs::zero(basis.clone());
        rho_nuc.coeffs_mut()[basis.zero_index()] =
            C64::new(1.0 / basis.reciprocal().cell_volume().sqrt(), 0.0);
        let out = scf_periodic(&basis, &grid, &rho_nuc, &ScfOptions::new(1)).unwrap();
        assert!(out.iterations <= 2);
        for c in out.coeffs.iter() {
            assert!(c.norm() <= 1e-12);
        }
        let exact = free_bands(&basis, &grid);
        for iq in 0..grid.len() {
            for n in 0..basis.len() {
                assert_relative_eq!(
                    out.bands.energies(iq)[n],
                    exact.energies(iq)[n],
                    epsilon = 1e-10
                );
            }
        }
    }

    /// Unit cell a = 1 (so |K| ≥ 2π): the Coulomb kernel stays tame and
    /// simple damped mixing has loop gain < 1.
    fn setup_unit_cell(e_cut: f64, nq: usize) -> (Arc<PlaneWaveBasis>, Arc<BrillouinGrid>) {
        let lat = Lattice::new(1, &[[1.0, 0.0, 0.0]]).unwrap();
        let rl = build_reciprocal(&lat).unwrap();
        let basis = Arc::new(plane_wave_basis(&rl, e_cut).unwrap());
        let grid = Arc::new(bz_grid(&rl, &[nq]).unwrap());
        (basis, grid)
    }

    #[test]
    fn scf_weak_cosine_converges_and_satisfies_poisson() {
        let (basis, grid) = setup_unit_cell(100.0, 5);
        let vol = basis.reciprocal().cell_volume();
        let mut rho_nuc = FourierCoeffs::zero(basis.clone());
        rho_nuc.coeffs_mut()[basis.zero_index()] = C64::new(1.0 / vol.sqrt(), 0.0);
        let i1 = basis.index_of(&[1, 0, 0]).unwrap();
        let im1 = basis.index_of(&[-1, 0, 0]).unwrap();
        rho_nuc.coeffs_mut()[i1] = C64::new(0.05, 0.0);
        rho_nuc.coeffs_mut()[im1] = C64::new(0.05, 0.0);

        let mut opts = ScfOptions::new(1);
        opts.alpha = 0.3;
        opts.tol = 1e-9;
        opts.max_iter = 200;
        let out = scf_periodic(&basis, &grid, &rho_nuc, &opts).unwrap();
        assert!(out.iterations < 200);
        assert!(out.residual < 1e-8);
        assert!(out.fermi.gap > 0.0);

        // fixed point ⟺ V = v_c(ρ - ρ_nuc) coefficientwise
        let mut diff = out.density.clone();
        for i in 0..basis.len() {
            diff.coeffs_mut()[i] -= rho_nuc.coeffs()[i];
        }
        let target = vc_apply(&diff);
        for i in 0..basis.len() {
            assert!(
                (target.coeffs()[i] - out.coeffs[i]).norm() <= 1e-7,
                "Poisson residual at {i}"
            );
        }

        // the fixed point does not depend on the mixing path
        let mut opts2 = opts.clone();
        opts2.alpha = 0.6;
        let out2 = scf_periodic(&basis, &grid, &rho_nuc, &opts2).unwrap();
        for i in 0..basis.len() {
            assert!((out.coeffs[i] - out2.coeffs[i]).norm() <= 1e-7);
        }

        // refinement: doubling the cutoff barely moves the low coefficients
        let (basis_big, grid_big) = setup_unit_cell(200.0, 5);
        let mut rho_big = FourierCoeffs::zero(basis_big.clone());
        rho_big.coeffs_mut()[basis_big.zero_index()] = C64::new(1.0 / vol.sqrt(), 0.0);
        rho_big.coeffs_mut()[basis_big.index_of(&[1, 0, 0]).unwrap()] = C64::new(0.05, 0.0);
        rho_big.coeffs_mut()[basis_big.index_of(&[-1, 0, 0]).unwrap()] = C64::new(0.05, 0.0);
        let out_big = scf_periodic(&basis_big, &grid_big, &rho_big, &opts).unwrap();
        for (i, m) in basis.coords().iter().enumerate() {
            let j = basis_big.index_of(m).unwrap();
            assert!(
                (out.coeffs[i] - out_big.coeffs[j]).norm() < 1e-3,
                "cutoff sensitivity at K = {m:?}"
            );
        }
    }

    #[test]
    fn scf_rejects_charge_mismatch() {
        let (basis, grid) = setup_1d(8.0, 5);
        let rho_nuc = FourierCoeffs::zero(basis.clone()); // zero total charge
        let r = scf_periodic(&basis, &grid, &rho_nuc, &ScfOptions::new(1));
        assert!(matches!(r, Err(QuartzError::InvalidArgument(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn random_real_potentials_yield_hermitian_fibers(
            re1 in -0.5f64..0.5, im1 in -0.5f64..0.5, re2 in -0.5f64..0.5, qf in -0.5f64..0.5,
        ) {
            let (basis, _) = setup_1d(8.0, 4);
            let pot = PeriodicPotential::from_pairs(&[
                ([1, 0, 0], C64::new(re1, im1)),
                ([-1, 0, 0], C64::new(re1, -im1)),
                ([2, 0, 0], C64::new(re2, 0.0)),
                ([-2, 0, 0], C64::new(re2, 0.0)),
            ]).unwrap();
            let h = assemble_hq(&basis, &pot, &[qf, 0.0, 0.0]);
            prop_assert!(h.hermiticity_defect() <= 1e-12);
            let (e, _) = solve_fiber(&basis, &pot, &[qf, 0.0, 0.0]).unwrap();
            prop_assert!(e.windows(2).into_iter().all(|w| w[0] <= w[1]));
        }
    }
}
