//! Small dense reference implementations used to validate the production
//! paths: exact unitary propagation, finite-difference static response, and
//! direct resolvent solves. Everything here is brute force on purpose — the
//! only shared machinery is the dense Hermitian eigensolver.
//!
//! Dense references are capped at 24 modes so that every oracle run stays in
//! the regime where full diagonalization is numerically unimpeachable.

use crate::bands::PeriodicPotential;
use crate::error::QuartzError;
use crate::lattice::{BrillouinGrid, PlaneWaveBasis};
use crate::{Result, C64};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{Eigh, Norm, Solve, UPLO};

/// Hard cap on dense-reference dimension.
pub const MAX_DENSE_DIM: usize = 24;

/// A dense Hermitian model with a validated eigendecomposition.
#[derive(Debug, Clone)]
pub struct DenseReference {
    h: Array2<C64>,
    eps: Array1<f64>,
    u: Array2<C64>,
}

impl DenseReference {
    /// Diagonalize and verify the decomposition residual max|HU - UΛ| ≤
    /// 1e-12 · scale.
    pub fn new(h: Array2<C64>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || n != h.ncols() {
            return Err(QuartzError::InvalidArgument(format!(
                "dense reference needs a square matrix, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        if n > MAX_DENSE_DIM {
            return Err(QuartzError::InvalidArgument(format!(
                "dense reference capped at {MAX_DENSE_DIM} modes, got {n}"
            )));
        }
        let mut herm = 0.0_f64;
        let mut scale = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                herm = herm.max((h[[i, j]] - h[[j, i]].conj()).norm());
                scale = scale.max(h[[i, j]].norm());
            }
        }
        let scale = scale.max(1.0);
        if herm > 1e-12 * scale {
            return Err(QuartzError::InvalidArgument(format!(
                "dense reference matrix is not Hermitian (defect {herm:.3e})"
            )));
        }
        let (eps, mut u) = h
            .eigh(UPLO::Lower)
            .map_err(|e| QuartzError::SolveFailure(e.to_string()))?;
        // eigh hands row-major data to column-major LAPACK, which therefore
        // diagonalizes conj(H); conjugate back to get eigenvectors of H. The
        // residual check below is the enforcement.
        u.mapv_inplace(|z| z.conj());
        let mut resid = 0.0_f64;
        for c in 0..n {
            for r in 0..n {
                let mut hu = C64::new(0.0, 0.0);
                for k in 0..n {
                    hu += h[[r, k]] * u[[k, c]];
                }
                resid = resid.max((hu - u[[r, c]] * eps[c]).norm());
            }
        }
        if resid > 1e-12 * scale {
            return Err(QuartzError::SolveFailure(format!(
                "eigendecomposition residual {resid:.3e} exceeds 1e-12 of scale"
            )));
        }
        Ok(DenseReference { h, eps, u })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.h
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eps
    }

    pub fn eigenvectors(&self) -> &Array2<C64> {
        &self.u
    }

    /// Spectral projector onto the lowest `n_occ` eigenvectors, in the
    /// original basis.
    pub fn occupied_projector(&self, n_occ: usize) -> Array2<C64> {
        let n = self.dim();
        let mut p: Array2<C64> = Array2::zeros((n, n));
        for c in 0..n_occ {
            for a in 0..n {
                for b in 0..n {
                    p[[a, b]] += self.u[[a, c]] * self.u[[b, c]].conj();
                }
            }
        }
        p
    }

    /// e^{-i t H} as a dense matrix.
    pub fn evolution(&self, t: f64) -> Array2<C64> {
        let n = self.dim();
        let mut e: Array2<C64> = Array2::zeros((n, n));
        for c in 0..n {
            let phase = C64::from_polar(1.0, -t * self.eps[c]);
            for a in 0..n {
                for b in 0..n {
                    e[[a, b]] += self.u[[a, c]] * phase * self.u[[b, c]].conj();
                }
            }
        }
        e
    }
}

/// Propagate i dγ/dt = [H + w(t), γ] by unitary conjugation with an
/// exponential midpoint rule, 16 substeps per requested interval, returning γ
/// at every time in `t_grid` (which must be increasing and start anywhere).
///
/// Each substep diagonalizes H + w(t_mid) from scratch; nothing is reused
/// from the production propagators.
pub fn exact_propagate(
    h: &Array2<C64>,
    gamma0: &Array2<C64>,
    w: &dyn Fn(f64) -> Array2<C64>,
    t_grid: &[f64],
) -> Result<Vec<Array2<C64>>> {
    let n = h.nrows();
    if gamma0.nrows() != n || gamma0.ncols() != n {
        return Err(QuartzError::InvalidArgument(
            "state dimension does not match the Hamiltonian".into(),
        ));
    }
    let mut out = Vec::with_capacity(t_grid.len());
    let mut gamma = gamma0.clone();
    let mut t_now = match t_grid.first() {
        Some(t) => *t,
        None => return Ok(out),
    };
    out.push(gamma.clone());
    for &t_next in &t_grid[1..] {
        if t_next < t_now {
            return Err(QuartzError::InvalidArgument(
                "time grid must be non-decreasing".into(),
            ));
        }
        let sub = 16;
        let h_sub = (t_next - t_now) / sub as f64;
        for s in 0..sub {
            let t_mid = t_now + (s as f64 + 0.5) * h_sub;
            let mut a = h.clone();
            let ws = w(t_mid);
            a += &ws;
            let step = DenseReference::new(a)?.evolution(h_sub);
            let step_dag = dagger(&step);
            gamma = step.dot(&gamma).dot(&step_dag);
        }
        t_now = t_next;
        out.push(gamma.clone());
    }
    Ok(out)
}

pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    let mut out = a.t().to_owned();
    out.mapv_inplace(|z| z.conj());
    out
}

/// Central finite-difference derivative of the occupied projector:
/// (P[H + λV] − P[H − λV]) / (2λ).
///
/// Errors with `GapClosed` when either perturbed spectrum has its
/// occupied/unoccupied separation reduced to the order of the perturbation,
/// which is when the projector derivative stops being well-defined.
pub fn static_perturbation_oracle(
    h: &Array2<C64>,
    v: &Array2<C64>,
    n_occ: usize,
    lambda: f64,
) -> Result<Array2<C64>> {
    if !(lambda > 0.0) {
        return Err(QuartzError::InvalidArgument(
            "finite-difference step must be positive".into(),
        ));
    }
    let n = h.nrows();
    if n_occ == 0 || n_occ >= n {
        return Err(QuartzError::InvalidArgument(format!(
            "need 1 ≤ n_occ < {n}"
        )));
    }
    let vnorm = v.iter().map(|z| z.norm()).fold(0.0_f64, f64::max) * n as f64;
    let perturbed = |sign: f64| -> Result<Array2<C64>> {
        let mut a = h.clone();
        a.zip_mut_with(v, |x, y| *x += sign * lambda * y);
        let dr = DenseReference::new(a)?;
        let gap = dr.eigenvalues()[n_occ] - dr.eigenvalues()[n_occ - 1];
        // the projector derivative is only meaningful while the perturbation
        // is a small fraction of the gap
        if gap <= 50.0 * lambda * vnorm.max(1.0) {
            return Err(QuartzError::GapClosed(format!(
                "perturbed gap {gap:.3e} at sign {sign:+} is not large against \
                 the perturbation {:.3e}",
                lambda * vnorm
            )));
        }
        Ok(dr.occupied_projector(n_occ))
    };
    let plus = perturbed(1.0)?;
    let minus = perturbed(-1.0)?;
    let mut d = plus;
    d.zip_mut_with(&minus, |a, b| *a = (*a - *b) / (2.0 * lambda));
    Ok(d)
}

/// Solve (z − H) x = b densely, with a relative residual check.
pub fn resolvent_solve(h: &Array2<C64>, z: C64, b: ArrayView1<C64>) -> Result<Array1<C64>> {
    let n = h.nrows();
    let mut a: Array2<C64> = h.mapv(|x| -x);
    for i in 0..n {
        a[[i, i]] += z;
    }
    let x = a
        .solve(&b.to_owned())
        .map_err(|e| QuartzError::NearSingular(e.to_string()))?;
    let r = a.dot(&x) - &b;
    let rel = r.norm_l2() / b.norm_l2().max(1e-300);
    if rel > 1e-10 {
        return Err(QuartzError::NearSingular(format!(
            "resolvent solve residual {rel:.3e} at z = {z}"
        )));
    }
    Ok(x)
}

/// One plane-wave mode of the union supercell: exact rational coordinates
/// numerator/counts over the primitive dual basis, plus its provenance
/// (grid point, primitive mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UnionMode {
    /// numerator τ of the fractional coordinate τ_i / n_i
    pub numerator: [i64; 3],
    pub iq: usize,
    pub ig: usize,
}

/// The union-of-fibers supercell model: one dense Hamiltonian on the mode set
/// { q' + G : q' ∈ grid, G ∈ basis }, assembled directly from exact rational
/// mode coordinates — independently of the fiber machinery. Block-equivalent
/// to the direct sum of the fibers; the test suite checks this spectrally.
#[derive(Debug)]
pub struct UnionSupercell {
    pub dense: DenseReference,
    pub modes: Vec<UnionMode>,
    pub counts: [usize; 3],
    index: std::collections::HashMap<[i64; 3], usize>,
}

pub fn build_union_supercell(
    basis: &PlaneWaveBasis,
    grid: &BrillouinGrid,
    pot: &PeriodicPotential,
) -> Result<UnionSupercell> {
    let rl = basis.reciprocal();
    let d = rl.dim();
    let mut counts = [1usize; 3];
    counts[..d].copy_from_slice(grid.counts());

    let mut modes = Vec::with_capacity(grid.len() * basis.len());
    for iq in 0..grid.len() {
        // exact rational coordinates of the grid point
        let fq = grid.frac(iq);
        let jq: [i64; 3] = [
            (fq[0] * counts[0] as f64).round() as i64,
            (fq[1] * counts[1] as f64).round() as i64,
            (fq[2] * counts[2] as f64).round() as i64,
        ];
        for (ig, g) in basis.coords().iter().enumerate() {
            let numerator = [
                jq[0] + counts[0] as i64 * g[0],
                jq[1] + counts[1] as i64 * g[1],
                jq[2] + counts[2] as i64 * g[2],
            ];
            modes.push(UnionMode { numerator, iq, ig });
        }
    }
    let m = modes.len();
    if m > MAX_DENSE_DIM {
        return Err(QuartzError::InvalidArgument(format!(
            "union supercell has {m} modes, oracle cap is {MAX_DENSE_DIM}"
        )));
    }
    let index = modes
        .iter()
        .enumerate()
        .map(|(i, mo)| (mo.numerator, i))
        .collect::<std::collections::HashMap<_, _>>();
    if index.len() != m {
        return Err(QuartzError::InvalidArgument(
            "union mode set has duplicate modes; grid and basis are inconsistent".into(),
        ));
    }

    let inv_sqrt_vol = 1.0 / rl.cell_volume().sqrt();
    let mut h: Array2<C64> = Array2::zeros((m, m));
    for (i, mi) in modes.iter().enumerate() {
        // Cartesian vector of mode i from its exact fraction
        let f = [
            mi.numerator[0] as f64 / counts[0] as f64,
            mi.numerator[1] as f64 / counts[1] as f64,
            mi.numerator[2] as f64 / counts[2] as f64,
        ];
        let k = rl.cartesian_frac(&f);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        h[[i, i]] += C64::new(0.5 * k2, 0.0);
        for (j, mj) in modes.iter().enumerate() {
            let mut diff_int = [0i64; 3];
            let mut on_lattice = true;
            for c in 0..3 {
                let dn = mi.numerator[c] - mj.numerator[c];
                if dn % counts[c] as i64 != 0 {
                    on_lattice = false;
                    break;
                }
                diff_int[c] = dn / counts[c] as i64;
            }
            if on_lattice {
                h[[i, j]] += pot.at(&diff_int) * inv_sqrt_vol;
            }
        }
    }
    let dense = DenseReference::new(h)?;
    Ok(UnionSupercell {
        dense,
        modes,
        counts,
        index,
    })
}

impl UnionSupercell {
    pub fn mode_index(&self, numerator: &[i64; 3]) -> Option<usize> {
        self.index.get(numerator).copied()
    }

    /// Density coefficient of a dense state γ (plane-wave representation) at
    /// the exact-fraction shift κ given by `numerator`:
    /// Σ_τ γ[τ + κ, τ], the κ-shifted diagonal sum.
    pub fn shifted_trace(&self, gamma: ArrayView2<C64>, numerator: &[i64; 3]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (j, mo) in self.modes.iter().enumerate() {
            let shifted = [
                mo.numerator[0] + numerator[0],
                mo.numerator[1] + numerator[1],
                mo.numerator[2] + numerator[2],
            ];
            if let Some(i) = self.mode_index(&shifted) {
                acc += gamma[[i, j]];
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_reciprocal, bz_grid, plane_wave_basis, Lattice};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn random_hermitian(n: usize, seed: u64) -> Array2<C64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut h: Array2<C64> = Array2::zeros((n, n));
        for i in 0..n {
            h[[i, i]] = C64::new(rng.gen_range(-1.0..1.0), 0.0);
            for j in (i + 1)..n {
                let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                h[[i, j]] = z;
                h[[j, i]] = z.conj();
            }
        }
        h
    }

    #[test]
    fn dense_reference_validates_decomposition() {
        let h = random_hermitian(12, 3);
        let dr = DenseReference::new(h).unwrap();
        assert_eq!(dr.dim(), 12);
        let p = dr.occupied_projector(5);
        // projector: P² = P, trace = 5
        let p2 = p.dot(&p);
        let mut worst = 0.0_f64;
        let mut tr = C64::new(0.0, 0.0);
        for i in 0..12 {
            tr += p[[i, i]];
            for j in 0..12 {
                worst = worst.max((p2[[i, j]] - p[[i, j]]).norm());
            }
        }
        assert!(worst < 1e-12);
        assert_relative_eq!(tr.re, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn dense_reference_rejects_non_hermitian_and_oversize() {
        let mut h = random_hermitian(4, 1);
        h[[0, 1]] += C64::new(1e-6, 0.0);
        assert!(DenseReference::new(h).is_err());
        let big = random_hermitian(MAX_DENSE_DIM + 1, 2);
        assert!(DenseReference::new(big).is_err());
    }

    #[test]
    fn propagation_with_constant_drive_matches_closed_form() {
        // time-independent total Hamiltonian: the midpoint rule is exact
        let h = random_hermitian(6, 11);
        let v = random_hermitian(6, 12);
        let gamma0 = {
            let dr = DenseReference::new(h.clone()).unwrap();
            dr.occupied_projector(3)
        };
        let t = 1.7;
        let path = exact_propagate(&h, &gamma0, &|_| v.clone(), &[0.0, t]).unwrap();

        let mut total = h.clone();
        total += &v;
        let dr = DenseReference::new(total).unwrap();
        let u = dr.evolution(t);
        let want = u.dot(&gamma0).dot(&dagger(&u));
        let got = &path[1];
        for i in 0..6 {
            for j in 0..6 {
                assert!((got[[i, j]] - want[[i, j]]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn propagation_converges_at_second_order_for_oscillating_drive() {
        let h = random_hermitian(5, 21);
        let v = random_hermitian(5, 22);
        let gamma0 = DenseReference::new(h.clone()).unwrap().occupied_projector(2);
        let w = |t: f64| {
            let mut out = v.clone();
            out.mapv_inplace(|z| z * (1.3 * t).cos());
            out
        };
        let t = 2.0;
        // halving the outer grid quarters the error against a fine reference
        let fine: Vec<f64> = (0..=64).map(|k| t * k as f64 / 64.0).collect();
        let reference = exact_propagate(&h, &gamma0, &w, &fine).unwrap().pop().unwrap();
        let err = |steps: usize| {
            let grid: Vec<f64> = (0..=steps).map(|k| t * k as f64 / steps as f64).collect();
            let end = exact_propagate(&h, &gamma0, &w, &grid).unwrap().pop().unwrap();
            let mut e = 0.0_f64;
            for i in 0..5 {
                for j in 0..5 {
                    e = e.max((end[[i, j]] - reference[[i, j]]).norm());
                }
            }
            e
        };
        let e1 = err(2);
        let e2 = err(4);
        assert!(e1 > 1e-12, "test instance too easy: e1 = {e1:.2e}");
        let ratio = e1 / e2;
        assert!(
            (2.5..8.0).contains(&ratio),
            "expected ~4x error reduction, got {ratio:.2}"
        );
    }

    #[test]
    fn finite_difference_matches_two_level_perturbation_theory() {
        // H = diag(0, Δ), V = σ_x: dP/dλ = -(1/Δ) σ_x
        let delta = 0.8;
        let mut h: Array2<C64> = Array2::zeros((2, 2));
        h[[1, 1]] = C64::new(delta, 0.0);
        let mut v: Array2<C64> = Array2::zeros((2, 2));
        v[[0, 1]] = C64::new(1.0, 0.0);
        v[[1, 0]] = C64::new(1.0, 0.0);
        let d = static_perturbation_oracle(&h, &v, 1, 1e-5).unwrap();
        assert_relative_eq!(d[[0, 1]].re, -1.0 / delta, max_relative = 1e-7);
        assert_relative_eq!(d[[1, 0]].re, -1.0 / delta, max_relative = 1e-7);
        assert!(d[[0, 0]].norm() < 1e-7 && d[[1, 1]].norm() < 1e-7);
    }

    #[test]
    fn finite_difference_detects_closing_gap() {
        let mut h: Array2<C64> = Array2::zeros((2, 2));
        h[[1, 1]] = C64::new(1e-9, 0.0); // near-degenerate pair
        let mut v: Array2<C64> = Array2::zeros((2, 2));
        v[[0, 1]] = C64::new(1.0, 0.0);
        v[[1, 0]] = C64::new(1.0, 0.0);
        let r = static_perturbation_oracle(&h, &v, 1, 1e-5);
        assert!(matches!(r, Err(QuartzError::GapClosed(_))));
    }

    #[test]
    fn resolvent_solve_matches_spectral_form() {
        let h = random_hermitian(9, 5);
        let dr = DenseReference::new(h.clone()).unwrap();
        let z = C64::new(0.3, 0.7);
        let mut b: Array1<C64> = Array1::zeros(9);
        b[2] = C64::new(1.0, 0.0);
        b[5] = C64::new(0.0, -2.0);
        let x = resolvent_solve(&h, z, b.view()).unwrap();
        let mut want: Array1<C64> = Array1::zeros(9);
        for c in 0..9 {
            let mut ub = C64::new(0.0, 0.0);
            for r in 0..9 {
                ub += dr.eigenvectors()[[r, c]].conj() * b[r];
            }
            let coef = ub / (z - dr.eigenvalues()[c]);
            for r in 0..9 {
                want[r] += dr.eigenvectors()[[r, c]] * coef;
            }
        }
        for i in 0..9 {
            assert!((x[i] - want[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn resolvent_solve_rejects_near_eigenvalue_shift() {
        let h = random_hermitian(6, 9);
        let dr = DenseReference::new(h.clone()).unwrap();
        let z = C64::new(dr.eigenvalues()[2], 1e-15);
        let b: Array1<C64> = Array1::from_elem(6, C64::new(1.0, 0.0));
        assert!(resolvent_solve(&h, z, b.view()).is_err());
    }

    #[test]
    fn union_supercell_spectrum_is_union_of_fiber_spectra() {
        let lat = Lattice::new(1, &[[2.0 * std::f64::consts::PI, 0.0, 0.0]]).unwrap();
        let rl = build_reciprocal(&lat).unwrap();
        let basis = plane_wave_basis(&rl, 2.2).unwrap(); // 5 modes
        let grid = bz_grid(&rl, &[4]).unwrap();
        let amp = C64::new(0.13 * (2.0 * std::f64::consts::PI).sqrt(), 0.0);
        let pot = PeriodicPotential::from_pairs(&[([1, 0, 0], amp), ([-1, 0, 0], amp)]).unwrap();

        let sc = build_union_supercell(&basis, &grid, &pot).unwrap();
        assert_eq!(sc.dense.dim(), 20);

        let mut fiber_eps: Vec<f64> = Vec::new();
        let basis = std::sync::Arc::new(basis);
        let grid = std::sync::Arc::new(grid);
        let bands = crate::bands::solve_bands(&basis, &grid, &pot).unwrap();
        for iq in 0..grid.len() {
            fiber_eps.extend(bands.energies(iq).iter());
        }
        fiber_eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in sc.dense.eigenvalues().iter().zip(&fiber_eps) {
            assert!((a - b).abs() < 1e-12, "supercell {a} vs fibers {b}");
        }
    }
}
