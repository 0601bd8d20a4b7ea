//! Macroscopic permittivity assembled from band-structure data.
//!
//! The long-wavelength limit of the dressed response operator factors into
//! three ingredients, each a Brillouin-zone average over occupied→virtual
//! transitions: the velocity quadratic form `L(ω)`, the source vector
//! `b_k(ω)` coupling a probe direction `k` to finite-momentum density
//! fluctuations, and the dressed block `C(ω)` acting on those fluctuations.
//! The permittivity is the Schur complement of that block,
//!
//! `kᵀ ε_M(ω) k  =  |k|² + kᵀ L k − ⟨b_k, C(ω)⁻¹ b_k⟩`,
//!
//! a symmetric matrix with eigenvalues ≥ 1 that is even in ω.  All
//! denominators stay strictly positive while `|ω|` lies inside the spectral
//! gap, which every entry point enforces up front.  `eps_m` recovers the full
//! matrix from the quadratic form by polarization, inverting `C` once per
//! frequency.  `a_scalar_probe` offers an independent route to the same
//! number through the dressed operator at small but finite momentum, and
//! `macro_poisson_solve` consumes sampled permittivities to screen external
//! charges in the homogenized medium.
//!
//! Products of truncated functions are never convolved explicitly: every
//! pairing is evaluated against a basis state, so coefficients outside the
//! ball are annihilated exactly — equivalent to a doubled-cutoff convolution
//! followed by projection, without materializing the intermediate.

use crate::bands::{matrix_element, BandStructure, FermiData, PeriodicPotential};
use crate::error::QuartzError;
use crate::lattice::{norm, PlaneWaveBasis};
use crate::response::a_matrix;
use crate::{Result, C64};
use ndarray::{Array1, Array2, ArrayView1};
use ndarray_linalg::{Eigh, Inverse, Solve, UPLO};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

fn ensure_in_gap(omega: f64, fermi: &FermiData) -> Result<()> {
    if omega.abs() >= fermi.gap {
        return Err(QuartzError::FrequencyOutOfGap {
            omega,
            gap: fermi.gap,
        });
    }
    Ok(())
}

/// Indices of every basis vector except the zero mode, in basis order.
/// This is the index set on which the dressed block `C(ω)` acts.
pub fn nonzero_kset(basis: &PlaneWaveBasis) -> Vec<usize> {
    let zero = basis.zero_index();
    (0..basis.len()).filter(|&i| i != zero).collect()
}

/// Cartesian velocity components `d_a = Σ_G G_a conj(bra_G) ket_G`.
fn velocity_elements(basis: &PlaneWaveBasis, bra: ArrayView1<C64>, ket: ArrayView1<C64>) -> [C64; 3] {
    let mut d = [C64::new(0.0, 0.0); 3];
    for (i, (b, k)) in bra.iter().zip(ket.iter()).enumerate() {
        let g = basis.cart(i);
        let w = b.conj() * k;
        for a in 0..3 {
            d[a] += g[a] * w;
        }
    }
    d
}

/// Visit every (grid point, occupied band, virtual band) transition, passing
/// the quadrature weight, the two periodic parts, and the energy difference.
fn occupied_virtual_pairs<F>(bands: &BandStructure, fermi: &FermiData, mut f: F)
where
    F: FnMut(usize, f64, usize, usize, ArrayView1<C64>, ArrayView1<C64>, f64),
{
    let grid = bands.grid();
    let nb = bands.n_bands();
    for iq in 0..grid.len() {
        let w = grid.weight(iq);
        let eps = bands.energies(iq);
        for n in 0..fermi.n_occupied {
            let un = bands.band(iq, n);
            for m in fermi.n_occupied..nb {
                let um = bands.band(iq, m);
                f(iq, w, n, m, un, um, eps[m] - eps[n]);
            }
        }
    }
}

/// Velocity quadratic form: the 3×3 real symmetric matrix with
/// `kᵀLk = (8π/|Γ|) ⨍ Σ_{n occ, m virt} |⟨u_m, (k·∇)u_n⟩|² / (Δε (Δε+ω)(Δε−ω))`.
///
/// Axes with no reciprocal-lattice extent (lower-dimensional cells) produce
/// identically zero rows and columns.
pub fn l_matrix(bands: &BandStructure, fermi: &FermiData, omega: f64) -> Result<Array2<f64>> {
    ensure_in_gap(omega, fermi)?;
    let basis = bands.basis();
    let vol = basis.reciprocal().cell_volume();
    let mut acc = Array2::<f64>::zeros((3, 3));
    occupied_virtual_pairs(bands, fermi, |_iq, w, _n, _m, un, um, de| {
        let d = velocity_elements(basis, um, un);
        let denom = de * (de + omega) * (de - omega);
        for a in 0..3 {
            for b in 0..3 {
                acc[[a, b]] += w * (d[a] * d[b].conj()).re / denom;
            }
        }
    });
    let mut l = acc.mapv(|x| 8.0 * std::f64::consts::PI / vol * x);
    // The accumulated matrix is Hermitian by construction; symmetrize to
    // remove the last-bit asymmetry of floating-point accumulation order.
    for a in 0..3 {
        for b in (a + 1)..3 {
            let s = 0.5 * (l[[a, b]] + l[[b, a]]);
            l[[a, b]] = s;
            l[[b, a]] = s;
        }
    }
    Ok(l)
}

/// Transition amplitude `s_{nm}(K) = Σ_G conj(c^m_G) c^n_{G−K}`: the K-th
/// Fourier coefficient (up to 1/√|Γ|) of the periodic product `u_n conj(u_m)`.
fn transition_amplitude(
    basis: &PlaneWaveBasis,
    un: ArrayView1<C64>,
    um: ArrayView1<C64>,
    k: &[i64; 3],
) -> C64 {
    matrix_element(basis, um, un, &[-k[0], -k[1], -k[2]])
}

/// Source vector on the nonzero-K set:
/// `b_K(ω,k) = (8π/(|K||Γ|)) ⨍ Σ_{n,m} (k·d_{nm}) conj(s_{nm}(K)) / ((Δε−ω)(Δε+ω))`.
///
/// Linear in `k` and even in `ω`. Entries follow `nonzero_kset` order.
pub fn b_vector(
    bands: &BandStructure,
    fermi: &FermiData,
    omega: f64,
    k: &[f64; 3],
) -> Result<Array1<C64>> {
    ensure_in_gap(omega, fermi)?;
    let basis = bands.basis();
    let vol = basis.reciprocal().cell_volume();
    let kset = nonzero_kset(basis);
    let origin = [0.0_f64; 3];
    let knorms: Vec<f64> = kset.iter().map(|&i| basis.shifted_norm(&origin, i)).collect();
    let kcoords: Vec<[i64; 3]> = kset.iter().map(|&i| *basis.coord(i)).collect();
    let mut b: Array1<C64> = Array1::zeros(kset.len());
    occupied_virtual_pairs(bands, fermi, |_iq, w, _n, _m, un, um, de| {
        let d = velocity_elements(basis, um, un);
        let dk = k[0] * d[0] + k[1] * d[1] + k[2] * d[2];
        if dk.norm_sqr() == 0.0 {
            return;
        }
        let g2 = 1.0 / ((de - omega) * (de + omega));
        let coef = dk * (w * g2);
        for (slot, kc) in kcoords.iter().enumerate() {
            let s = transition_amplitude(basis, un, um, kc);
            b[slot] += coef * s.conj() * (8.0 * std::f64::consts::PI / (knorms[slot] * vol));
        }
    });
    Ok(b)
}

/// Dressed block on the nonzero-K set:
/// `C_{K,K'} = δ_{K,K'} + ⨍ Σ_{n,m} [1/(Δε+ω) + 1/(Δε−ω)] ·
///             (4π/(|K||K'||Γ|)) conj(s_{nm}(K)) s_{nm}(K')`.
///
/// Hermitian, even in ω, and ≥ 1: each transition contributes a positive
/// multiple of a rank-one projector while `|ω|` stays inside the gap.
pub fn c_operator(bands: &BandStructure, fermi: &FermiData, omega: f64) -> Result<Array2<C64>> {
    ensure_in_gap(omega, fermi)?;
    let basis = bands.basis();
    let vol = basis.reciprocal().cell_volume();
    let kset = nonzero_kset(basis);
    let p = kset.len();
    let origin = [0.0_f64; 3];
    let knorms: Vec<f64> = kset.iter().map(|&i| basis.shifted_norm(&origin, i)).collect();
    let kcoords: Vec<[i64; 3]> = kset.iter().map(|&i| *basis.coord(i)).collect();
    let mut c: Array2<C64> = Array2::eye(p);
    let mut t: Array1<C64> = Array1::zeros(p);
    occupied_virtual_pairs(bands, fermi, |_iq, w, _n, _m, un, um, de| {
        let fac = 1.0 / (de + omega) + 1.0 / (de - omega);
        for slot in 0..p {
            let s = transition_amplitude(basis, un, um, &kcoords[slot]);
            t[slot] = s.conj() * (FOUR_PI.sqrt() / (knorms[slot] * vol.sqrt()));
        }
        let scale = w * fac;
        for i in 0..p {
            for j in 0..p {
                c[[i, j]] += scale * t[i] * t[j].conj();
            }
        }
    });
    Ok(c)
}

/// Macroscopic permittivity at one frequency, with the ingredients that
/// produced it: the velocity form `l`, the per-axis source vectors `b_dirs`
/// (on `nonzero_kset` order), and the dressed block `c`.
#[derive(Debug, Clone)]
pub struct MacroPermittivity {
    pub omega: f64,
    /// Symmetric 3×3 permittivity matrix.
    pub eps: Array2<f64>,
    pub l: Array2<f64>,
    pub b_dirs: [Array1<C64>; 3],
    pub c: Array2<C64>,
    /// Smallest eigenvalue of `eps`; ≥ 1 up to roundoff.
    pub min_eig: f64,
}

/// Assemble `ε_M(ω)` from the Schur-complement quadratic form, recovering the
/// matrix by polarization: diagonal entries from the axis directions, off-
/// diagonal entries from `(Q(e_i+e_j) − Q(e_i) − Q(e_j))/2`.  The dressed
/// block is inverted once; the source vector is linear in the probe
/// direction, so axis vectors suffice.
pub fn eps_m(bands: &BandStructure, fermi: &FermiData, omega: f64) -> Result<MacroPermittivity> {
    ensure_in_gap(omega, fermi)?;
    let l = l_matrix(bands, fermi, omega)?;
    let c = c_operator(bands, fermi, omega)?;
    let p = c.nrows();
    let cinv = if p > 0 {
        Some(
            c.inv()
                .map_err(|e| QuartzError::SolveFailure(format!("dressed block inversion: {e}")))?,
        )
    } else {
        None
    };
    let ex = b_vector(bands, fermi, omega, &[1.0, 0.0, 0.0])?;
    let ey = b_vector(bands, fermi, omega, &[0.0, 1.0, 0.0])?;
    let ez = b_vector(bands, fermi, omega, &[0.0, 0.0, 1.0])?;
    let b_dirs = [ex, ey, ez];

    let q_form = |k: &[f64; 3]| -> f64 {
        let mut quad = norm(k) * norm(k);
        for a in 0..3 {
            for b in 0..3 {
                quad += k[a] * l[[a, b]] * k[b];
            }
        }
        if let Some(cinv) = &cinv {
            let mut bk: Array1<C64> = Array1::zeros(p);
            for a in 0..3 {
                if k[a] != 0.0 {
                    bk = bk + b_dirs[a].mapv(|z| z * k[a]);
                }
            }
            let x = cinv.dot(&bk);
            let corr: f64 = bk.iter().zip(x.iter()).map(|(bi, xi)| (bi.conj() * xi).re).sum();
            quad -= corr;
        }
        quad
    };

    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let q_axis: Vec<f64> = axes.iter().map(|k| q_form(k)).collect();
    let mut eps = Array2::<f64>::zeros((3, 3));
    for i in 0..3 {
        eps[[i, i]] = q_axis[i];
    }
    for i in 0..3 {
        for j in (i + 1)..3 {
            let mut k = [0.0; 3];
            k[i] = 1.0;
            k[j] = 1.0;
            let off = 0.5 * (q_form(&k) - q_axis[i] - q_axis[j]);
            eps[[i, j]] = off;
            eps[[j, i]] = off;
        }
    }
    let (vals, _) = eps
        .eigh(UPLO::Lower)
        .map_err(|e| QuartzError::SolveFailure(format!("permittivity eigendecomposition: {e}")))?;
    Ok(MacroPermittivity {
        omega,
        eps,
        l,
        b_dirs,
        c,
        min_eig: vals[0],
    })
}

/// Head element `⟨e₀, A(ω,q)⁻¹ e₀⟩` of the inverse dressed operator on the
/// full basis: the finite-momentum scalar that converges to `1/(σᵀ ε_M σ)`
/// as `q = ησ → 0`.
pub fn a_scalar_probe(
    bands: &BandStructure,
    pot: &PeriodicPotential,
    fermi: &FermiData,
    omega: f64,
    q: &[f64; 3],
) -> Result<C64> {
    if norm(q) == 0.0 {
        return Err(QuartzError::InvalidArgument(
            "scalar probe requires a nonzero momentum".into(),
        ));
    }
    let basis = bands.basis();
    let kset: Vec<usize> = (0..basis.len()).collect();
    let a = a_matrix(bands, pot, fermi, omega, q, &kset)?;
    let mut rhs: Array1<C64> = Array1::zeros(kset.len());
    rhs[basis.zero_index()] = C64::new(1.0, 0.0);
    let x = a
        .solve(&rhs)
        .map_err(|e| QuartzError::NearSingular(format!("dressed operator solve: {e}")))?;
    Ok(x[basis.zero_index()])
}

/// One external charge mode for the homogenized Poisson problem: a frequency
/// sample index, a nonzero wave vector, and the charge amplitude.
#[derive(Debug, Clone)]
pub struct MacroChargeMode {
    pub omega_index: usize,
    pub k: [f64; 3],
    pub nu_hat: C64,
}

/// Screen external charges in the homogenized medium: each mode receives the
/// potential amplitude `ŵ = 4π ν̂ / (kᵀ ε_M(ω) k)`.  With `ε_M = I` this is
/// the bare Coulomb answer `4π ν̂ / |k|²`.
pub fn macro_poisson_solve(
    samples: &[MacroPermittivity],
    modes: &[MacroChargeMode],
) -> Result<Vec<C64>> {
    let mut out = Vec::with_capacity(modes.len());
    for mode in modes {
        let sample = samples.get(mode.omega_index).ok_or_else(|| {
            QuartzError::InvalidArgument(format!(
                "frequency sample index {} out of range ({} samples)",
                mode.omega_index,
                samples.len()
            ))
        })?;
        if norm(&mode.k) == 0.0 {
            return Err(QuartzError::InvalidArgument(
                "macroscopic Poisson mode requires a nonzero wave vector".into(),
            ));
        }
        let mut denom = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                denom += mode.k[a] * sample.eps[[a, b]] * mode.k[b];
            }
        }
        out.push(FOUR_PI * mode.nu_hat / denom);
    }
    Ok(out)
}
