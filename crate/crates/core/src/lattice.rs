//! Bravais lattices, reciprocal lattices, plane-wave bases and Brillouin-zone
//! grids, in spatial dimension d ∈ {1, 2, 3} chosen at runtime.
//!
//! Vectors are stored as `[f64; 3]` with the trailing components zero when
//! d < 3. Reciprocal-lattice vectors K are carried as integer coordinates on
//! the dual basis (exact arithmetic for closure/lookup) together with their
//! cached Cartesian form.

use crate::error::QuartzError;
use crate::Result;
use std::collections::HashMap;

/// Dot product on the embedding space.
#[inline]
pub fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// A Bravais lattice: d independent vectors spanning the periodicity cell Γ.
#[derive(Debug, Clone)]
pub struct Lattice {
    dim: usize,
    vecs: [[f64; 3]; 3],
    volume: f64,
}

impl Lattice {
    /// Build a lattice from `dim` row vectors. The trailing components of each
    /// vector beyond `dim` must vanish.
    pub fn new(dim: usize, vecs: &[[f64; 3]]) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(QuartzError::InvalidLattice(format!(
                "dimension must be 1, 2 or 3, got {dim}"
            )));
        }
        if vecs.len() != dim {
            return Err(QuartzError::InvalidLattice(format!(
                "expected {dim} lattice vectors, got {}",
                vecs.len()
            )));
        }
        let mut a = [[0.0; 3]; 3];
        let mut scale = 1.0;
        for (i, v) in vecs.iter().enumerate() {
            for c in dim..3 {
                if v[c] != 0.0 {
                    return Err(QuartzError::InvalidLattice(format!(
                        "vector {i} has a nonzero component outside the first {dim} coordinates"
                    )));
                }
            }
            let n = norm(v);
            if !n.is_finite() || n == 0.0 {
                return Err(QuartzError::InvalidLattice(format!(
                    "vector {i} is zero or non-finite"
                )));
            }
            scale *= n;
            a[i] = *v;
        }
        let det = det_d(dim, &a);
        if det.abs() <= 1e-14 * scale {
            return Err(QuartzError::InvalidLattice(format!(
                "lattice vectors are linearly dependent (det = {det:.3e})"
            )));
        }
        Ok(Lattice {
            dim,
            vecs: a,
            volume: det.abs(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// d-dimensional cell volume |Γ| (length in 1D, area in 2D).
    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn vec(&self, i: usize) -> &[f64; 3] {
        &self.vecs[i]
    }
}

/// Determinant of the leading d×d block.
fn det_d(dim: usize, a: &[[f64; 3]; 3]) -> f64 {
    match dim {
        1 => a[0][0],
        2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        _ => {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        }
    }
}

/// The dual lattice: b_i · a_j = 2π δ_ij. Keeps the direct vectors so that
/// Cartesian ↔ fractional conversions need no companion `Lattice`.
#[derive(Debug, Clone)]
pub struct ReciprocalLattice {
    dim: usize,
    vecs: [[f64; 3]; 3],
    direct: [[f64; 3]; 3],
    cell_volume: f64,
    bz_volume: f64,
}

/// Invert the duality relations in closed form (d ≤ 3, no LAPACK needed).
pub fn build_reciprocal(lat: &Lattice) -> Result<ReciprocalLattice> {
    let d = lat.dim;
    let a = &lat.vecs;
    let det = det_d(d, a);
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut b = [[0.0; 3]; 3];
    match d {
        1 => {
            b[0][0] = two_pi / a[0][0];
        }
        2 => {
            // rows of 2π (A^{-1})^T for the 2×2 block
            b[0][0] = two_pi * a[1][1] / det;
            b[0][1] = -two_pi * a[1][0] / det;
            b[1][0] = -two_pi * a[0][1] / det;
            b[1][1] = two_pi * a[0][0] / det;
        }
        _ => {
            let cross = |u: &[f64; 3], v: &[f64; 3]| {
                [
                    u[1] * v[2] - u[2] * v[1],
                    u[2] * v[0] - u[0] * v[2],
                    u[0] * v[1] - u[1] * v[0],
                ]
            };
            let c = [
                cross(&a[1], &a[2]),
                cross(&a[2], &a[0]),
                cross(&a[0], &a[1]),
            ];
            for i in 0..3 {
                for k in 0..3 {
                    b[i][k] = two_pi * c[i][k] / det;
                }
            }
        }
    }
    Ok(ReciprocalLattice {
        dim: d,
        vecs: b,
        direct: lat.vecs,
        cell_volume: lat.volume,
        bz_volume: two_pi.powi(d as i32) / lat.volume,
    })
}

impl ReciprocalLattice {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vec(&self, i: usize) -> &[f64; 3] {
        &self.vecs[i]
    }

    /// Volume of the direct-space cell Γ.
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Volume of the Brillouin zone, (2π)^d / |Γ|.
    pub fn bz_volume(&self) -> f64 {
        self.bz_volume
    }

    /// Cartesian vector of the integer point m: Σ_i m_i b_i.
    pub fn cartesian(&self, m: &[i64; 3]) -> [f64; 3] {
        let mut k = [0.0; 3];
        for i in 0..self.dim {
            for c in 0..3 {
                k[c] += m[i] as f64 * self.vecs[i][c];
            }
        }
        k
    }

    /// Cartesian vector of fractional coordinates f: Σ_i f_i b_i.
    pub fn cartesian_frac(&self, f: &[f64; 3]) -> [f64; 3] {
        let mut k = [0.0; 3];
        for i in 0..self.dim {
            for c in 0..3 {
                k[c] += f[i] * self.vecs[i][c];
            }
        }
        k
    }

    /// Fractional coordinates of a Cartesian vector: f_i = (k · a_i) / 2π.
    pub fn fractional(&self, k: &[f64; 3]) -> [f64; 3] {
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut f = [0.0; 3];
        for i in 0..self.dim {
            f[i] = dot(k, &self.direct[i]) / two_pi;
        }
        f
    }

    /// Fold a Cartesian vector into the half-open first Brillouin zone:
    /// k = q + K with fractional coordinates of q in (-1/2, 1/2] and K an
    /// integer reciprocal point.
    pub fn fold_to_bz(&self, k: &[f64; 3]) -> ([f64; 3], [i64; 3]) {
        let f = self.fractional(k);
        let mut m = [0i64; 3];
        let mut qf = [0.0; 3];
        for i in 0..self.dim {
            m[i] = fold_component(f[i]);
            qf[i] = f[i] - m[i] as f64;
        }
        (self.cartesian_frac(&qf), m)
    }
}

/// Integer shift placing x - shift into (-1/2, 1/2].
#[inline]
fn fold_component(x: f64) -> i64 {
    // ceil(x - 1/2) maps (n - 1/2, n + 1/2] -> n
    (x - 0.5).ceil() as i64
}

/// Finite plane-wave set {K ∈ 𝓡* : |K|²/2 ≤ E_cut}, ordered lexicographically
/// by integer coordinates. Contains 0 and is closed under K → -K.
#[derive(Debug, Clone)]
pub struct PlaneWaveBasis {
    rl: ReciprocalLattice,
    e_cut: f64,
    coords: Vec<[i64; 3]>,
    carts: Vec<[f64; 3]>,
    index: HashMap<[i64; 3], usize>,
}

/// Enumerate the cutoff ball. The search box is derived from the shortest
/// dual-basis direction so no admissible point is missed for skewed cells.
pub fn plane_wave_basis(rl: &ReciprocalLattice, e_cut: f64) -> Result<PlaneWaveBasis> {
    if !(e_cut > 0.0) || !e_cut.is_finite() {
        return Err(QuartzError::InvalidArgument(format!(
            "cutoff energy must be positive and finite, got {e_cut}"
        )));
    }
    let d = rl.dim;
    let kmax = (2.0 * e_cut).sqrt();
    // |Σ m_i b_i| ≥ |m_i| · (distance of b_i to span of the others); bound the
    // search range per axis by kmax over that distance.
    let mut range = [0i64; 3];
    for i in 0..d {
        let dist = axis_clearance(rl, i);
        range[i] = (kmax / dist).floor() as i64 + 1;
    }
    let mut coords = Vec::new();
    let lims = |i: usize| -> std::ops::RangeInclusive<i64> {
        if i < d {
            -range[i]..=range[i]
        } else {
            0..=0
        }
    };
    for m0 in lims(0) {
        for m1 in lims(1) {
            for m2 in lims(2) {
                let m = [m0, m1, m2];
                let k = rl.cartesian(&m);
                if 0.5 * dot(&k, &k) <= e_cut {
                    coords.push(m);
                }
            }
        }
    }
    coords.sort_unstable();
    let carts: Vec<[f64; 3]> = coords.iter().map(|m| rl.cartesian(m)).collect();
    let index = coords
        .iter()
        .enumerate()
        .map(|(i, m)| (*m, i))
        .collect::<HashMap<_, _>>();
    Ok(PlaneWaveBasis {
        rl: rl.clone(),
        e_cut,
        coords,
        carts,
        index,
    })
}

/// Distance from b_i to the span of the other dual vectors (within the first
/// d coordinates). Equals |b_i| when d = 1.
fn axis_clearance(rl: &ReciprocalLattice, i: usize) -> f64 {
    let d = rl.dim;
    let bi = rl.vecs[i];
    match d {
        1 => norm(&bi),
        2 => {
            let bj = rl.vecs[1 - i];
            let t = dot(&bi, &bj) / dot(&bj, &bj);
            let mut r = [0.0; 3];
            for c in 0..3 {
                r[c] = bi[c] - t * bj[c];
            }
            norm(&r)
        }
        _ => {
            // distance = d-volume / area of the opposite face
            let (j, k) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let u = rl.vecs[j];
            let v = rl.vecs[k];
            let cx = [
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ];
            let vol = det_d(3, &rl.vecs).abs();
            vol / norm(&cx)
        }
    }
}

impl PlaneWaveBasis {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rl.dim
    }

    pub fn e_cut(&self) -> f64 {
        self.e_cut
    }

    pub fn reciprocal(&self) -> &ReciprocalLattice {
        &self.rl
    }

    pub fn coord(&self, i: usize) -> &[i64; 3] {
        &self.coords[i]
    }

    pub fn coords(&self) -> &[[i64; 3]] {
        &self.coords
    }

    /// Cached Cartesian vector of basis entry i.
    pub fn cart(&self, i: usize) -> &[f64; 3] {
        &self.carts[i]
    }

    pub fn index_of(&self, m: &[i64; 3]) -> Option<usize> {
        self.index.get(m).copied()
    }

    /// Index of the zero vector (present by construction).
    pub fn zero_index(&self) -> usize {
        self.index[&[0, 0, 0]]
    }

    /// |q + K| for basis entry i and a Cartesian offset q.
    pub fn shifted_norm(&self, q: &[f64; 3], i: usize) -> f64 {
        let k = &self.carts[i];
        let s = [k[0] + q[0], k[1] + q[1], k[2] + q[2]];
        norm(&s)
    }
}

/// Uniform Monkhorst-Pack-style grid of the Brillouin zone, stored in
/// generation order j_i = 0..n_i-1 with each point folded to the half-open
/// zone. Exact integer bookkeeping for point addition.
#[derive(Debug, Clone)]
pub struct BrillouinGrid {
    rl: ReciprocalLattice,
    counts: [usize; 3],
    /// canonical folded integer numerators: frac_i = j_i / n_i, j canonical
    points_int: Vec<[i64; 3]>,
    points_cart: Vec<[f64; 3]>,
    weights: Vec<f64>,
    index: HashMap<[i64; 3], usize>,
}

/// Build the uniform grid with `counts[i] ≥ 1` subdivisions along b_i.
pub fn bz_grid(rl: &ReciprocalLattice, counts: &[usize]) -> Result<BrillouinGrid> {
    let d = rl.dim;
    if counts.len() != d {
        return Err(QuartzError::InvalidArgument(format!(
            "expected {d} grid counts, got {}",
            counts.len()
        )));
    }
    if counts.iter().any(|&n| n == 0) {
        return Err(QuartzError::InvalidArgument(
            "grid counts must be at least 1".into(),
        ));
    }
    let mut c = [1usize; 3];
    c[..d].copy_from_slice(counts);
    let total: usize = c.iter().product();

    let mut points_int = Vec::with_capacity(total);
    for j0 in 0..c[0] {
        for j1 in 0..c[1] {
            for j2 in 0..c[2] {
                let raw = [j0 as i64, j1 as i64, j2 as i64];
                let mut p = [0i64; 3];
                for i in 0..3 {
                    p[i] = fold_numerator(raw[i], c[i] as i64);
                }
                points_int.push(p);
            }
        }
    }
    let points_cart: Vec<[f64; 3]> = points_int
        .iter()
        .map(|p| {
            let f = [
                p[0] as f64 / c[0] as f64,
                p[1] as f64 / c[1] as f64,
                p[2] as f64 / c[2] as f64,
            ];
            rl.cartesian_frac(&f)
        })
        .collect();
    let w = 1.0 / total as f64;
    let mut weights = vec![w; total];
    // make the total exactly 1.0: the last weight absorbs the closing ulp
    let partial: f64 = weights[..total - 1].iter().sum();
    weights[total - 1] = 1.0 - partial;

    let index = points_int
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, i))
        .collect::<HashMap<_, _>>();
    Ok(BrillouinGrid {
        rl: rl.clone(),
        counts: c,
        points_int,
        points_cart,
        weights,
        index,
    })
}

/// Canonical numerator j with j/n ∈ (-1/2, 1/2]: shift raw (mod n) so that
/// 2j > n wraps negative.
#[inline]
fn fold_numerator(j_raw: i64, n: i64) -> i64 {
    let j = j_raw.rem_euclid(n);
    if 2 * j > n {
        j - n
    } else {
        j
    }
}

impl BrillouinGrid {
    pub fn len(&self) -> usize {
        self.points_int.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_int.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rl.dim
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.rl.dim]
    }

    pub fn reciprocal(&self) -> &ReciprocalLattice {
        &self.rl
    }

    pub fn cart(&self, i: usize) -> &[f64; 3] {
        &self.points_cart[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Fractional coordinates of point i (exact rational j/n evaluated in f64).
    pub fn frac(&self, i: usize) -> [f64; 3] {
        let p = self.points_int[i];
        [
            p[0] as f64 / self.counts[0] as f64,
            p[1] as f64 / self.counts[1] as f64,
            p[2] as f64 / self.counts[2] as f64,
        ]
    }

    /// Grid index whose canonical numerators equal `p`, if any.
    pub fn index_of_int(&self, p: &[i64; 3]) -> Option<usize> {
        self.index.get(p).copied()
    }

    /// Index of q_a + q_b folded back onto the grid, together with the integer
    /// reciprocal shift Δ such that q_a + q_b = q_folded + Δ (Δ in dual-basis
    /// integer coordinates). Exact integer arithmetic.
    pub fn add_fold(&self, ia: usize, ib: usize) -> (usize, [i64; 3]) {
        let a = self.points_int[ia];
        let b = self.points_int[ib];
        let mut p = [0i64; 3];
        let mut delta = [0i64; 3];
        for i in 0..3 {
            let n = self.counts[i] as i64;
            let s = a[i] + b[i];
            let c = fold_numerator(s, n);
            p[i] = c;
            debug_assert_eq!((s - c) % n, 0);
            delta[i] = (s - c) / n;
        }
        (self.index[&p], delta)
    }

    /// Index of -q folded onto the grid, with the accompanying integer shift.
    pub fn neg_fold(&self, ia: usize) -> (usize, [i64; 3]) {
        let a = self.points_int[ia];
        let mut p = [0i64; 3];
        let mut delta = [0i64; 3];
        for i in 0..3 {
            let n = self.counts[i] as i64;
            let s = -a[i];
            let c = fold_numerator(s, n);
            p[i] = c;
            delta[i] = (s - c) / n;
        }
        (self.index[&p], delta)
    }

    /// Index of the zero point.
    pub fn zero_index(&self) -> usize {
        self.index[&[0, 0, 0]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cubic(a: f64) -> Lattice {
        Lattice::new(
            3,
            &[[a, 0.0, 0.0], [0.0, a, 0.0], [0.0, 0.0, a]],
        )
        .unwrap()
    }

    #[test]
    fn duality_holds_for_skewed_3d_cell() {
        let lat = Lattice::new(
            3,
            &[[1.0, 0.0, 0.0], [0.6, 1.3, 0.0], [-0.2, 0.4, 2.0]],
        )
        .unwrap();
        let rl = build_reciprocal(&lat).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { two_pi } else { 0.0 };
                assert_relative_eq!(
                    dot(rl.vec(i), lat.vec(j)),
                    want,
                    epsilon = 1e-12 * two_pi
                );
            }
        }
        assert_relative_eq!(rl.bz_volume(), two_pi.powi(3) / lat.volume(), max_relative = 1e-14);
    }

    #[test]
    fn degenerate_lattice_rejected() {
        let r = Lattice::new(2, &[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert!(matches!(r, Err(QuartzError::InvalidLattice(_))));
        let r = Lattice::new(1, &[[0.0, 0.0, 0.0]]);
        assert!(matches!(r, Err(QuartzError::InvalidLattice(_))));
    }

    #[test]
    fn basis_contains_zero_is_symmetric_and_sorted() {
        let lat = Lattice::new(2, &[[1.0, 0.0, 0.0], [0.5, 1.1, 0.0]]).unwrap();
        let rl = build_reciprocal(&lat).unwrap();
        let basis = plane_wave_basis(&rl, 40.0).unwrap();
        assert!(basis.index_of(&[0, 0, 0]).is_some());
        for m in basis.coords() {
            let neg = [-m[0], -m[1], -m[2]];
            assert!(basis.index_of(&neg).is_some(), "missing -K for K={m:?}");
        }
        let mut sorted = basis.coords().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, basis.coords());
        for i in 0..basis.len() {
            let k = basis.cart(i);
            assert!(0.5 * dot(k, k) <= basis.e_cut() + 1e-12);
        }
    }

    #[test]
    fn basis_count_matches_direct_enumeration_1d() {
        // 1D, a = 2π so b = 1: K = m, cutoff |m|²/2 ≤ 8 → m ∈ [-4, 4]
        let lat = Lattice::new(1, &[[2.0 * std::f64::consts::PI, 0.0, 0.0]]).unwrap();
        let rl = build_reciprocal(&lat).unwrap();
        let basis = plane_wave_basis(&rl, 8.0).unwrap();
        assert_eq!(basis.len(), 9);
    }

    #[test]
    fn grid_weights_sum_exactly_to_one() {
        for counts in [[3usize], [5], [7], [12]] {
            let lat = Lattice::new(1, &[[1.7, 0.0, 0.0]]).unwrap();
            let rl = build_reciprocal(&lat).unwrap();
            let g = bz_grid(&rl, &counts).unwrap();
            let total: f64 = g.weights().iter().sum();
            assert_eq!(total, 1.0, "counts {counts:?}");
        }
        let lat = cubic(1.0);
        let rl = build_reciprocal(&lat).unwrap();
        let g = bz_grid(&rl, &[3, 5, 2]).unwrap();
        assert_eq!(g.weights().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn grid_folds_to_half_open_zone() {
        let lat = Lattice::new(1, &[[1.0, 0.0, 0.0]]).unwrap();
        let rl = build_reciprocal(&lat).unwrap();
        let g = bz_grid(&rl, &[4]).unwrap();
        // generation order 0, 1/4, 2/4 → 1/2 stays, 3/4 → -1/4
        let fracs: Vec<f64> = (0..4).map(|i| g.frac(i)[0]).collect();
        assert_eq!(fracs, vec![0.0, 0.25, 0.5, -0.25]);
    }

    #[test]
    fn add_fold_reports_exact_integer_shift() {
        let lat = Lattice::new(1, &[[1.0, 0.0, 0.0]]).unwrap();
        let rl = build_reciprocal(&lat).unwrap();
        let g = bz_grid(&rl, &[4]).unwrap();
        // 1/2 + 1/2 = 1 → folds to 0 with shift Δ = 1
        let ih = g.index_of_int(&[2, 0, 0]).unwrap();
        let (idx, delta) = g.add_fold(ih, ih);
        assert_eq!(idx, g.zero_index());
        assert_eq!(delta, [1, 0, 0]);
        // 1/2 + 1/4 = 3/4 → folds to -1/4 with shift Δ = 1
        let iq = g.index_of_int(&[1, 0, 0]).unwrap();
        let (idx, delta) = g.add_fold(ih, iq);
        assert_eq!(idx, g.index_of_int(&[-1, 0, 0]).unwrap());
        assert_eq!(delta, [1, 0, 0]);
    }

    #[test]
    fn fold_to_bz_half_open_boundary() {
        let lat = Lattice::new(1, &[[1.0, 0.0, 0.0]]).unwrap();
        let rl = build_reciprocal(&lat).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        // +b/2 stays, -b/2 folds to +b/2 with K = -b
        let (q, m) = rl.fold_to_bz(&[std::f64::consts::PI, 0.0, 0.0]);
        assert_relative_eq!(q[0], two_pi / 2.0, max_relative = 1e-12);
        assert_eq!(m, [0, 0, 0]);
        let (q, m) = rl.fold_to_bz(&[-std::f64::consts::PI, 0.0, 0.0]);
        assert_relative_eq!(q[0], std::f64::consts::PI, max_relative = 1e-12);
        assert_eq!(m, [-1, 0, 0]);
    }

    proptest! {
        #[test]
        fn fold_reconstructs_input(kx in -20.0f64..20.0, ky in -20.0f64..20.0) {
            let lat = Lattice::new(2, &[[1.0, 0.0, 0.0], [0.3, 1.4, 0.0]]).unwrap();
            let rl = build_reciprocal(&lat).unwrap();
            let k = [kx, ky, 0.0];
            let (q, m) = rl.fold_to_bz(&k);
            let kk = rl.cartesian(&m);
            for c in 0..3 {
                prop_assert!((q[c] + kk[c] - k[c]).abs() < 1e-9,
                    "component {c}: {} vs {}", q[c] + kk[c], k[c]);
            }
            let f = rl.fractional(&q);
            for i in 0..2 {
                prop_assert!(f[i] > -0.5 - 1e-12 && f[i] <= 0.5 + 1e-12);
            }
        }

        #[test]
        fn random_lattices_satisfy_duality(
            a00 in 0.5f64..3.0, a10 in -1.0f64..1.0, a11 in 0.5f64..3.0,
        ) {
            let lat = Lattice::new(2, &[[a00, 0.0, 0.0], [a10, a11, 0.0]]).unwrap();
            let rl = build_reciprocal(&lat).unwrap();
            let two_pi = 2.0 * std::f64::consts::PI;
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { two_pi } else { 0.0 };
                    prop_assert!((dot(rl.vec(i), lat.vec(j)) - want).abs() < 1e-10);
                }
            }
        }
    }
}
