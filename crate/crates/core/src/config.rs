//! Run configuration: one strict TOML file drives every subcommand.
//!
//! The schema rejects unknown keys so typos fail loudly, and every quantity
//! is in Hartree atomic units (ħ = m = e = 1). A minimal config carries a
//! `[lattice]` block (dimension and primitive vectors), a `[model]` block
//! (electron count, plane-wave cutoff, Brillouin-zone grid), and a
//! `[potential]` block giving either an explicit Fourier coefficient list or
//! an `scf` sub-table with the nuclear structure factors. Optional
//! `[response]`, `[epsm]`, and `[dynamics]` blocks parameterize the
//! corresponding subcommands; `[output]` picks the destination directory and
//! a default worker count.
//!
//! ```toml
//! [lattice]
//! dimension = 1
//! vectors = [[6.283185307179586, 0.0, 0.0]]
//!
//! [model]
//! n_electrons = 1
//! e_cut = 8.0
//! grid = [9]
//!
//! [[potential.coefficients]]
//! g = [1, 0, 0]
//! re = 0.752
//! ```
//!
//! Potential and nuclear-density mode lists name only one member of each
//! ±K pair when convenient — Hermitian symmetry of the total list is
//! enforced, not synthesized — except that drive entries list exactly one
//! member and the conjugate partner is added automatically so the applied
//! field is real. The K = 0 nuclear amplitude is derived from
//! `n_electrons` (charge neutrality) and must not be listed explicitly.
//!
//! [`RunConfig::load`] returns the parsed configuration together with an
//! FNV-1a hash of the raw file bytes; the hash is embedded in every output
//! sidecar so results stay traceable to the exact configuration text.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array1;
use num_complex::Complex64 as C64;
use serde::Deserialize;

use crate::bands::{
    fermi_data, solve_bands, scf_periodic, BandStructure, FermiData, PeriodicPotential,
    ScfOptions,
};
use crate::coulomb::FourierCoeffs;
use crate::dynamics::{DriveTerm, ExternalDrive, HartreeOptions, PicardOptions, SupercellModel};
use crate::error::QuartzError;
use crate::lattice::{
    build_reciprocal, bz_grid, plane_wave_basis, BrillouinGrid, Lattice, PlaneWaveBasis,
};
use crate::response::ResponseQuery;
use crate::Result;

/// Top-level configuration. See the module docs for the TOML layout.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeSection,
    pub model: ModelSection,
    pub potential: PotentialSection,
    #[serde(default)]
    pub response: Option<ResponseSection>,
    #[serde(default)]
    pub epsm: Option<EpsmSection>,
    #[serde(default)]
    pub dynamics: Option<DynamicsSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    /// Number of periodic directions (1, 2, or 3).
    pub dimension: usize,
    /// One primitive vector per periodic direction, embedded in ℝ³.
    pub vectors: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Electrons per primitive cell (= number of occupied bands).
    pub n_electrons: usize,
    /// Plane-wave kinetic cutoff: the basis keeps ½|K|² ≤ e_cut.
    pub e_cut: f64,
    /// Monkhorst–Pack subdivision counts, one per periodic direction.
    pub grid: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    /// Explicit Fourier coefficients of the external potential.
    #[serde(default)]
    pub coefficients: Option<Vec<ModeEntry>>,
    /// Self-consistent Hartree potential from a nuclear charge density.
    #[serde(default)]
    pub scf: Option<ScfSection>,
}

/// One Fourier mode: integer reciprocal coordinates and a complex amplitude.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub g: [i64; 3],
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl ModeEntry {
    fn amp(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScfSection {
    /// Nuclear structure factors at K ≠ 0. The neutralizing K = 0 amplitude
    /// is added automatically from `n_electrons`.
    pub rho_nuc: Vec<ModeEntry>,
    /// Damping of the fixed-point update (0 < mixing ≤ 1).
    #[serde(default = "default_mixing")]
    pub mixing: f64,
    #[serde(default = "default_scf_tol")]
    pub tol: f64,
    #[serde(default = "default_scf_max_iter")]
    pub max_iter: usize,
}

fn default_mixing() -> f64 {
    0.4
}
fn default_scf_tol() -> f64 {
    1e-10
}
fn default_scf_max_iter() -> usize {
    500
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseSection {
    /// Probe frequencies.
    pub omegas: Vec<f64>,
    /// Spectral broadening η > 0.
    pub eta: f64,
    /// Transferred momentum as integer grid numerators (q = Σ qᵢ bᵢ / Nᵢ).
    pub q: [i64; 3],
    /// Reciprocal modes spanning the reported block; omit for the full ball.
    #[serde(default)]
    pub k_modes: Option<Vec<[i64; 3]>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsmSection {
    /// Number of frequency samples across the window (odd counts include 0).
    #[serde(default = "default_omega_count")]
    pub omega_count: usize,
    /// Half-width of the sampled interval as a fraction of the spectral gap.
    #[serde(default = "default_window")]
    pub window: f64,
}

fn default_omega_count() -> usize {
    21
}
fn default_window() -> f64 {
    0.8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    /// Supercell repetitions, one count per periodic direction.
    pub n_cells: Vec<usize>,
    /// Crank–Nicolson time step.
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iter")]
    pub picard_max_iter: usize,
    /// Drop the induced Coulomb feedback (linear-response reference run).
    #[serde(default)]
    pub linearized: bool,
    /// External charge drive, one term per primitive-cell mode.
    #[serde(default)]
    pub drive: Vec<DriveEntry>,
}

fn default_picard_tol() -> f64 {
    1e-12
}
fn default_picard_max_iter() -> usize {
    80
}

/// One drive term ν̂(K, t) = amp·g(t) at K = g (plus the conjugate partner
/// at −g, added automatically so the drive charge is real).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveEntry {
    /// Primitive-cell reciprocal coordinates of the driven mode (nonzero).
    pub g: [i64; 3],
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
    #[serde(default = "default_envelope")]
    pub envelope: Envelope,
    /// Envelope frequency, used by `sin` and `cos`.
    #[serde(default)]
    pub omega: f64,
}

impl DriveEntry {
    fn amp(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    Constant,
    Sin,
    Cos,
}

fn default_envelope() -> Envelope {
    Envelope::Constant
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Destination directory for tables and sidecars.
    pub directory: String,
    /// Default worker-thread count (the `--threads` flag overrides it).
    pub threads: Option<usize>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: "out".into(),
            threads: None,
        }
    }
}

/// A parsed configuration plus the FNV-1a hash of the raw file bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub hash: String,
}

/// 64-bit FNV-1a over raw bytes, rendered as 16 hex digits.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

impl RunConfig {
    /// Parse a TOML string and run the schema checks.
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let run: RunConfig = toml::from_str(text)
            .map_err(|e| QuartzError::InvalidConfig(format!("config parse error: {e}")))?;
        run.validate()?;
        Ok(run)
    }

    /// Read, hash, parse, and validate a configuration file.
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let bytes = std::fs::read(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|_| {
            QuartzError::InvalidConfig(format!("{} is not UTF-8 text", path.display()))
        })?;
        let run = RunConfig::from_toml(text)?;
        Ok(LoadedConfig {
            run,
            hash: fnv1a_hex(&bytes),
        })
    }

    /// Cross-field checks the serde schema cannot express.
    pub fn validate(&self) -> Result<()> {
        let dim = self.lattice.dimension;
        if !(1..=3).contains(&dim) {
            return Err(invalid(format!("dimension must be 1, 2, or 3, got {dim}")));
        }
        if self.lattice.vectors.len() != dim {
            return Err(invalid(format!(
                "need {dim} lattice vectors, got {}",
                self.lattice.vectors.len()
            )));
        }
        if !self
            .lattice
            .vectors
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
        {
            return Err(invalid("lattice vectors must be finite".into()));
        }
        if self.model.n_electrons == 0 {
            return Err(invalid("n_electrons must be at least 1".into()));
        }
        if !(self.model.e_cut.is_finite() && self.model.e_cut > 0.0) {
            return Err(invalid(format!(
                "e_cut must be positive, got {}",
                self.model.e_cut
            )));
        }
        if self.model.grid.len() != dim {
            return Err(invalid(format!(
                "need {dim} grid counts, got {}",
                self.model.grid.len()
            )));
        }
        if self.model.grid.iter().any(|&n| n == 0) {
            return Err(invalid("grid counts must be at least 1".into()));
        }
        match (&self.potential.coefficients, &self.potential.scf) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "potential gives both an explicit coefficient list and an scf section; \
                     pick one"
                        .into(),
                ))
            }
            (None, None) => {
                return Err(invalid(
                    "potential needs either a coefficient list or an scf section".into(),
                ))
            }
            (Some(list), None) => {
                if list.iter().any(|m| !m.amp().is_finite()) {
                    return Err(invalid("potential coefficients must be finite".into()));
                }
            }
            (None, Some(scf)) => {
                if scf.rho_nuc.iter().any(|m| m.g == [0, 0, 0]) {
                    return Err(invalid(
                        "rho_nuc must not list K = 0; the neutralizing amplitude is derived \
                         from n_electrons"
                            .into(),
                    ));
                }
                if !(scf.mixing > 0.0 && scf.mixing <= 1.0) {
                    return Err(invalid(format!(
                        "scf mixing must lie in (0, 1], got {}",
                        scf.mixing
                    )));
                }
                if !(scf.tol > 0.0) || scf.max_iter == 0 {
                    return Err(invalid("scf tol and max_iter must be positive".into()));
                }
            }
        }
        if let Some(resp) = &self.response {
            if resp.omegas.is_empty() {
                return Err(invalid("response.omegas must not be empty".into()));
            }
            if !resp.omegas.iter().all(|w| w.is_finite()) {
                return Err(invalid("response.omegas must be finite".into()));
            }
            if !(resp.eta.is_finite() && resp.eta > 0.0) {
                return Err(invalid(format!(
                    "response.eta must be positive, got {}",
                    resp.eta
                )));
            }
        }
        if let Some(epsm) = &self.epsm {
            if epsm.omega_count == 0 {
                return Err(invalid("epsm.omega_count must be at least 1".into()));
            }
            if !(epsm.window > 0.0 && epsm.window < 1.0) {
                return Err(invalid(format!(
                    "epsm.window must lie strictly inside (0, 1), got {}",
                    epsm.window
                )));
            }
        }
        if let Some(dyn_) = &self.dynamics {
            if dyn_.n_cells.len() != dim {
                return Err(invalid(format!(
                    "need {dim} supercell counts, got {}",
                    dyn_.n_cells.len()
                )));
            }
            if dyn_.n_cells.iter().any(|&n| n == 0) {
                return Err(invalid("supercell counts must be at least 1".into()));
            }
            if !(dyn_.dt.is_finite() && dyn_.dt > 0.0) {
                return Err(invalid(format!("dt must be positive, got {}", dyn_.dt)));
            }
            if !(dyn_.t_final.is_finite() && dyn_.t_final >= dyn_.dt) {
                return Err(invalid(format!(
                    "t_final must be at least one step dt, got {}",
                    dyn_.t_final
                )));
            }
            if !(dyn_.picard_tol > 0.0) || dyn_.picard_max_iter == 0 {
                return Err(invalid(
                    "picard_tol and picard_max_iter must be positive".into(),
                ));
            }
            for term in &dyn_.drive {
                if term.g == [0, 0, 0] {
                    return Err(invalid(
                        "drive terms must target a nonzero mode (the drive charge is neutral)"
                            .into(),
                    ));
                }
                if !term.amp().is_finite() || !term.omega.is_finite() {
                    return Err(invalid("drive amplitudes must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// The periodic directions' primitive vectors as a `Lattice`.
    pub fn build_lattice(&self) -> Result<Lattice> {
        Lattice::new(self.lattice.dimension, &self.lattice.vectors)
    }

    /// External potential from the explicit coefficient list (checks
    /// Hermitian symmetry). For SCF configs, hands back the nuclear density
    /// coefficients validated the same way, embedded in the given basis.
    pub fn build_potential(&self, basis: &Arc<PlaneWaveBasis>) -> Result<PotentialModel> {
        match (&self.potential.coefficients, &self.potential.scf) {
            (Some(list), None) => {
                let pairs: Vec<([i64; 3], C64)> = list.iter().map(|m| (m.g, m.amp())).collect();
                Ok(PotentialModel::Explicit(PeriodicPotential::from_pairs(
                    &pairs,
                )?))
            }
            (None, Some(scf)) => {
                let vol = basis.reciprocal().cell_volume();
                let mut c: Array1<C64> = Array1::zeros(basis.len());
                c[basis.zero_index()] = C64::new(self.model.n_electrons as f64 / vol.sqrt(), 0.0);
                for m in &scf.rho_nuc {
                    let i = basis.index_of(&m.g).ok_or_else(|| {
                        invalid(format!(
                            "rho_nuc mode {:?} lies outside the plane-wave ball",
                            m.g
                        ))
                    })?;
                    c[i] += m.amp();
                }
                let rho = FourierCoeffs::new(basis.clone(), c, true)?;
                Ok(PotentialModel::Scf {
                    rho_nuc: rho,
                    opts: ScfOptions {
                        alpha: scf.mixing,
                        tol: scf.tol,
                        max_iter: scf.max_iter,
                        ..ScfOptions::new(self.model.n_electrons)
                    },
                })
            }
            _ => unreachable!("validate() enforces exactly one potential variant"),
        }
    }

    /// Grid subdivision counts padded to three entries.
    fn grid_counts(&self) -> Vec<usize> {
        self.model.grid.clone()
    }

    /// Solve the configured model: basis, Brillouin grid, potential (running
    /// the SCF loop when configured), band structure, and Fermi data.
    pub fn solve(&self) -> Result<Instance> {
        let lat = self.build_lattice()?;
        let rl = build_reciprocal(&lat)?;
        let basis = Arc::new(plane_wave_basis(&rl, self.model.e_cut)?);
        let grid = Arc::new(bz_grid(&rl, &self.grid_counts())?);
        let (potential, bands, fermi, scf_iterations) = match self.build_potential(&basis)? {
            PotentialModel::Explicit(pot) => {
                let bands = solve_bands(&basis, &grid, &pot)?;
                let fermi = fermi_data(&bands, self.model.n_electrons)?;
                (pot, bands, fermi, None)
            }
            PotentialModel::Scf { rho_nuc, opts } => {
                let out = scf_periodic(&basis, &grid, &rho_nuc, &opts)?;
                (out.potential, out.bands, out.fermi, Some(out.iterations))
            }
        };
        Ok(Instance {
            lattice: lat,
            basis,
            grid,
            potential,
            bands,
            fermi,
            scf_iterations,
        })
    }

    /// Map the `[response]` block onto a concrete query against `inst`.
    pub fn response_query(&self, inst: &Instance) -> Result<ResponseQuery> {
        let resp = self
            .response
            .as_ref()
            .ok_or_else(|| invalid("this command needs a [response] section".into()))?;
        let iq = lookup_grid_point(&inst.grid, &resp.q)?;
        let kset: Vec<usize> = match &resp.k_modes {
            None => (0..inst.basis.len()).collect(),
            Some(list) => {
                let mut out = Vec::with_capacity(list.len());
                for k in list {
                    out.push(inst.basis.index_of(k).ok_or_else(|| {
                        invalid(format!("K mode {k:?} lies outside the plane-wave ball"))
                    })?);
                }
                out
            }
        };
        Ok(ResponseQuery {
            omegas: resp.omegas.clone(),
            eta: resp.eta,
            iq,
            kset,
        })
    }

    /// Frequency samples for the macroscopic permittivity: `omega_count`
    /// points spread evenly over [−window·gap, +window·gap].
    pub fn epsm_omegas(&self, gap: f64) -> Result<Vec<f64>> {
        let epsm = self
            .epsm
            .as_ref()
            .ok_or_else(|| invalid("this command needs an [epsm] section".into()))?;
        let half = epsm.window * gap;
        let n = epsm.omega_count;
        if n == 1 {
            return Ok(vec![0.0]);
        }
        Ok((0..n)
            .map(|i| half * (2.0 * i as f64 / (n - 1) as f64 - 1.0))
            .collect())
    }

    /// Assemble the supercell propagation problem from the `[dynamics]`
    /// block: model, charge drive, uniform time grid, and solver options.
    pub fn build_dynamics(&self, inst: &Instance) -> Result<DynamicsSetup> {
        let dyn_ = self
            .dynamics
            .as_ref()
            .ok_or_else(|| invalid("this command needs a [dynamics] section".into()))?;
        let model = SupercellModel::build(
            &inst.lattice,
            &inst.potential,
            &dyn_.n_cells,
            self.model.e_cut,
            self.model.n_electrons,
        )?;
        let mut terms = Vec::with_capacity(dyn_.drive.len());
        for entry in &dyn_.drive {
            let neg = [-entry.g[0], -entry.g[1], -entry.g[2]];
            let profile =
                model.lift_primitive_profile(&[(entry.g, entry.amp()), (neg, entry.amp().conj())])?;
            let omega = entry.omega;
            let term = match entry.envelope {
                Envelope::Constant => DriveTerm::new(&model, profile, true, |_| 1.0, |_| 0.0)?,
                Envelope::Sin => DriveTerm::new(
                    &model,
                    profile,
                    true,
                    move |t| (omega * t).sin(),
                    move |t| omega * (omega * t).cos(),
                )?,
                Envelope::Cos => DriveTerm::new(
                    &model,
                    profile,
                    true,
                    move |t| (omega * t).cos(),
                    move |t| -omega * (omega * t).sin(),
                )?,
            };
            terms.push(term);
        }
        let drive = ExternalDrive::charge(&model, terms)?;
        let n_steps = (dyn_.t_final / dyn_.dt).round().max(1.0) as usize;
        let t_grid: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dyn_.dt).collect();
        let opts = HartreeOptions {
            picard: PicardOptions {
                tol: dyn_.picard_tol,
                max_iter: dyn_.picard_max_iter,
            },
            linearized: dyn_.linearized,
        };
        Ok(DynamicsSetup {
            model,
            drive,
            t_grid,
            opts,
        })
    }
}

/// Solved model shared by every subcommand.
pub struct Instance {
    pub lattice: Lattice,
    pub basis: Arc<PlaneWaveBasis>,
    pub grid: Arc<BrillouinGrid>,
    pub potential: PeriodicPotential,
    pub bands: BandStructure,
    pub fermi: FermiData,
    /// SCF iteration count when the potential was solved self-consistently.
    pub scf_iterations: Option<usize>,
}

/// The two ways a config can specify the one-body potential.
pub enum PotentialModel {
    Explicit(PeriodicPotential),
    Scf {
        rho_nuc: FourierCoeffs,
        opts: ScfOptions,
    },
}

/// Everything `hartree_evolve` needs, built from the `[dynamics]` block.
pub struct DynamicsSetup {
    pub model: SupercellModel,
    pub drive: ExternalDrive,
    pub t_grid: Vec<f64>,
    pub opts: HartreeOptions,
}

fn invalid(msg: String) -> QuartzError {
    QuartzError::InvalidConfig(msg)
}

/// Find the grid point with the given integer numerators, accepting any
/// representative of the residue class (the grid stores one canonical
/// numerator per class, so try the folds of each component).
fn lookup_grid_point(grid: &BrillouinGrid, q: &[i64; 3]) -> Result<usize> {
    let counts = grid.counts();
    let mut candidates: Vec<[i64; 3]> = vec![[0; 3]];
    for d in 0..3 {
        // counts() covers the periodic directions; trailing axes have one point
        let n = *counts.get(d).unwrap_or(&1) as i64;
        let r = q[d].rem_euclid(n);
        let mut next = Vec::new();
        for base in &candidates {
            for cand in [r, r - n] {
                let mut p = *base;
                p[d] = cand;
                next.push(p);
            }
        }
        candidates = next;
    }
    candidates
        .iter()
        .find_map(|p| grid.index_of_int(p))
        .ok_or_else(|| {
            invalid(format!(
                "q = {q:?} does not name a grid point of the {counts:?} grid"
            ))
        })
}

/// A 2π-period cosine chain: default lattice constant used in docs/tests.
pub fn unit_chain_vectors() -> Vec<[f64; 3]> {
    vec![[2.0 * PI, 0.0, 0.0]]
}
