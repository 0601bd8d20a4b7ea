//! Subcommand implementations behind the `quartz` binary.
//!
//! Each command loads a [`RunConfig`](crate::config::RunConfig), solves the
//! configured model, writes its tables through [`report`](crate::report),
//! and returns the written paths. The heavy kernels parallelize internally
//! over grid points; the binary caps the worker pool, so file writing stays
//! serialized here. `validate` runs a self-check table on the configured
//! model — geometry duality, Hermiticity, eigensolver exactness on the free
//! model, gap positivity, dense finite-difference and conservation oracles,
//! and the permittivity contract — and reports one pass/fail row each.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde_json::json;

use crate::bands::{free_bands, solve_bands, PeriodicPotential};
use crate::config::{Instance, LoadedConfig, PotentialModel, RunConfig};
use crate::dielectric::eps_m;
use crate::dynamics::{hartree_evolve, ExternalDrive, HartreeOptions, SupercellModel};
use crate::error::QuartzError;
use crate::oracle::{static_perturbation_oracle, MAX_DENSE_DIM};
use crate::report;
use crate::response::{polarization, static_density_response, ResponseQuery};
use crate::Result;

/// `bands`: band energies over the grid plus the Fermi summary.
pub fn cmd_bands(loaded: &LoadedConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let inst = loaded.run.solve()?;
    let bands_path = report::write_bands_csv(out_dir, &inst.bands)?;
    let fermi_path = report::write_fermi_json(out_dir, &inst.fermi)?;
    let sidecar = report::write_sidecar(
        out_dir,
        "bands.csv",
        &loaded.hash,
        "bands",
        json!({
            "gap": inst.fermi.gap,
            "n_bands": inst.bands.n_bands(),
            "n_q": inst.grid.len(),
            "e_cut": loaded.run.model.e_cut,
            "grid": loaded.run.model.grid,
            "n_electrons": loaded.run.model.n_electrons,
            "scf_iterations": inst.scf_iterations,
        }),
    )?;
    Ok(vec![bands_path, fermi_path, sidecar])
}

/// `response`: T^η and ℰ^η blocks over the configured frequency sweep.
pub fn cmd_response(loaded: &LoadedConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let inst = loaded.run.solve()?;
    let query = loaded.run.response_query(&inst)?;
    let blocks = polarization(&inst.bands, &inst.fermi, &query)?;
    let q = *inst.grid.cart(query.iq);
    let path = report::write_response_csv(out_dir, &q, &blocks)?;
    let kset_coords: Vec<[i64; 3]> = query.kset.iter().map(|&i| *inst.basis.coord(i)).collect();
    let resp = loaded.run.response.as_ref().expect("query built above");
    let sidecar = report::write_sidecar(
        out_dir,
        "response.csv",
        &loaded.hash,
        "response",
        json!({
            "eta": query.eta,
            "omegas": query.omegas,
            "q": resp.q,
            "kset": kset_coords,
            "gap": inst.fermi.gap,
        }),
    )?;
    Ok(vec![path, sidecar])
}

/// `epsm`: macroscopic permittivity tensor across the in-gap window.
pub fn cmd_epsm(loaded: &LoadedConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let inst = loaded.run.solve()?;
    let omegas = loaded.run.epsm_omegas(inst.fermi.gap)?;
    let mut samples = Vec::with_capacity(omegas.len());
    for &omega in &omegas {
        samples.push(eps_m(&inst.bands, &inst.fermi, omega)?);
    }
    let path = report::write_epsm_csv(out_dir, &samples)?;
    let epsm = loaded.run.epsm.as_ref().expect("omegas built above");
    let sidecar = report::write_sidecar(
        out_dir,
        "epsm.csv",
        &loaded.hash,
        "epsm",
        json!({
            "gap": inst.fermi.gap,
            "window": epsm.window,
            "omega_count": epsm.omega_count,
        }),
    )?;
    Ok(vec![path, sidecar])
}

/// `dynamics`: Hartree propagation under the configured charge drive.
pub fn cmd_dynamics(loaded: &LoadedConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let inst = loaded.run.solve()?;
    let setup = loaded.run.build_dynamics(&inst)?;
    let m = setup.model.dim();
    let q0: Array2<C64> = Array2::zeros((m, m));
    let (_samples, energy) =
        hartree_evolve(&setup.model, &setup.drive, &q0, &setup.t_grid, &setup.opts)?;
    let path = report::write_dynamics_csv(out_dir, &energy)?;
    let dyn_ = loaded.run.dynamics.as_ref().expect("setup built above");
    let sidecar = report::write_sidecar(
        out_dir,
        "dynamics.csv",
        &loaded.hash,
        "dynamics",
        json!({
            "dt": dyn_.dt,
            "t_final": dyn_.t_final,
            "n_steps": setup.t_grid.len() - 1,
            "n_cells": dyn_.n_cells,
            "n_drive_terms": dyn_.drive.len(),
            "linearized": dyn_.linearized,
            "picard_tol": dyn_.picard_tol,
            "supercell_modes": m,
        }),
    )?;
    Ok(vec![path, sidecar])
}

/// One row of the `validate` table.
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn row(name: &'static str, outcome: std::result::Result<String, String>) -> CheckRow {
    match outcome {
        Ok(detail) => CheckRow {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckRow {
            name,
            passed: false,
            detail,
        },
    }
}

fn err_str(e: QuartzError) -> String {
    format!("{e}")
}

/// `validate`: run the self-check table against the configured model.
///
/// Every row exercises an independent contract; rows after a failed
/// prerequisite report the failure they inherited rather than being
/// skipped silently.
pub fn cmd_validate(loaded: &LoadedConfig) -> Vec<CheckRow> {
    let run = &loaded.run;
    let mut rows = Vec::new();

    rows.push(row(
        "config-schema",
        Ok("strict schema and cross-field checks passed".into()),
    ));

    // Geometry: primitive vectors independent, dual pairing aᵢ·bⱼ = 2πδᵢⱼ
    // verified by the reciprocal constructor.
    let geometry = run
        .build_lattice()
        .and_then(|lat| crate::lattice::build_reciprocal(&lat).map(|rl| (lat, rl)));
    rows.push(row(
        "lattice-geometry",
        geometry
            .as_ref()
            .map(|(lat, _)| format!("{}-dimensional cell, dual pairing verified", lat.dim()))
            .map_err(|e| format!("{e}")),
    ));
    let Ok((_lat, rl)) = geometry else {
        return rows;
    };

    let basis = match crate::lattice::plane_wave_basis(&rl, run.model.e_cut) {
        Ok(b) => std::sync::Arc::new(b),
        Err(e) => {
            rows.push(row("plane-wave-ball", Err(err_str(e))));
            return rows;
        }
    };
    rows.push(row(
        "plane-wave-ball",
        Ok(format!("{} modes at e_cut = {}", basis.len(), run.model.e_cut)),
    ));

    let grid = match crate::lattice::bz_grid(&rl, &run.model.grid) {
        Ok(g) => std::sync::Arc::new(g),
        Err(e) => {
            rows.push(row("potential-hermiticity", Err(err_str(e))));
            return rows;
        }
    };

    // The external field must be real: V̂(−K) = conj V̂(K) for every listed
    // coefficient (or nuclear structure factor). A single corrupted sign
    // trips this row.
    let potential = run.build_potential(&basis);
    rows.push(row(
        "potential-hermiticity",
        potential
            .as_ref()
            .map(|p| match p {
                PotentialModel::Explicit(_) => "explicit coefficient list is real-valued".into(),
                PotentialModel::Scf { .. } => "nuclear structure factors are real-valued".into(),
            })
            .map_err(|e| format!("{e}")),
    ));

    // Eigensolver exactness: with V = 0 every fiber is already diagonal, so
    // the solved bands must reproduce ½|q+K|² to machine precision.
    rows.push(row("free-band-exactness", {
        match solve_bands(&basis, &grid, &PeriodicPotential::from_pairs(&[]).expect("empty list")) {
            Ok(solved) => {
                let reference = free_bands(&basis, &grid);
                let mut worst = 0.0_f64;
                for iq in 0..grid.len() {
                    let a = solved.energies(iq);
                    let b = reference.energies(iq);
                    for n in 0..solved.n_bands() {
                        worst = worst.max((a[n] - b[n]).abs());
                    }
                }
                if worst <= 1e-12 {
                    Ok(format!("max deviation {worst:.2e} from exact kinetic bands"))
                } else {
                    Err(format!("free bands deviate by {worst:.2e} (tol 1e-12)"))
                }
            }
            Err(e) => Err(err_str(e)),
        }
    }));

    // Solve the configured model once; gap positivity is its own row.
    let inst = run.solve();
    rows.push(row(
        "insulating-gap",
        inst.as_ref()
            .map(|inst| {
                format!(
                    "gap {:.6} with {} occupied band(s)",
                    inst.fermi.gap, inst.fermi.n_occupied
                )
            })
            .map_err(|e| format!("{e}")),
    ));
    let Ok(inst) = inst else {
        return rows;
    };

    // Dense cross-checks run on a two-cell companion model small enough for
    // the brute-force references; the cutoff shrinks until the supercell
    // ball fits the dense cap.
    rows.push(row(
        "static-response-oracle",
        static_response_check(&inst, run),
    ));
    rows.push(row("propagation-conservation", conservation_check(&inst, run)));

    // Permittivity contract at ω = 0: symmetric tensor, eigenvalues ≥ 1.
    rows.push(row("permittivity-contract", {
        match eps_m(&inst.bands, &inst.fermi, 0.0) {
            Ok(p) => {
                let mut asym = 0.0_f64;
                for a in 0..3 {
                    for b in 0..3 {
                        asym = asym.max((p.eps[[a, b]] - p.eps[[b, a]]).abs());
                    }
                }
                if asym > 1e-10 {
                    Err(format!("tensor asymmetry {asym:.2e} (tol 1e-10)"))
                } else if p.min_eig < 1.0 - 1e-8 {
                    Err(format!("smallest eigenvalue {} below 1", p.min_eig))
                } else {
                    Ok(format!(
                        "symmetric to {asym:.1e}, eigenvalues ≥ {:.12}",
                        p.min_eig
                    ))
                }
            }
            Err(e) => Err(err_str(e)),
        }
    }));

    // Neutrality of the polarization: at q = 0 the K = 0 row and column of
    // T^η vanish identically.
    rows.push(row("zero-mode-neutrality", {
        let kset: Vec<usize> = (0..inst.basis.len()).collect();
        let query = ResponseQuery {
            omegas: vec![0.0],
            eta: 0.05,
            iq: inst.grid.zero_index(),
            kset,
        };
        match crate::response::t_eta(&inst.bands, &inst.fermi, &query) {
            Ok(blocks) => {
                let t = &blocks[0];
                let zi = inst.basis.zero_index();
                let mut worst = 0.0_f64;
                for a in 0..t.nrows() {
                    worst = worst.max(t[[zi, a]].norm()).max(t[[a, zi]].norm());
                }
                if worst <= 1e-13 {
                    Ok(format!("K = 0 row and column bounded by {worst:.2e}"))
                } else {
                    Err(format!("K = 0 row leaks {worst:.2e} (tol 1e-13)"))
                }
            }
            Err(e) => Err(err_str(e)),
        }
    }));

    rows
}

/// Companion supercell for the dense oracles: three cells along the first
/// direction (odd, so the sampled momenta dodge the zone edge where weakly
/// coupled bands touch), cutoff shrunk until the mode count fits the dense
/// cap.
fn companion_supercell(inst: &Instance, run: &RunConfig) -> Result<SupercellModel> {
    let mut counts = vec![1usize; inst.lattice.dim()];
    counts[0] = 3;
    let mut e_cut = run.model.e_cut;
    for _ in 0..24 {
        match SupercellModel::build(
            &inst.lattice,
            &inst.potential,
            &counts,
            e_cut,
            run.model.n_electrons,
        ) {
            Ok(model) if model.dim() <= MAX_DENSE_DIM => return Ok(model),
            Ok(_) => e_cut *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(QuartzError::InvalidArgument(
        "could not shrink the companion supercell under the dense cap".into(),
    ))
}

fn static_response_check(inst: &Instance, run: &RunConfig) -> std::result::Result<String, String> {
    let model = companion_supercell(inst, run).map_err(err_str)?;
    // probe along the first reciprocal direction, the ± pair making it real
    let profile = model
        .lift_primitive_profile(&[
            ([1, 0, 0], C64::new(0.2, 0.07)),
            ([-1, 0, 0], C64::new(0.2, -0.07)),
        ])
        .map_err(err_str)?;
    let rho = static_density_response(&model, &profile).map_err(err_str)?;
    let h_eig = Array2::from_diag(&model.energies().mapv(|e| C64::new(e, 0.0)));
    let v_eig = model.operator_from_fourier(&profile);
    let dg = static_perturbation_oracle(&h_eig, &v_eig, model.n_occ(), 1e-4).map_err(err_str)?;
    let rho_fd = model.density_of(&dg);
    let scale = rho
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let worst = rho
        .iter()
        .zip(rho_fd.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0_f64, f64::max);
    if worst <= 1e-7 * scale {
        Ok(format!(
            "linear response matches the finite-difference projector to {:.2e} (relative)",
            worst / scale
        ))
    } else {
        Err(format!(
            "finite-difference mismatch {:.2e} relative (tol 1e-7)",
            worst / scale
        ))
    }
}

fn conservation_check(inst: &Instance, run: &RunConfig) -> std::result::Result<String, String> {
    let model = companion_supercell(inst, run).map_err(err_str)?;
    let drive = ExternalDrive::charge(&model, Vec::new()).map_err(err_str)?;
    let m = model.dim();
    let q0: Array2<C64> = Array2::zeros((m, m));
    let t_grid: Vec<f64> = (0..=8).map(|i| 0.05 * i as f64).collect();
    let (_samples, energy) =
        hartree_evolve(&model, &drive, &q0, &t_grid, &HartreeOptions::default())
            .map_err(err_str)?;
    let worst_trace = energy.trace.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let worst_k = energy.k_violation.iter().fold(0.0_f64, |a, &b| a.max(b));
    let worst_energy = energy
        .energy
        .iter()
        .map(|&e| (e - energy.energy[0]).abs())
        .fold(0.0_f64, f64::max);
    if worst_trace > 1e-10 {
        Err(format!("trace drifts by {worst_trace:.2e} (tol 1e-10)"))
    } else if worst_k > 1e-8 {
        Err(format!("spectral excursion {worst_k:.2e} (tol 1e-8)"))
    } else if worst_energy > 1e-10 {
        Err(format!(
            "undriven energy drifts by {worst_energy:.2e} (tol 1e-10)"
        ))
    } else {
        Ok(format!(
            "undriven ground state conserved: trace ≤ {worst_trace:.1e}, energy ≤ {worst_energy:.1e}"
        ))
    }
}

/// True when every row of the validate table passed.
pub fn table_passed(rows: &[CheckRow]) -> bool {
    rows.iter().all(|r| r.passed)
}
