//! Deterministic table and sidecar emission.
//!
//! Each subcommand writes CSV tables plus a JSON sidecar named
//! `<table>.meta.json` carrying the configuration hash, the code version,
//! and a few command-specific scalars, so every result file is traceable to
//! the exact configuration text that produced it. Floats are rendered with
//! Rust's shortest round-trip formatting: re-parsing reproduces the exact
//! binary value, and identical runs produce byte-identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::bands::{BandStructure, FermiData};
use crate::dielectric::MacroPermittivity;
use crate::dynamics::EnergyReport;
use crate::error::QuartzError;
use crate::response::PolarizationBlock;
use crate::Result;

/// Create `dir` (and parents) if needed and open `name` inside it.
fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

fn finish(mut w: BufWriter<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

/// Band energies over the Brillouin grid: one row per (grid point, band).
///
/// Columns: Cartesian `q1,q2,q3`, band index `n` (0-based, energy-sorted),
/// and the band energy `epsilon`.
pub fn write_bands_csv(dir: &Path, bands: &BandStructure) -> Result<PathBuf> {
    let (path, mut w) = create(dir, "bands.csv")?;
    writeln!(w, "q1,q2,q3,n,epsilon")?;
    let grid = bands.grid();
    for iq in 0..grid.len() {
        let q = grid.cart(iq);
        let e = bands.energies(iq);
        for n in 0..bands.n_bands() {
            writeln!(w, "{},{},{},{},{}", q[0], q[1], q[2], n, e[n])?;
        }
    }
    finish(w)?;
    Ok(path)
}

/// Band-edge summary of the occupied/unoccupied split.
pub fn write_fermi_json(dir: &Path, fermi: &FermiData) -> Result<PathBuf> {
    let (path, mut w) = create(dir, "fermi.json")?;
    let doc = json!({
        "n_occupied": fermi.n_occupied,
        "sigma_plus": fermi.sigma_plus,
        "sigma_minus": fermi.sigma_minus,
        "fermi": fermi.fermi,
        "gap": fermi.gap,
    });
    writeln!(w, "{}", serde_json::to_string_pretty(&doc)?)?;
    finish(w)?;
    Ok(path)
}

/// Polarization blocks T^η and ℰ^η at one transferred momentum.
///
/// Columns: `omega`, Cartesian `q1,q2,q3`, row/column positions `k,kp`
/// within the reported mode set (the sidecar lists the modes), and the four
/// real components of the two matrices.
pub fn write_response_csv(
    dir: &Path,
    q: &[f64; 3],
    blocks: &[PolarizationBlock],
) -> Result<PathBuf> {
    let (path, mut w) = create(dir, "response.csv")?;
    writeln!(w, "omega,q1,q2,q3,k,kp,re_t,im_t,re_e,im_e")?;
    for block in blocks {
        let (mk, _) = block.t.dim();
        for a in 0..mk {
            for b in 0..mk {
                let t = block.t[[a, b]];
                let e = block.e[[a, b]];
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{}",
                    block.omega, q[0], q[1], q[2], a, b, t.re, t.im, e.re, e.im
                )?;
            }
        }
    }
    finish(w)?;
    Ok(path)
}

/// Macroscopic permittivity tensor per frequency sample.
///
/// Columns: `omega`, the nine tensor entries in row-major order, and the
/// smallest eigenvalue.
pub fn write_epsm_csv(dir: &Path, samples: &[MacroPermittivity]) -> Result<PathBuf> {
    let (path, mut w) = create(dir, "epsm.csv")?;
    writeln!(
        w,
        "omega,eps_11,eps_12,eps_13,eps_21,eps_22,eps_23,eps_31,eps_32,eps_33,min_eig"
    )?;
    for s in samples {
        write!(w, "{}", s.omega)?;
        for a in 0..3 {
            for b in 0..3 {
                write!(w, ",{}", s.eps[[a, b]])?;
            }
        }
        writeln!(w, ",{}", s.min_eig)?;
    }
    finish(w)?;
    Ok(path)
}

/// Conservation and energy-budget traces of a propagation run, one row per
/// time sample.
pub fn write_dynamics_csv(dir: &Path, report: &EnergyReport) -> Result<PathBuf> {
    let (path, mut w) = create(dir, "dynamics.csv")?;
    writeln!(
        w,
        "t,trace,energy,work_integral,budget_residual,k_violation,projector_residual"
    )?;
    for i in 0..report.t.len() {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            report.t[i],
            report.trace[i],
            report.energy[i],
            report.work_integral[i],
            report.budget_residual[i],
            report.k_violation[i],
            report.projector_residual[i]
        )?;
    }
    finish(w)?;
    Ok(path)
}

/// Sidecar for `<table>`: `<table>.meta.json` with the config hash, code
/// version, the subcommand name, and any extra scalars.
pub fn write_sidecar(
    dir: &Path,
    table: &str,
    config_hash: &str,
    command: &str,
    extra: Value,
) -> Result<PathBuf> {
    let name = match table.rsplit_once('.') {
        Some((stem, _ext)) => format!("{stem}.meta.json"),
        None => format!("{table}.meta.json"),
    };
    let (path, mut w) = create(dir, &name)?;
    let mut doc = Map::new();
    doc.insert("config_hash".into(), json!(config_hash));
    doc.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    doc.insert("command".into(), json!(command));
    if let Value::Object(map) = extra {
        for (k, v) in map {
            doc.insert(k, v);
        }
    }
    writeln!(w, "{}", serde_json::to_string_pretty(&Value::Object(doc))?)?;
    finish(w)?;
    Ok(path)
}

impl From<serde_json::Error> for QuartzError {
    fn from(e: serde_json::Error) -> Self {
        QuartzError::Io(std::io::Error::other(e))
    }
}
