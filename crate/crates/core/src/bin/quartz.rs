//! Configuration-driven front end: band structures, polarization sweeps,
//! macroscopic permittivity curves, Hartree dynamics, and a self-check
//! table, all driven by one strict TOML file.
//!
//! Exit codes: 0 success, 1 configuration error, 2 physics precondition
//! violated (metallic filling, frequency outside the gap), 3 numerical
//! failure (non-contracting iteration, singular solve, failed check row).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use quartz::cli::{cmd_bands, cmd_dynamics, cmd_epsm, cmd_response, cmd_validate, table_passed};
use quartz::config::RunConfig;
use quartz::error::QuartzError;
use quartz::Result;

#[derive(Parser)]
#[command(
    name = "quartz",
    version,
    about = "Plane-wave band structure, dielectric response, and Hartree dynamics \
             of periodic crystals"
)]
struct Cli {
    /// Run configuration (strict TOML; see configs/ for samples)
    #[arg(long, value_name = "PATH", global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides [output].directory)
    #[arg(long, value_name = "DIR", global = true)]
    output: Option<PathBuf>,

    /// Worker-thread cap (overrides [output].threads)
    #[arg(long, value_name = "N", global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band energies over the Brillouin grid plus the Fermi summary
    Bands,
    /// Polarization blocks T^eta and E^eta over the configured sweep
    Response,
    /// Macroscopic permittivity tensor across the in-gap window
    Epsm,
    /// Self-consistent Hartree propagation under the configured drive
    Dynamics,
    /// Run the self-check table against the configured model
    Validate,
}

fn main() -> ExitCode {
    // The worker pool owns all parallelism; keep the BLAS kernels serial so
    // --threads genuinely caps the core count.
    std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    std::env::set_var("OMP_NUM_THREADS", "1");

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors are configuration errors; --help/--version exit 0
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let path = cli.config.as_ref().ok_or_else(|| {
        QuartzError::InvalidConfig("--config PATH is required".into())
    })?;
    let loaded = RunConfig::load(path)?;

    if let Some(n) = cli.threads.or(loaded.run.output.threads) {
        if n == 0 {
            return Err(QuartzError::InvalidConfig(
                "thread count must be at least 1".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| QuartzError::InvalidConfig(format!("thread pool: {e}")))?;
    }

    let out_dir = cli
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(&loaded.run.output.directory));

    let files = match cli.command {
        Command::Bands => cmd_bands(&loaded, &out_dir)?,
        Command::Response => cmd_response(&loaded, &out_dir)?,
        Command::Epsm => cmd_epsm(&loaded, &out_dir)?,
        Command::Dynamics => cmd_dynamics(&loaded, &out_dir)?,
        Command::Validate => {
            let rows = cmd_validate(&loaded);
            let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
            for r in &rows {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("{status}  {:width$}  {}", r.name, r.detail);
            }
            let ok = rows.iter().filter(|r| r.passed).count();
            println!("{ok}/{} checks passed", rows.len());
            return Ok(if table_passed(&rows) { 0 } else { 3 });
        }
    };

    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(0)
}
