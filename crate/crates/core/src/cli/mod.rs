//! Command-line front end: `jetflow verify|geodesic|harmonic|prolong`.
//!
//! Exit status is 0 when every check passes, 1 when a check fails or a
//! solver stops without converging, and 2 on any error.

pub mod commands;
pub mod scenario;
pub mod verify;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::maps::{Grid, SolverOptions};
use commands::Format;
use scenario::{Scenario, Setup};

pub const SEED_VAR: &str = "JETFLOW_SEED";

#[derive(Debug, Parser)]
#[command(name = "jetflow", version, about = "Jet-bundle geometry checks and solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run transformation-law suites and print a JSON report.
    Verify {
        scenario: PathBuf,
        #[arg(long, default_value = "all", value_parser = ["dtensors", "sprays", "connection", "adapted", "prolong", "all"])]
        suite: String,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the affine-map ODE of the canonical sprays (dim T = 1).
    Geodesic {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v0: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        t0: f64,
        #[arg(long)]
        tmax: f64,
        #[arg(long, default_value_t = 1e-2)]
        step: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the Dirichlet harmonic-map problem on [0,1]² (dim T = 2).
    Harmonic {
        scenario: PathBuf,
        #[arg(long, default_value_t = 33)]
        grid: usize,
        /// `linear`, `saddle`, or `;`-separated expressions over t1, t2.
        #[arg(long, default_value = "saddle")]
        boundary: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 50_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 0.8)]
        damping: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Convergence log (`iter,residual`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Prolongation, horizontal lift and vertical gap of a vector field at a jet.
    Prolong {
        scenario: PathBuf,
        /// `X^1;..;X^p;X^1;..;X^n` over t and x.
        #[arg(long, allow_hyphen_values = true)]
        field: String,
        /// Jet as JSON `{"t":[..],"x":[..],"v":[[..],..]}`, or `@file`.
        #[arg(long)]
        at: String,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Loads a scenario, applying the seed override from the environment.
pub fn load_setup(path: &Path) -> Result<Setup> {
    let setup = Setup::new(&Scenario::load(path)?)?;
    match std::env::var(SEED_VAR) {
        Ok(v) => {
            let seed = v.trim().parse().map_err(|_| Error::Scenario {
                pointer: SEED_VAR.into(),
                message: format!("`{v}` is not an unsigned integer"),
            })?;
            Ok(setup.with_seed(seed))
        }
        Err(_) => Ok(setup),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Runs a parsed command; returns the process exit status.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Verify { scenario, suite, out } => {
            let setup = load_setup(&scenario)?;
            let report = verify::verify(&setup, &suite)?;
            emit(out.as_deref(), &report.to_json())?;
            Ok(if report.pass() { 0 } else { 1 })
        }
        Command::Geodesic {
            scenario,
            x0,
            v0,
            t0,
            tmax,
            step,
            format,
            out,
        } => {
            let setup = load_setup(&scenario)?;
            let req = commands::GeodesicRequest { x0, v0, t0, tmax, step };
            let tr = commands::geodesic(&setup, &req)?;
            emit(out.as_deref(), &commands::render_trajectory(&setup, &tr, format)?)?;
            Ok(0)
        }
        Command::Harmonic {
            scenario,
            grid,
            boundary,
            tol,
            max_iters,
            damping,
            out,
            log,
        } => {
            let setup = load_setup(&scenario)?;
            let opts = SolverOptions { damping, max_iters, tol };
            let sol = commands::harmonic(&setup, &boundary, Grid::unit(grid), opts)?;
            emit(out.as_deref(), &commands::render_grid(&setup, &sol)?)?;
            if let Some(log) = log {
                std::fs::write(log, sol.log_csv())?;
            }
            eprintln!(
                "{} after {} iterations, max interior residual {:e}",
                if sol.converged { "converged" } else { "iteration cap reached" },
                sol.iterations,
                sol.residual
            );
            Ok(if sol.converged { 0 } else { 1 })
        }
        Command::Prolong {
            scenario,
            field,
            at,
            eps,
            out,
        } => {
            let setup = load_setup(&scenario)?;
            let (p, n) = setup.dims();
            let x = commands::parse_field(&field, p, n)?;
            let src = match at.strip_prefix('@') {
                Some(path) => std::fs::read_to_string(path)?,
                None => at,
            };
            let report = commands::prolong(&setup, &x, &commands::parse_jet(&src)?, eps)?;
            let value = serde_json::to_value(&report).expect("report is serialisable");
            emit(out.as_deref(), &(serde_json::to_string_pretty(&value).expect("serialisable") + "\n"))?;
            Ok(0)
        }
    }
}

/// Entry point used by the binary.
pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(2)
        }
    }
}
