//! `eigenbound` command-line interface.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eigenbound_core::io::read_mesh;
use eigenbound_core::mesh::check_conformity;

use crate::run::CliError;

#[derive(Parser)]
#[command(name = "eigenbound", version, about = "Guaranteed brackets for Friedrichs, Poincare and trace constants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive solver for every a_tilde in a configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Write VTK meshes for every iteration.
        #[arg(long)]
        emit_vtk: bool,
        /// Output directory (overrides `out` in the configuration).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a plain-text mesh file for conformity.
    CheckMesh { path: PathBuf },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("EIGENBOUND_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("EIGENBOUND_THREADS = {v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Run(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run { config, emit_vtk, out } => {
            init_threads()?;
            let text =
                std::fs::read_to_string(&config).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
            let mut cfg = config::parse_config(&text).map_err(CliError::Config)?;
            cfg.emit_vtk |= emit_vtk;
            if let Some(out) = out {
                cfg.out = out;
            }
            let summary = run::run(&cfg)?;
            Ok(if summary.runs.iter().all(|r| r.ok()) { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::CheckMesh { path } => {
            let mesh = read_mesh(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let report = check_conformity(&mesh);
            println!(
                "{}: {} vertices, {} triangles, {} boundary edges",
                path.display(),
                mesh.num_vertices(),
                mesh.num_triangles(),
                mesh.boundary_edges.len()
            );
            println!("{report}");
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("eigenbound: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Run(_) => ExitCode::from(1),
            }
        }
    }
}
