//! `qtm`: thermodynamics, correlation-function building blocks and
//! identity checks for the XXZ chain via the quantum transfer matrix.

mod commands;
mod config;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde_json::json;

use config::{parse_complex, Format, RunConfig};
use output::{Provenance, Table, SCHEMA};

#[derive(Parser, Debug)]
#[command(name = "qtm", version, about = "XXZ quantum transfer matrix solvers")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parameter sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output format; overrides `output.format`.
    #[arg(long, global = true)]
    format: Option<Format>,
    /// Output file; overrides `output.path`. Standard output if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-parameter override `key=value`, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Free energy and magnetization over the configured sweep.
    Thermo,
    /// Run the identity checks; exit status 1 if any fails.
    Verify {
        /// Move one Bethe root by this amount after solving (negative control).
        #[arg(long, allow_hyphen_values = true)]
        perturb_root: Option<f64>,
    },
    /// Evaluate Psi(nu1, nu2) at the largest configured Trotter number.
    Psi {
        #[arg(allow_hyphen_values = true, value_parser = parse_complex_arg)]
        nu1: Complex64,
        #[arg(allow_hyphen_values = true, value_parser = parse_complex_arg)]
        nu2: Complex64,
    },
    /// Bethe roots, eigenvalues and finite-N free energies.
    Bethe,
    /// Raw ln a on the NLIE grid.
    NlieDump {
        /// Finite Trotter number; the Trotter limit if absent.
        #[arg(long)]
        n: Option<usize>,
    },
}

fn parse_complex_arg(s: &str) -> std::result::Result<Complex64, String> {
    parse_complex(s).map_err(|e| e.to_string())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Thermo => "thermo",
        Command::Verify { .. } => "verify",
        Command::Psi { .. } => "psi",
        Command::Bethe => "bethe",
        Command::NlieDump { .. } => "nlie-dump",
    }
}

/// Runs the command; `Ok(false)` means a verification failure.
fn execute(cli: &Cli, cfg: &RunConfig) -> Result<(Table, bool)> {
    match &cli.command {
        Command::Thermo => commands::thermo(cfg).map(|t| (t, true)),
        Command::Verify { perturb_root } => commands::verify(cfg, *perturb_root),
        Command::Psi { nu1, nu2 } => commands::psi(cfg, *nu1, *nu2).map(|t| (t, true)),
        Command::Bethe => commands::bethe(cfg).map(|t| (t, true)),
        Command::NlieDump { n } => commands::nlie_dump(cfg, *n).map(|t| (t, true)),
    }
}

fn emit(text: &str, path: Option<&PathBuf>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                other => Ok(other?),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    if let Some(p) = &cli.out {
        cfg.path = Some(p.clone());
    }
    let (table, ok) = match cli.jobs {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build().context("building the worker pool")?;
            pool.install(|| execute(cli, &cfg))?
        }
        None => execute(cli, &cfg)?,
    };
    let prov = Provenance { config_hash: cfg.hash(), grid: cfg.grid };
    let text = match cfg.format {
        Format::Json => output::to_json(&table, &prov),
        Format::Csv => output::to_csv(&table, &prov),
    };
    emit(&text, cfg.path.as_ref())?;
    if !ok {
        for row in &table.rows {
            if let (Some(output::Value::Text(name)), Some(output::Value::Bool(false))) = (row.first(), row.get(5)) {
                eprintln!("verification failed: {name}");
            }
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let record = json!({ "schema": SCHEMA, "command": command_name(&cli.command), "error": format!("{e:#}") });
            eprintln!("{record}");
            ExitCode::from(2)
        }
    }
}
