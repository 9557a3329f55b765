use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slq_cli::{cmd_compare_ortho, cmd_probe, cmd_slq, CliError, Overrides, RunConfig};
use slq_core::Precision;

#[derive(Parser)]
#[command(name = "slq", version, about = "Spectral densities of large symmetric operators via stochastic Lanczos quadrature")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Lanczos per seed and write spectra, density and diagnostics.
    Slq(Common),
    /// Histogram and threshold fractions of single operator columns.
    Probe(Common),
    /// Run with and without reorthogonalization and compare the Ritz values.
    CompareOrtho(Common),
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<Precision>,
    /// Lanczos steps.
    #[arg(long)]
    k: Option<usize>,
    /// Probe seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let overrides = Overrides {
            workers: self.workers,
            precision: self.precision,
            k: self.k,
            seeds: self.seed.clone(),
            out: self.out.clone(),
        };
        Ok(RunConfig::load(self.config.as_deref(), &overrides)?)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Slq(c) => {
            let cfg = c.load()?;
            let out = cmd_slq(&cfg)?;
            for (run, g) in out.runs.iter().zip(&out.ghosts) {
                println!("seed {}: k = {}, likely ghosts = {}", run.seed, run.tridiagonal.k(), g.ghost_count());
            }
            report_files(&out.files);
        }
        Command::Probe(c) => {
            let cfg = c.load()?;
            let out = cmd_probe(&cfg)?;
            for r in &out.reports {
                println!("column {} ({} entries)", r.column_index, r.total_elements);
            }
            report_files(&out.files);
        }
        Command::CompareOrtho(c) => {
            let cfg = c.load()?;
            let out = cmd_compare_ortho(&cfg)?;
            println!(
                "likely ghosts: full = {}, none = {}",
                out.full.2.ghost_count(),
                out.none.2.ghost_count()
            );
            report_files(&out.files);
        }
    }
    Ok(())
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Breakdown { artifact: Some(p), .. } = &e {
                eprintln!("partial results in {}", p.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
