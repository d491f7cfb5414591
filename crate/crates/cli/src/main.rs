use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sllg_cli::{run, verify, CliError, SimConfig};

#[derive(Parser)]
#[command(name = "sllg", version, about = "Stochastic harmonic map flow on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// TOML file of dotted keys; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set noise.sigma=0.1`. Repeatable; wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed, overriding `ensemble.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensembles and coupled runs. Does not affect results.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory with diagnostics and the bubbling monitor.
    Simulate(Common),
    /// Coupled pairs and the fitted Grönwall bound.
    Couple(Common),
    /// An ensemble with every statistical verdict table.
    Ensemble(Common),
    /// Interpolation constants and the default stopping threshold.
    EstimateConstants(Common),
    /// Random Wente problems on each configured grid.
    WenteSweep(Common),
    /// The acceptance suite, one PASS/FAIL line per criterion.
    Verify(VerifyArgs),
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Run only these criteria, e.g. `--only 1,7,12`.
    #[arg(long, value_delimiter = ',')]
    only: Vec<u8>,
}

type Handler = fn(SimConfig, usize) -> Result<String, CliError>;

fn dispatch(cmd: Command) -> Result<String, CliError> {
    let (c, f): (Common, Handler) = match cmd {
        Command::Simulate(c) => (c, |cfg, _| run::simulate(cfg)),
        Command::Couple(c) => (c, run::couple),
        Command::Ensemble(c) => (c, run::ensemble),
        Command::EstimateConstants(c) => (c, |cfg, _| run::estimate_constants(cfg)),
        Command::WenteSweep(c) => (c, |cfg, _| run::wente(cfg)),
        Command::Verify(v) => {
            let cfg = SimConfig::load(v.common.config.as_deref(), &v.common.set, v.common.seed)?;
            return verify::verify(cfg, v.common.threads, &v.only);
        }
    };
    let cfg = SimConfig::load(c.config.as_deref(), &c.set, c.seed)?;
    f(cfg, c.threads)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sllg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
