//! `stefan`: simulations, convergence studies, particle-scaling studies, rate
//! bounds and jump sizes for the supercooled Stefan problem. All output is
//! plot data (CSV and JSON).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const SCHEMA: &str = "stefan-euler/1";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input files. Exit code 2.
    Validation(String),
    /// The computation itself failed. Exit code 3.
    Engine(String),
}

impl From<stefan_core::Error> for CliError {
    fn from(e: stefan_core::Error) -> Self {
        use stefan_core::Error as E;
        match e {
            E::DomainError(_) | E::OutOfRange(_) | E::BoundVacuous(_) | E::InvalidGrid(_) | E::Io(_) => {
                CliError::Engine(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Engine(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "stefan", version, about = "Euler time stepping for the supercooled Stefan problem")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme and write the loss curve.
    #[command(after_help = "Writes PREFIX.csv with columns t, lambda, loss_fraction (one row per grid time) \
and PREFIX.json with the resolved config and the curve.\n\
Law specs: gamma:SHAPE:RATE, gamma-scale:SHAPE:SCALE, monomial:ALPHA:A[:C], uniform:LO:HI, csv:PATH.")]
    Simulate(SimulateArgs),
    /// Sup-norm errors against a reference mesh and the fitted rate.
    #[command(after_help = "Writes PREFIX.csv with columns n, error, raw_error, normalized_error and PREFIX.json \
with the full report. With --sweep-a/--sweep-alpha one pair of files per run is written with the suffix \
-a<A>-alpha<ALPHA>; --table adds PREFIX.md with the rate table.")]
    Convergence(ConvergenceArgs),
    /// Particle error against a fine grid solution as N grows.
    #[command(after_help = "Writes PREFIX.csv with columns n_particles, mean_error and PREFIX.json with the \
per-seed errors and the fitted log-log slope (omitted for a single N).")]
    Particles(ParticlesArgs),
    /// Evaluate the explicit rate bound on a list of step sizes.
    #[command(after_help = "Writes PREFIX.csv with columns dt, status, log_term, psi_inv_term, g, \
psi_tilde_inv_term, scaled_g, total, simplified and PREFIX.json with the bound constants. \
Rows where the bound does not apply have status vacuous and empty values.\n\
Profile specs: constant:PSI0:DELTA, monomial:C:A:DELTA, csv:PATH (columns x, psi).")]
    Bound(BoundArgs),
    /// Physical jump size of a tabulated sub-density.
    #[command(after_help = "Prints JSON with jump_size and witness, the point just past the jump where \
M(x) < x/alpha. The density file has two columns x, density; repeated x values encode jumps.")]
    Jump(JumpArgs),
}

#[derive(Args)]
struct IoArgs {
    /// TOML file of settings, or a JSON file written by an earlier run.
    /// Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path prefix; defaults to the command name.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct LawArgs {
    /// Initial law spec.
    #[arg(long)]
    law: Option<String>,
    /// Latent-heat parameter α.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, value_parser = ["particle", "grid"])]
    engine: Option<String>,
    /// Number of particles (particle engine, default 100000).
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (particle engine, default 1). Output does not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Grid cell width (grid engine, default √Δ/20).
    #[arg(long)]
    h: Option<f64>,
    /// Right end of the grid (grid engine).
    #[arg(long)]
    x_max: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    law: LawArgs,
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of steps.
    #[arg(long)]
    n: Option<usize>,
    /// Step size; must divide the horizon.
    #[arg(long)]
    dt: Option<f64>,
    #[command(flatten)]
    engine: EngineArgs,
    /// Grid engine only: write survivor-density snapshots (t, x, p) here.
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    law: LawArgs,
    #[arg(long)]
    horizon: Option<f64>,
    /// Step counts, e.g. 25,50,100.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    /// Reference step count; defaults to the smallest common multiple of
    /// the list that is at least 8 times its largest entry.
    #[arg(long)]
    n_reference: Option<usize>,
    #[command(flatten)]
    engine: EngineArgs,
    /// Regress errors of Λ/α (default true) or of Λ.
    #[arg(long)]
    normalized: Option<bool>,
    /// Monomial exponents to sweep over.
    #[arg(long, value_delimiter = ',')]
    sweep_a: Option<Vec<f64>>,
    /// α values to sweep over.
    #[arg(long, value_delimiter = ',')]
    sweep_alpha: Option<Vec<f64>>,
    /// Also write the Markdown rate table.
    #[arg(long)]
    table: bool,
    /// Probe times for the pointwise M1 check.
    #[arg(long, value_delimiter = ',')]
    probes: Option<Vec<f64>>,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct ParticlesArgs {
    #[command(flatten)]
    law: LawArgs,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Particle counts, e.g. 1000,10000,100000.
    #[arg(long, value_delimiter = ',')]
    particles_list: Option<Vec<usize>>,
    /// Seeds per particle count (default 20), starting at --seed.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Cell width of the reference grid run (default √Δ/80).
    #[arg(long)]
    reference_h: Option<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    alpha: Option<f64>,
    /// Sup norm of the initial density.
    #[arg(long)]
    f_sup: Option<f64>,
    /// Deficit profile spec.
    #[arg(long)]
    profile: Option<String>,
    /// Take the profile and sup norm from a law instead.
    #[arg(long)]
    law: Option<String>,
    /// Horizon ε; defaults to 0.99 times the admissible window.
    #[arg(long)]
    eps: Option<f64>,
    /// Step sizes; defaults to ε/4, ε/16, …, ε/4^12.
    #[arg(long, value_delimiter = ',')]
    dt_list: Option<Vec<f64>>,
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct JumpArgs {
    /// Two-column CSV of the sub-density.
    #[arg(long)]
    density: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    io: IoArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Convergence(a) => commands::convergence(a),
        Command::Particles(a) => commands::particles(a),
        Command::Bound(a) => commands::bound(a),
        Command::Jump(a) => commands::jump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, reason, code) = match e {
                CliError::Validation(r) => ("validation", r, 2),
                CliError::Engine(r) => ("engine", r, 3),
            };
            eprintln!("{}", serde_json::json!({ "error": kind, "reason": reason }));
            ExitCode::from(code)
        }
    }
}
