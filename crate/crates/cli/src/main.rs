use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::{Overrides, Run};

#[derive(Parser, Debug)]
#[command(name = "adicflow", version, about = "Experiments on Markov compacta and vertical flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for i.i.d. extensions.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Top level of the working window.
    #[arg(long, global = true, value_name = "N")]
    levels: Option<usize>,
    /// Largest flow time on the T-grid.
    #[arg(long, global = true, value_name = "FLOAT")]
    tmax: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Lyapunov spectrum of the renormalization cocycle.
    Lyapunov,
    /// Oseledets splitting at `split_level`.
    Split,
    /// Perron-Frobenius families Φ_1^± and their decay rates.
    Measures,
    /// Obstructions to the cohomological equation for the configured function.
    Obstructions,
    /// Birkhoff integrals along the flow and their growth exponent.
    Birkhoff,
    /// Transfer function u(h_t x_0) on the T-grid.
    Transfer,
    /// Check the config, the diagram spec and the function spec.
    Validate,
}

/// How a run failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl From<adicflow::Error> for Failure {
    fn from(e: adicflow::Error) -> Self {
        use adicflow::Error::*;
        match e {
            GapUnresolved(_)
            | NotInUnstable(_)
            | DecayViolated { .. }
            | DegenerateDuals(_)
            | Singular(_)
            | NoPositivityWindow
            | WindowExhausted { .. } => Failure::Numerical(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn threads() -> Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("ADICFLOW_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Config(format!("ADICFLOW_THREADS: expected a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Failure::Config(format!("ADICFLOW_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let path = cli
        .config
        .ok_or_else(|| Failure::Config("--config: a config file is required".into()))?;
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        levels: cli.levels,
        t_max: cli.tmax,
    };
    let run = Run::load(&path, &overrides)?;
    let pool = threads()?;
    pool.install(|| match cli.command {
        Command::Lyapunov => commands::lyapunov(&run),
        Command::Split => commands::split(&run),
        Command::Measures => commands::measures(&run),
        Command::Obstructions => commands::obstructions(&run),
        Command::Birkhoff => commands::birkhoff(&run),
        Command::Transfer => commands::transfer(&run),
        Command::Validate => commands::validate(&run),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
