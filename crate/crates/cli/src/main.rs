mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Exposure-fairness simulator for repeated recommendation rounds.
#[derive(Debug, Parser)]
#[command(name = "exposim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// TOML config file; unset keys keep their defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set T=50 --set pipeline=mf`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation (or a sweep of them) into a run directory.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overwrite an existing run directory.
        #[arg(long)]
        force: bool,
        /// Continue the run in this directory from its last checkpoint.
        #[arg(long, value_name = "RUN_DIR", conflicts_with_all = ["force", "sweep"])]
        resume: Option<PathBuf>,
        /// Grid axis `key=v1,v2,...`; the cartesian product runs under `output_dir`. Repeatable.
        #[arg(long, value_name = "KEY=V1,V2")]
        sweep: Vec<String>,
        /// Parallel processes for a sweep.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
    },
    /// Merge rounds.csv of several runs and summarize them.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// Write the merged per-round table here.
        #[arg(long, value_name = "FILE")]
        merged: Option<PathBuf>,
    },
    /// Show one round's targets, exposure extremes and discrepancy.
    Inspect {
        run: PathBuf,
        /// Round to inspect; defaults to the last completed one.
        #[arg(long)]
        round: Option<u32>,
    },
    /// Summary statistics of the configured dataset.
    DatasetStats {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            force,
            resume,
            sweep,
            jobs,
            precision,
        } => match (resume, sweep.is_empty()) {
            (Some(dir), _) => commands::resume(&dir),
            (None, true) => commands::run(&config, force, precision),
            (None, false) => commands::sweep(&config, &sweep, force, jobs, precision),
        },
        Command::Compare { runs, merged } => commands::compare(&runs, merged.as_deref()),
        Command::Inspect { run, round } => commands::inspect(&run, round),
        Command::DatasetStats { config } => commands::dataset_stats(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = commands::exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
