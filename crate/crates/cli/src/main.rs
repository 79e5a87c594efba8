mod config;
mod run;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use gaussent::simon_criterion;

use crate::config::{read_state_file, ExperimentConfig, Scheme};
use crate::run::{Axis, RandtestArgs};

const EXIT_ENTANGLED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_MALFORMED: u8 = 3;
const EXIT_RUN_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "gaussent", version, about = "Separability tests and measurement-scheme simulations for two-mode Gaussian states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact criterion on a state file. Exit 0 separable, 1 entangled, 2 unphysical, 3 malformed.
    Analyze { file: PathBuf },
    /// Run one configured experiment and persist its record.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Repeat an experiment along one axis; CSV on stdout or `--out`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated; may be empty.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random states through a scheme, tabulated against the exact verdict.
    Randtest {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum)]
        scheme: Scheme,
        #[arg(long, default_value_t = 100_000)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        max_squeeze: f64,
        #[arg(long, default_value_t = 0.5)]
        max_thermal: f64,
    },
}

enum Failure {
    Malformed(anyhow::Error),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Run(e.into())
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(anyhow::Error::from)?;
    Ok(())
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut config = ExperimentConfig::load(path).map_err(Failure::Malformed)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn analyze(file: &PathBuf) -> Result<u8, Failure> {
    let state = read_state_file(file).map_err(Failure::Malformed)?;
    if state.n_modes() != 2 {
        return Err(Failure::Malformed(anyhow::anyhow!("expected 2 modes, got {}", state.n_modes())));
    }
    if let Err(e) = state.ensure_valid() {
        print_json(&serde_json::json!({
            "valid": false,
            "uncertainty_min_eigenvalue": state.uncertainty_min_eigenvalue(),
            "error": e.to_string(),
        }))?;
        return Ok(EXIT_INVALID);
    }
    let report = simon_criterion(&state).map_err(anyhow::Error::from)?;
    print_json(&report)?;
    Ok(if report.verdict.is_separable() { 0 } else { EXIT_ENTANGLED })
}

fn simulate(config: &PathBuf, seed: Option<u64>) -> Result<u8, Failure> {
    let config = load_config(config, seed)?;
    let record = run::simulate(&config)?;
    run::persist(&record, &config.output_dir(), &config.record_name())?;
    print_json(&record)?;
    Ok(0)
}

fn parse_values(text: &str) -> anyhow::Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("bad value {s:?}")))
        .collect()
}

fn sweep(config: &PathBuf, axis: Axis, values: &str, repeats: usize, seed: Option<u64>, out: Option<&PathBuf>) -> Result<u8, Failure> {
    let config = load_config(config, seed)?;
    let values = parse_values(values).map_err(Failure::Malformed)?;
    if repeats == 0 {
        return Err(Failure::Malformed(anyhow::anyhow!("repeats must be positive")));
    }
    let rows = run::sweep(&config, axis, &values, repeats);
    match out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            run::write_sweep(&rows, BufWriter::new(file))?;
        }
        None => run::write_sweep(&rows, io::stdout().lock())?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Analyze { file } => analyze(file),
        Command::Simulate { config, seed } => simulate(config, *seed),
        Command::Sweep {
            config,
            axis,
            values,
            repeats,
            seed,
            out,
        } => sweep(config, *axis, values, *repeats, *seed, out.as_ref()),
        Command::Randtest {
            n,
            scheme,
            shots,
            seed,
            max_squeeze,
            max_thermal,
        } => {
            let report = run::randtest(&RandtestArgs {
                n_states: *n,
                scheme: *scheme,
                shots: *shots,
                seed: *seed,
                max_squeeze: *max_squeeze,
                max_thermal: *max_thermal,
            });
            print_json(&report).map(|_| 0)
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Malformed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_MALFORMED)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUN_FAILED)
        }
    }
}
