//! `ldlab`: run large-deviation experiments from a JSON config.
//!
//! Exit codes: 0 success, 1 domination failure, 2 config error, 3 runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ldlab::experiment::{parse_config, run, Command, ExperimentError, Outcome, RunOutput};

const EXIT_OK: u8 = 0;
const EXIT_DOMINATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "ldlab", version, about = "Large-deviation bounds and Monte Carlo checks")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Write `<PREFIX>_<artifact>.csv` instead of printing to stdout.
    #[arg(long, value_name = "PREFIX")]
    out: Option<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Monte Carlo deviation estimates over the grid.
    Simulate(Common),
    /// Bound values over the grid.
    Bound(Common),
    /// Domination study of bounds against estimates.
    Verify(Common),
    /// Ulam matrix of the configured system.
    Ulam(Common),
    /// Poisson solution and mixing profile.
    Psi(Common),
    /// Tail fit and L² tail trace.
    Tails(Common),
}

impl Sub {
    fn split(&self) -> (Command, &Common) {
        match self {
            Sub::Simulate(c) => (Command::Simulate, c),
            Sub::Bound(c) => (Command::Bound, c),
            Sub::Verify(c) => (Command::Verify, c),
            Sub::Ulam(c) => (Command::Ulam, c),
            Sub::Psi(c) => (Command::Psi, c),
            Sub::Tails(c) => (Command::Tails, c),
        }
    }
}

fn execute(command: Command, common: &Common, stdout: &mut dyn Write) -> Result<Outcome, ExperimentError> {
    let text = fs::read_to_string(&common.config).map_err(|e| {
        ExperimentError::Config(format!("cannot read {}: {e}", common.config.display()))
    })?;
    let mut config = parse_config(&text)?;
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &common.out {
        config.output = Some(out.clone());
    }
    let output = match common.threads {
        Some(0) => return Err(ExperimentError::Config("--threads must be at least 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| ExperimentError::Runtime(e.to_string()))?
            .install(|| run(command, &config))?,
        None => run(command, &config)?,
    };
    emit(&output, config.output.as_deref(), stdout)?;
    Ok(output.outcome)
}

fn emit(output: &RunOutput, prefix: Option<&str>, stdout: &mut dyn Write) -> Result<(), ExperimentError> {
    match prefix {
        Some(prefix) => {
            for (name, csv) in &output.artifacts {
                let path = format!("{prefix}_{name}.csv");
                fs::write(&path, csv).map_err(|e| ExperimentError::Runtime(format!("{path}: {e}")))?;
            }
        }
        None => {
            if let Some((_, csv)) = output.artifacts.first() {
                stdout
                    .write_all(csv.as_bytes())
                    .map_err(|e| ExperimentError::Runtime(e.to_string()))?;
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the subcommand and returns the exit code.
fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return e.exit_code() as u8;
        }
    };
    let (command, common) = cli.command.split();
    match execute(command, common, stdout) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::DominationFailure) => {
            let _ = writeln!(stderr, "ldlab {}: at least one FAIL verdict", command.name());
            EXIT_DOMINATION
        }
        Err(e) => {
            let _ = writeln!(stderr, "ldlab {}: {e}", command.name());
            match e {
                ExperimentError::Config(_) => EXIT_CONFIG,
                ExperimentError::Runtime(_) => EXIT_RUNTIME,
            }
        }
    }
}

fn main() -> ExitCode {
    let code = run_cli(
        std::env::args_os(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    ExitCode::from(code)
}
