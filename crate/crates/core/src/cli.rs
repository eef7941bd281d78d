//! Command-line front end. [`main_with`] parses arguments, runs one command
//! and returns the process exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::par::{self, Execution};
use crate::report::write_file;
use crate::scenario::{Command, Scenario};

/// Wolff potentials, energies and the inequality checks between them.
#[derive(Parser)]
#[command(name = "wolff", version)]
struct Cli {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for the report files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// T, W, W̄ and M (or their continuous forms) at query points.
    Potential {
        /// CSV of query points, one per row.
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Energy, ∫ W dμ and their ratio.
    Energy,
    /// Maximal functions at query points and the maximal energy.
    Maximal {
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Runs the scenario's `checks` list.
    Verify,
    /// Series and depth sweep of the log-kernel example.
    Counterexample,
    /// Trace inequality tests (q = 1 duality, or 1 < q < p).
    Trace,
}

fn load(cli: &Cli, points: Option<&Path>) -> Result<Scenario> {
    let mut scenario = match &cli.config {
        Some(path) => Scenario::load(path)?,
        None if matches!(cli.command, Cmd::Counterexample) => {
            Scenario::from_json(r#"{"name": "counterexample", "dimension": 1}"#, Path::new("."))?
        }
        None => anyhow::bail!("--config is required for this command"),
    };
    if let Some(p) = points {
        scenario.points_csv = Some(std::env::current_dir()?.join(p));
    }
    Ok(scenario)
}

fn run(cli: &Cli) -> Result<bool> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        par::set_threads(n).map_err(anyhow::Error::msg)?;
    }
    let (command, points) = match &cli.command {
        Cmd::Potential { points } => (Command::Potential, points.as_deref()),
        Cmd::Energy => (Command::Energy, None),
        Cmd::Maximal { points } => (Command::Maximal, points.as_deref()),
        Cmd::Verify => (Command::Verify, None),
        Cmd::Counterexample => (Command::Counterexample, None),
        Cmd::Trace => (Command::Trace, None),
    };
    let scenario = load(cli, points)?;
    let out = scenario.run(command, cli.seed, Execution::default())?;
    out.report
        .write_all(&cli.out_dir)
        .with_context(|| format!("writing reports to {}", cli.out_dir.display()))?;
    write_file(&cli.out_dir.join("timings.json"), &out.timings_json()?)?;
    for c in &out.report.checks {
        println!(
            "{} {} value={} band=[{}, {}]",
            if c.pass { "PASS" } else { "FAIL" },
            c.check,
            c.value,
            c.lower_band,
            c.upper_band
        );
    }
    for q in &out.report.results {
        println!("{} = {}", q.name, q.value);
    }
    Ok(out.report.pass)
}

pub const EXIT_PASS: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
