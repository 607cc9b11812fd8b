//! Command-line driver: validation, single solves, penalty sweeps, oracle
//! comparison and convergence studies.
//!
//! Every run that writes files also writes `manifest.json`; `replay` repeats
//! the run from that file alone and produces byte-identical tables.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use dnpsolve::{bundled, ProblemSpec};

mod commands;
pub mod manifest;
pub mod output;

pub use manifest::{ProblemRecord, RunCommand, RunManifest, MANIFEST_FILE};

pub const DEFAULT_OUT: &str = "dnpsolve-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    /// The report has already been printed.
    #[error("validation failed")]
    Validation,
    #[error("solver failure: {0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dnpsolve", version, about = "Penalty solver for doubly nonlinear parabolic systems with unilateral boundary constraints")]
pub struct Cli {
    /// Seed for sampled checks and randomized probes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: dnpsolve-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress reports on stdout.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct TimeArgs {
    #[arg(long, value_parser = positive)]
    pub dt: Option<f64>,
    #[arg(long = "t-end", value_parser = positive)]
    pub t_end: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Number of penalty stages, each ten times smaller than the last.
    #[arg(long = "eps-stages", value_parser = clap::value_parser!(u32).range(1..=12))]
    pub eps_stages: Option<u32>,
    /// Penalty parameter of the first stage.
    #[arg(long, value_parser = positive)]
    pub eps0: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the structural conditions of a problem file.
    Validate { problem: String },
    /// Solve the penalized problem once.
    Solve {
        problem: String,
        /// Penalty parameter (default from the problem file).
        #[arg(long, value_parser = positive)]
        eps: Option<f64>,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Solve for a decreasing sequence of penalty parameters.
    Sweep {
        problem: String,
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Start every stage from the initial data instead of the previous stage.
        #[arg(long)]
        cold: bool,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Compare a penalty sweep with the active-set reference solution.
    OracleCompare {
        problem: String,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Observed convergence order against a known exact solution.
    Convergence {
        family: FamilyArg,
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=8))]
        levels: u32,
        #[arg(long, value_enum, default_value_t = StudyArg::Space)]
        study: StudyArg,
    },
    /// Repeat a run from its manifest.
    Replay { manifest: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Heat,
    Affine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StudyArg {
    Space,
    Time,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` must be positive and finite"))
    }
}

/// Reads `arg` as a file path, falling back to a bundled problem name.
pub fn load_problem(arg: &str) -> Result<ProblemSpec, CliError> {
    let path = Path::new(arg);
    if path.exists() {
        return ProblemSpec::from_path(path).map_err(|e| CliError::Usage(e.to_string()));
    }
    match bundled::source(arg) {
        Some(text) => ProblemSpec::parse(text).map_err(|e| CliError::Usage(format!("{arg}: {e}"))),
        None => {
            let names: Vec<&str> = bundled::PROBLEMS.iter().map(|(n, _)| *n).collect();
            Err(CliError::Usage(format!(
                "`{arg}` is neither a file nor a bundled problem ({})",
                names.join(", ")
            )))
        }
    }
}

/// Where a run's messages go.
pub struct Console<'a> {
    pub quiet: bool,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

impl Console<'_> {
    pub fn say(&mut self, msg: impl AsRef<str>) {
        if !self.quiet {
            let _ = writeln!(self.out, "{}", msg.as_ref());
        }
    }

    pub fn warn(&mut self, msg: impl AsRef<str>) {
        let _ = writeln!(self.err, "warning: {}", msg.as_ref());
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit
/// code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{rendered}") } else { write!(out, "{rendered}") };
            return code;
        }
    };
    let mut console = Console {
        quiet: cli.quiet,
        out,
        err,
    };
    match commands::dispatch(&cli, &mut console) {
        Ok(()) => 0,
        Err(e) => {
            if !matches!(e, CliError::Validation) {
                let _ = writeln!(console.err, "error: {e}");
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Validation.exit_code(), 1);
        assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CliError::Solver(String::new()).exit_code(), 3);
    }

    #[test]
    fn positive_rejects_zero_and_text() {
        assert!(positive("0").is_err());
        assert!(positive("abc").is_err());
        assert!(positive("inf").is_err());
        assert_eq!(positive("1e-3"), Ok(1e-3));
    }

    #[test]
    fn problems_resolve_by_name() {
        assert_eq!(load_problem("heat").unwrap().name, "heat");
        assert_eq!(load_problem("no_such_problem").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn bad_flag_value_is_a_usage_error() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["dnpsolve", "solve", "heat", "--dt", "-1"], &mut o, &mut e), 2);
        assert_eq!(run(["dnpsolve", "--help"], &mut o, &mut e), 0);
    }
}
