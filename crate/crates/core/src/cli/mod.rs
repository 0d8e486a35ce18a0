//! The `trt` command line: `run`, `baseline`, `report`, `validate`.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 backend
//! unreachable for every problem, 3 some problems aborted.

mod manifest;
mod report;
mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::backend::{ChatBackend, OpenAiBackend, ScriptedBackend, SyntheticSolver};
use crate::domain::{load_problems, BackendConfig, ProblemSpec, RunConfig};

pub use manifest::{Manifest, ManifestEntry, ProblemStatus, MANIFEST_FILE, MANIFEST_SCHEMA};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_UNREACHABLE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "trt",
    version,
    about = "Run the recursive thinking loop, baselines and reports"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the loop on every problem, one trace file per problem.
    Run(RunArgs),
    /// Run a matched-compute baseline.
    Baseline {
        kind: BaselineArg,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Compute metrics for a finished (or partial) run directory.
    Report {
        /// Run directory written by `trt run`.
        run_dir: PathBuf,
        #[arg(long)]
        evals: PathBuf,
        /// Baseline run directory, for problem attribution.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Where to write the bundle (default: <run_dir>/report).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Strategy switch threshold.
        #[arg(long, default_value_t = crate::metrics::DEFAULT_SWITCH_THRESHOLD)]
        switch_threshold: f64,
        /// Replacement keyword table for knowledge categories.
        #[arg(long)]
        keywords: Option<PathBuf>,
    },
    /// Check every trace in a run directory against the trace invariants.
    Validate { run_dir: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub problems: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue an interrupted run in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Problems processed concurrently.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Parallel,
    Rsa,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(args) => run::cmd_run(&args),
        Command::Baseline { kind, args } => run::cmd_baseline(kind, &args),
        Command::Report {
            run_dir,
            evals,
            baseline,
            out,
            switch_threshold,
            keywords,
        } => report::cmd_report(&report::ReportArgs {
            run_dir,
            evals,
            baseline,
            out,
            switch_threshold,
            keywords,
        }),
        Command::Validate { run_dir } => report::cmd_validate(&run_dir),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

fn load_inputs(args: &RunArgs) -> Result<(RunConfig, Vec<ProblemSpec>), CliError> {
    let mut config = RunConfig::load(&args.config).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let problems = load_problems(&args.problems)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.problems.display())))?;
    if args.workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    Ok((config, problems))
}

/// Backend described by `config`; relative script paths resolve against
/// `config_dir`.
pub fn build_backend(
    config: &RunConfig,
    config_dir: &Path,
) -> Result<Box<dyn ChatBackend>, CliError> {
    Ok(match &config.backend {
        BackendConfig::Openai(settings) => Box::new(
            OpenAiBackend::from_env(settings.clone())
                .map_err(|e| CliError::Config(e.to_string()))?,
        ),
        BackendConfig::Scripted { .. } => {
            let path = config
                .script_path(config_dir)
                .expect("scripted backend has a path");
            Box::new(ScriptedBackend::load(&path).map_err(|e| CliError::io(&path, e))?)
        }
        BackendConfig::Synthetic(s) => Box::new(SyntheticSolver::new(s.clone())),
    })
}

/// File-system safe name for a problem id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}
