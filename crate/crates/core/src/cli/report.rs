use std::path::{Path, PathBuf};

use super::{CliError, Manifest, EXIT_CONFIG, EXIT_OK};
use crate::domain::{validate_trace, BaselineRecord, Trace};
use crate::metrics::{emit_report, EvalSet, Grader, KeywordTable, MetricsError, ReportInput};
use crate::sandbox::Sandbox;

pub struct ReportArgs {
    pub run_dir: PathBuf,
    pub evals: PathBuf,
    pub baseline: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub switch_threshold: f64,
    pub keywords: Option<PathBuf>,
}

fn load_traces(dir: &Path, manifest: &Manifest) -> Result<Vec<Trace>, CliError> {
    let mut traces = Vec::new();
    for e in &manifest.problems {
        let path = dir.join(&e.file);
        if path.exists() {
            traces.push(Trace::load(&path).map_err(|err| CliError::io(&path, err))?);
        }
    }
    Ok(traces)
}

pub fn cmd_report(args: &ReportArgs) -> Result<i32, CliError> {
    let manifest = Manifest::load(&args.run_dir)?;
    if manifest.baseline.is_some() {
        return Err(CliError::Config(format!(
            "{} is a baseline run; pass it with --baseline next to a loop run",
            args.run_dir.display()
        )));
    }
    let evals = EvalSet::load(&args.evals).map_err(|e| CliError::Config(e.to_string()))?;
    let traces = load_traces(&args.run_dir, &manifest)?;
    for t in &traces {
        if evals.get(t.problem_id()).is_err() {
            return Err(CliError::Config(format!(
                "{}: no evaluation record for problem `{}`",
                args.evals.display(),
                t.problem_id()
            )));
        }
    }
    let mut baselines = Vec::new();
    if let Some(dir) = &args.baseline {
        let m = Manifest::load(dir)?;
        for e in &m.problems {
            let path = dir.join(&e.file);
            if path.exists() {
                baselines
                    .push(BaselineRecord::load(&path).map_err(|err| CliError::io(&path, err))?);
            }
        }
    }
    let keywords = match &args.keywords {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::io(p, e))?
            .parse::<KeywordTable>()
            .map_err(|e| CliError::Config(e.to_string()))?,
        None => KeywordTable::default(),
    };
    let sandbox = Sandbox::from_settings(&manifest.config.sandbox);
    let grader = Grader::new(&evals).with_sandbox(&sandbox);
    let bundle = emit_report(&ReportInput {
        traces: &traces,
        baselines: &baselines,
        grader: &grader,
        switch_threshold: args.switch_threshold,
        keywords: &keywords,
    })
    .map_err(|e| match e {
        MetricsError::Io(m) => CliError::Io(m),
        other => CliError::Config(other.to_string()),
    })?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.run_dir.join("report"));
    bundle
        .write(&out)
        .map_err(|e| CliError::Io(e.to_string()))?;
    print!("{}", bundle.files["digest.txt"]);
    println!("report written to {}", out.display());
    Ok(EXIT_OK)
}

pub fn cmd_validate(run_dir: &Path) -> Result<i32, CliError> {
    let manifest = Manifest::load(run_dir)?;
    let mut bad = 0;
    for e in &manifest.problems {
        let path = run_dir.join(&e.file);
        if !path.exists() {
            println!("{}: no trace yet", e.id);
            continue;
        }
        if manifest.baseline.is_some() {
            match BaselineRecord::load(&path) {
                Ok(_) => println!("{}: ok", e.id),
                Err(err) => {
                    bad += 1;
                    println!("{}: {err}", e.id);
                }
            }
            continue;
        }
        let violations = match Trace::load(&path) {
            Ok(t) => validate_trace(&t),
            Err(err) => vec![err.to_string()],
        };
        if violations.is_empty() {
            println!("{}: ok", e.id);
        } else {
            bad += 1;
            for v in violations {
                println!("{}: {v}", e.id);
            }
        }
    }
    Ok(if bad == 0 { EXIT_OK } else { EXIT_CONFIG })
}
