use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use tracing::{error, info};

use super::{
    build_backend, file_stem, load_inputs, BaselineArg, CliError, Manifest, ManifestEntry,
    ProblemStatus, RunArgs, EXIT_OK, EXIT_PARTIAL, EXIT_UNREACHABLE, MANIFEST_FILE,
};
use crate::backend::ChatBackend;
use crate::baselines::Baselines;
use crate::domain::{BaselineKind, BaselineRecord, ProblemSpec, RunConfig, Trace};
use crate::orchestrator::Engine;
use crate::sandbox::Sandbox;

struct Outcome {
    entry: ManifestEntry,
    unreachable: bool,
}

fn config_dir(args: &RunArgs) -> PathBuf {
    args.config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Creates the output directory, or checks that an existing one belongs to
/// the same configuration when resuming.
fn prepare_out(
    args: &RunArgs,
    config: &RunConfig,
    baseline: Option<BaselineKind>,
) -> Result<(), CliError> {
    let out = &args.out;
    if out.join(MANIFEST_FILE).exists() {
        if !args.resume {
            return Err(CliError::Config(format!(
                "{} already holds a run; pass --resume to continue it",
                out.display()
            )));
        }
        let m = Manifest::load(out)?;
        if m.config_fingerprint != config.fingerprint() {
            return Err(CliError::Config(format!(
                "{}: configuration differs from the one the run started with",
                out.display()
            )));
        }
        if m.baseline != baseline {
            return Err(CliError::Config(format!(
                "{}: run directory holds a different kind of run",
                out.display()
            )));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

/// Runs `work` over the problems on a bounded pool, keeping input order.
fn for_each_problem(
    problems: &[ProblemSpec],
    workers: usize,
    work: impl Fn(&ProblemSpec) -> Outcome + Sync,
) -> Vec<Outcome> {
    let next = AtomicUsize::new(0);
    let done = Mutex::new(Vec::with_capacity(problems.len()));
    std::thread::scope(|s| {
        for _ in 0..workers.min(problems.len()).max(1) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = problems.get(i) else { break };
                let o = work(p);
                done.lock().expect("outcomes lock").push((i, o));
            });
        }
    });
    let mut v = done.into_inner().expect("outcomes lock");
    v.sort_by_key(|(i, _)| *i);
    v.into_iter().map(|(_, o)| o).collect()
}

fn exit_code(outcomes: &[Outcome]) -> i32 {
    let failed: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| o.entry.status == ProblemStatus::Failed)
        .collect();
    if failed.is_empty() {
        EXIT_OK
    } else if failed.len() == outcomes.len() && failed.iter().all(|o| o.unreachable) {
        EXIT_UNREACHABLE
    } else {
        EXIT_PARTIAL
    }
}

/// Drops a torn final line left by an interrupted write.
fn repair_tail(path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if !text.is_empty() && !text.ends_with('\n') {
        let keep = text.rfind('\n').map_or(0, |i| i + 1);
        std::fs::write(path, &text[..keep]).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn run_one(
    problem: &ProblemSpec,
    config: &RunConfig,
    backend: &dyn ChatBackend,
    sandbox: &Sandbox,
    out: &Path,
    resume: bool,
) -> Outcome {
    let file = format!("traces/{}.jsonl", file_stem(&problem.id));
    let path = out.join(&file);
    let failed = |rounds: u32, msg: String, unreachable: bool| Outcome {
        entry: ManifestEntry {
            id: problem.id.clone(),
            file: file.clone(),
            status: ProblemStatus::Failed,
            rounds_completed: rounds,
            error: Some(msg),
        },
        unreachable,
    };
    let engine = Engine::new(config, backend).with_sandbox(sandbox);

    let existing = if resume && path.exists() {
        if let Err(e) = repair_tail(&path) {
            return failed(0, e.to_string(), false);
        }
        match Trace::load(&path) {
            Ok(t) => Some(t),
            Err(e) => return failed(0, format!("{}: {e}", path.display()), false),
        }
    } else {
        None
    };
    let trace = match existing {
        Some(t) => t,
        None => {
            let t = Trace::new(engine.header(problem));
            if let Err(e) = std::fs::write(&path, t.header_line() + "\n") {
                return failed(0, format!("{}: {e}", path.display()), false);
            }
            t
        }
    };

    let mut hook = |_: &_, record: &_| -> Result<(), String> {
        let mut f = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| e.to_string())?;
        f.write_all((Trace::round_line(record) + "\n").as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| e.to_string())
    };
    match engine.run_with(problem, trace, &mut hook) {
        Ok(t) => {
            info!(problem = %problem.id, rounds = t.last_round(), "problem complete");
            Outcome {
                entry: ManifestEntry {
                    id: problem.id.clone(),
                    file: file.clone(),
                    status: ProblemStatus::Complete,
                    rounds_completed: t.last_round(),
                    error: None,
                },
                unreachable: false,
            }
        }
        Err(f) => {
            error!(problem = %problem.id, error = %f.error, "problem aborted");
            failed(
                f.trace.last_round(),
                f.error.to_string(),
                f.error.is_unreachable(),
            )
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<i32, CliError> {
    let (config, problems) = load_inputs(args)?;
    let backend = build_backend(&config, &config_dir(args))?;
    let sandbox = Sandbox::from_settings(&config.sandbox);
    prepare_out(args, &config, None)?;
    let traces = args.out.join("traces");
    std::fs::create_dir_all(&traces).map_err(|e| CliError::io(&traces, e))?;

    let pending = problems
        .iter()
        .map(|p| ManifestEntry {
            id: p.id.clone(),
            file: format!("traces/{}.jsonl", file_stem(&p.id)),
            status: ProblemStatus::Pending,
            rounds_completed: 0,
            error: None,
        })
        .collect();
    Manifest::new(&config, None, pending).save(&args.out)?;

    let outcomes = for_each_problem(&problems, args.workers, |p| {
        run_one(
            p,
            &config,
            backend.as_ref(),
            &sandbox,
            &args.out,
            args.resume,
        )
    });
    let entries = outcomes.iter().map(|o| o.entry.clone()).collect();
    Manifest::new(&config, None, entries).save(&args.out)?;
    Ok(exit_code(&outcomes))
}

pub fn cmd_baseline(kind: BaselineArg, args: &RunArgs) -> Result<i32, CliError> {
    let (config, problems) = load_inputs(args)?;
    let backend = build_backend(&config, &config_dir(args))?;
    let sandbox = Sandbox::from_settings(&config.sandbox);
    let bkind = match kind {
        BaselineArg::Parallel => BaselineKind::Parallel,
        BaselineArg::Rsa => BaselineKind::Rsa,
    };
    prepare_out(args, &config, Some(bkind))?;
    let dir = args.out.join("baselines");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let b = &config.baseline;

    let outcomes = for_each_problem(&problems, args.workers, |p| {
        let file = format!("baselines/{}.jsonl", file_stem(&p.id));
        let path = args.out.join(&file);
        let entry = |status, rounds, error| ManifestEntry {
            id: p.id.clone(),
            file: file.clone(),
            status,
            rounds_completed: rounds,
            error,
        };
        if args.resume {
            if let Ok(done) = BaselineRecord::load(&path) {
                let n = done.iterations.len() as u32;
                return Outcome {
                    entry: entry(ProblemStatus::Complete, n, None),
                    unreachable: false,
                };
            }
        }
        let runner = Baselines::new(&config, backend.as_ref()).with_sandbox(&sandbox);
        let result = match kind {
            BaselineArg::Parallel => runner.parallel_baseline(p, b.parallel_samples),
            BaselineArg::Rsa => {
                runner.rsa_run(p, b.rsa_population, b.rsa_iterations, b.subset_size())
            }
        };
        match result {
            Ok(rec) => match std::fs::write(&path, rec.to_jsonl()) {
                Ok(()) => Outcome {
                    entry: entry(ProblemStatus::Complete, rec.iterations.len() as u32, None),
                    unreachable: false,
                },
                Err(e) => Outcome {
                    entry: entry(
                        ProblemStatus::Failed,
                        0,
                        Some(format!("{}: {e}", path.display())),
                    ),
                    unreachable: false,
                },
            },
            Err(e) => {
                error!(problem = %p.id, error = %e, "baseline aborted");
                Outcome {
                    unreachable: e.is_unreachable(),
                    entry: entry(ProblemStatus::Failed, 0, Some(e.to_string())),
                }
            }
        }
    });
    let entries = outcomes.iter().map(|o| o.entry.clone()).collect();
    Manifest::new(&config, Some(bkind), entries).save(&args.out)?;
    Ok(exit_code(&outcomes))
}
