use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use tracing::debug;

use super::{ExecutionReport, GeneratedTest, SandboxError, TestOutcome, TestResult};
use crate::domain::{RolloutId, SandboxSettings};

const PROGRAM_FILE: &str = "main.py";
const POLL: Duration = Duration::from_millis(2);
const DRAIN_GRACE: Duration = Duration::from_millis(500);

/// Strips trailing whitespace on every line and trailing newlines.
pub fn normalize_output(text: &str) -> String {
    let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    lines.join("\n").trim_end_matches('\n').to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub timeout_ms: u64,
    pub max_output_bytes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            timeout_ms: 10_000,
            max_output_bytes: 64 * 1024,
        }
    }
}

/// Runs programs through a configured interpreter, one fresh process and
/// temp directory per candidate.
#[derive(Debug, Clone)]
pub struct Sandbox {
    cmd: Vec<String>,
    limits: Limits,
    workers: usize,
}

struct RunOutput {
    outcome: RawOutcome,
    stdout: String,
    stderr: String,
    wall: Duration,
}

enum RawOutcome {
    Exited(i32),
    Signalled,
    TimedOut,
}

impl Sandbox {
    pub fn new(cmd: &str, limits: Limits, workers: usize) -> Self {
        Self {
            cmd: cmd.split_whitespace().map(str::to_string).collect(),
            limits,
            workers: workers.max(1),
        }
    }

    pub fn from_settings(s: &SandboxSettings) -> Self {
        Self::new(
            &s.cmd,
            Limits {
                timeout_ms: s.timeout_ms,
                max_output_bytes: s.max_output_bytes,
            },
            s.workers,
        )
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    pub fn command(&self) -> String {
        self.cmd.join(" ")
    }

    fn unavailable(&self, detail: impl Into<String>) -> SandboxError {
        SandboxError::Unavailable {
            cmd: self.command(),
            detail: detail.into(),
        }
    }

    /// Runs `program` once against every test, sequentially.
    pub fn execute(
        &self,
        rollout_id: RolloutId,
        program: &str,
        tests: &[GeneratedTest],
    ) -> Result<ExecutionReport, SandboxError> {
        if self.cmd.is_empty() {
            return Err(self.unavailable("empty command"));
        }
        let dir = tempfile::tempdir().map_err(|e| SandboxError::Io(e.to_string()))?;
        std::fs::write(dir.path().join(PROGRAM_FILE), program)
            .map_err(|e| SandboxError::Io(e.to_string()))?;
        let mut results = Vec::with_capacity(tests.len());
        for test in tests {
            let mut run = self.run_once(dir.path(), &test.input)?;
            // tracebacks name the temp dir; keep reports comparable across runs
            let dir_str = dir.path().to_string_lossy();
            run.stderr = run.stderr.replace(dir_str.as_ref(), ".");
            let outcome = match run.outcome {
                RawOutcome::TimedOut => TestOutcome::Timeout,
                RawOutcome::Signalled => TestOutcome::Crash,
                RawOutcome::Exited(0) => {
                    if normalize_output(&run.stdout) == test.expected_output {
                        TestOutcome::Pass
                    } else {
                        TestOutcome::WrongOutput
                    }
                }
                RawOutcome::Exited(_) => TestOutcome::RuntimeError,
            };
            // partial output of a killed process is timing-dependent
            let keep = !matches!(outcome, TestOutcome::Timeout | TestOutcome::Pass);
            results.push(TestResult {
                test_id: test.id.clone(),
                outcome,
                stdout: if keep { run.stdout } else { String::new() },
                stderr: if keep { run.stderr } else { String::new() },
                wall_time_ms: run.wall.as_millis() as u64,
            });
        }
        debug!(%rollout_id, tests = tests.len(), "executed candidate");
        Ok(ExecutionReport {
            rollout_id,
            results,
        })
    }

    /// Executes several candidates in parallel, up to the worker cap.
    pub fn execute_all(
        &self,
        candidates: &[(RolloutId, &str)],
        tests: &[GeneratedTest],
    ) -> Result<BTreeMap<RolloutId, ExecutionReport>, SandboxError> {
        let next = AtomicUsize::new(0);
        let out = Mutex::new(Vec::with_capacity(candidates.len()));
        thread::scope(|s| {
            for _ in 0..self.workers.min(candidates.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((id, program)) = candidates.get(i) else {
                        break;
                    };
                    let r = self.execute(*id, program, tests);
                    out.lock().expect("results lock").push((*id, r));
                });
            }
        });
        let mut reports = BTreeMap::new();
        for (id, r) in out.into_inner().expect("results lock") {
            reports.insert(id, r?);
        }
        Ok(reports)
    }

    fn run_once(&self, dir: &std::path::Path, input: &str) -> Result<RunOutput, SandboxError> {
        let mut cmd = Command::new(&self.cmd[0]);
        cmd.args(&self.cmd[1..])
            .arg(PROGRAM_FILE)
            .current_dir(dir)
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("PYTHONHASHSEED", "0")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONIOENCODING", "utf-8")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        let start = Instant::now();
        let mut child = cmd.spawn().map_err(|e| match e.kind() {
            ErrorKind::NotFound | ErrorKind::PermissionDenied => self.unavailable(e.to_string()),
            _ => SandboxError::Io(e.to_string()),
        })?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload = input.as_bytes().to_vec();
        thread::spawn(move || {
            // the program may exit without reading; a broken pipe is fine
            let _ = stdin.write_all(&payload);
        });
        let cap = self.limits.max_output_bytes;
        let out_rx = drain(child.stdout.take().expect("piped stdout"), cap);
        let err_rx = drain(child.stderr.take().expect("piped stderr"), cap);

        let deadline = start + Duration::from_millis(self.limits.timeout_ms);
        let outcome = loop {
            match child.try_wait() {
                Ok(Some(status)) => {
                    break match status.code() {
                        Some(code) => RawOutcome::Exited(code),
                        None => RawOutcome::Signalled,
                    }
                }
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break RawOutcome::TimedOut;
                }
                Ok(None) => thread::sleep(POLL),
                Err(e) => return Err(SandboxError::Io(e.to_string())),
            }
        };
        let wall = start.elapsed();
        let stdout = out_rx.recv_timeout(DRAIN_GRACE).unwrap_or_default();
        let stderr = err_rx.recv_timeout(DRAIN_GRACE).unwrap_or_default();
        Ok(RunOutput {
            outcome,
            stdout,
            stderr,
            wall,
        })
    }
}

/// Reads a pipe to EOF on a helper thread, keeping at most `cap` bytes.
fn drain(mut pipe: impl Read + Send + 'static, cap: usize) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        let _ = tx.send(String::from_utf8_lossy(&kept).into_owned());
    });
    rx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::TestOrigin;

    fn t(input: &str, out: &str) -> GeneratedTest {
        GeneratedTest::new("t", input, out, 1, TestOrigin::ModelGenerated)
    }

    fn py() -> Sandbox {
        Sandbox::new(
            "python3",
            Limits {
                timeout_ms: 2000,
                max_output_bytes: 1024,
            },
            2,
        )
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_output("1 2  \n3\t\n\n\n"), "1 2\n3");
        assert_eq!(normalize_output(""), "");
        assert_eq!(normalize_output("a\r\nb\r\n"), "a\nb");
    }

    #[test]
    fn classifies_outcomes() {
        let sb = py();
        let id = RolloutId::new(1, 1);
        let echo = sb.execute(id, "print(input())", &[t("7\n", "7")]).unwrap();
        assert_eq!(echo.results[0].outcome, TestOutcome::Pass);
        let wrong = sb.execute(id, "print(8)", &[t("7\n", "7")]).unwrap();
        assert_eq!(wrong.results[0].outcome, TestOutcome::WrongOutput);
        let err = sb.execute(id, "raise SystemExit(3)", &[t("", "")]).unwrap();
        assert_eq!(err.results[0].outcome, TestOutcome::RuntimeError);
        let crash = sb
            .execute(
                id,
                "import os, signal\nos.kill(os.getpid(), signal.SIGKILL)",
                &[t("", "")],
            )
            .unwrap();
        assert_eq!(crash.results[0].outcome, TestOutcome::Crash);
    }

    #[test]
    fn traceback_is_stable_across_runs() {
        let sb = py();
        let id = RolloutId::new(1, 1);
        let a = sb.execute(id, "x = 1/0", &[t("", "")]).unwrap();
        let b = sb.execute(id, "x = 1/0", &[t("", "")]).unwrap();
        assert_eq!(a, b);
        assert!(a.results[0].stderr.contains("ZeroDivisionError"));
    }

    #[test]
    fn timeout_enforced() {
        let sb = Sandbox::new(
            "python3",
            Limits {
                timeout_ms: 300,
                max_output_bytes: 1024,
            },
            1,
        );
        let r = sb
            .execute(RolloutId::new(1, 1), "while True:\n    pass", &[t("", "")])
            .unwrap();
        assert_eq!(r.results[0].outcome, TestOutcome::Timeout);
        assert!(r.results[0].wall_time_ms >= 300);
        assert!(r.results[0].wall_time_ms < 600);
    }

    #[test]
    fn output_is_capped() {
        let r = py()
            .execute(RolloutId::new(1, 1), "print('x' * 100000)", &[t("", "no")])
            .unwrap();
        assert_eq!(r.results[0].outcome, TestOutcome::WrongOutput);
        assert_eq!(r.results[0].stdout.len(), 1024);
    }

    #[test]
    fn missing_interpreter_is_unavailable() {
        let sb = Sandbox::new(
            "definitely-not-a-real-interpreter-xyz",
            Limits::default(),
            1,
        );
        assert!(matches!(
            sb.execute(RolloutId::new(1, 1), "print(1)", &[t("", "1")]),
            Err(SandboxError::Unavailable { .. })
        ));
    }

    #[test]
    fn parallel_matches_sequential() {
        let sb = py();
        let tests = vec![t("3\n", "6"), t("5\n", "10")];
        let progs = [
            (RolloutId::new(1, 1), "print(int(input())*2)"),
            (RolloutId::new(1, 2), "print(int(input())+3)"),
            (RolloutId::new(1, 3), "import sys\nsys.exit(1)"),
        ];
        let all = sb.execute_all(&progs, &tests).unwrap();
        for (id, p) in progs {
            assert_eq!(all[&id], sb.execute(id, p, &tests).unwrap());
        }
        assert_eq!(all[&RolloutId::new(1, 1)].passed(), 2);
        assert_eq!(all[&RolloutId::new(1, 2)].passed(), 1);
    }
}
