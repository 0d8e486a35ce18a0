//! End-to-end runs of the `trt` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trt::backend::{Purpose, RequestKey, Script, SyntheticSolver};
use trt::domain::{validate_trace, Trace};

const SYNTHETIC: &str = r#"
rounds = 5
rollouts_per_round = 2
seed = 11

[backend]
kind = "synthetic"
"#;

fn trt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trt"))
        .args(args)
        .env("RUST_LOG", "error")
        .env_remove("TRT_API_BASE")
        .env_remove("TRT_API_KEY")
        .output()
        .expect("trt binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(config: &str, ids: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.toml"), config).unwrap();
        let problems: Vec<String> = ids
            .iter()
            .map(|id| {
                serde_json::json!({"id": id, "statement": format!("Problem {id}: find the residue."), "kind": "math"})
                    .to_string()
            })
            .collect();
        std::fs::write(
            dir.path().join("problems.jsonl"),
            problems.join("\n") + "\n",
        )
        .unwrap();
        let evals: Vec<String> = ids
            .iter()
            .map(|id| {
                serde_json::json!({"problem_id": id, "truth": {"answer": SyntheticSolver::world_answer(0, id)}})
                    .to_string()
            })
            .collect();
        std::fs::write(dir.path().join("evals.jsonl"), evals.join("\n") + "\n").unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn run(&self, out: &str, extra: &[&str]) -> Output {
        let (c, p, o) = (self.s("config.toml"), self.s("problems.jsonl"), self.s(out));
        let mut args = vec!["run", "--config", &c, "--problems", &p, "--out", &o];
        args.extend_from_slice(extra);
        trt(&args)
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn run_validate_and_report() {
    let fx = Fixture::new(SYNTHETIC, &["a", "b", "c"]);
    let o = fx.run("run", &["--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    for id in ["a", "b", "c"] {
        let t = Trace::load(&fx.path(&format!("run/traces/{id}.jsonl"))).unwrap();
        assert_eq!(t.rounds.len(), 5);
        assert!(validate_trace(&t).is_empty());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&fx.path("run/manifest.json"))).unwrap();
    assert!(manifest["problems"]
        .as_array()
        .unwrap()
        .iter()
        .all(|p| p["status"] == "complete" && p["rounds_completed"] == 5));

    let o = trt(&["validate", &fx.s("run")]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(
        String::from_utf8_lossy(&o.stdout).matches(": ok").count(),
        3
    );

    let o = trt(&["report", &fx.s("run"), "--evals", &fx.s("evals.jsonl")]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    for f in [
        "accuracy.csv",
        "cumulative_best.csv",
        "pass_at_k.csv",
        "selection_gap.csv",
        "knowledge_length.csv",
        "knowledge_categories.csv",
        "strategy_dynamics.csv",
        "digest.txt",
    ] {
        assert!(fx.path("run/report").join(f).exists(), "{f} missing");
    }
    let acc = read(&fx.path("run/report/accuracy.csv"));
    assert_eq!(acc.lines().next(), Some("round,accuracy,problems"));
    assert_eq!(acc.lines().count(), 6);
}

#[test]
fn existing_run_needs_resume_and_matching_config() {
    let fx = Fixture::new(SYNTHETIC, &["a"]);
    assert_eq!(code(&fx.run("run", &[])), 0);
    let o = fx.run("run", &[]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("--resume"), "{}", text(&o));
    let o = fx.run("run", &["--resume", "--seed", "99"]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("configuration differs"), "{}", text(&o));
}

#[test]
fn resume_after_torn_write_is_byte_identical() {
    let fx = Fixture::new(SYNTHETIC, &["a", "b"]);
    assert_eq!(code(&fx.run("full", &[])), 0);
    assert_eq!(code(&fx.run("cut", &[])), 0);
    // simulate a crash: two rounds kept, third half written
    let path = fx.path("cut/traces/a.jsonl");
    let full = read(&path);
    let lines: Vec<&str> = full.lines().collect();
    let torn = format!(
        "{}\n{}",
        lines[..3].join("\n"),
        &lines[3][..lines[3].len() / 2]
    );
    std::fs::write(&path, torn).unwrap();
    std::fs::remove_file(fx.path("cut/traces/b.jsonl")).unwrap();

    let o = fx.run("cut", &["--resume"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    for id in ["a", "b"] {
        let rel = format!("traces/{id}.jsonl");
        assert_eq!(
            read(&fx.path("cut").join(&rel)),
            read(&fx.path("full").join(&rel)),
            "{id} differs after resume"
        );
    }
}

#[test]
fn baselines_and_attribution() {
    let fx = Fixture::new(
        &format!("{SYNTHETIC}\n[baseline]\nparallel_samples = 10\nrsa_population = 2\nrsa_iterations = 5\n"),
        &["a", "b"],
    );
    assert_eq!(code(&fx.run("run", &[])), 0);
    let (c, p) = (fx.s("config.toml"), fx.s("problems.jsonl"));
    for kind in ["parallel", "rsa"] {
        let out = fx.s(kind);
        let o = trt(&[
            "baseline",
            kind,
            "--config",
            &c,
            "--problems",
            &p,
            "--out",
            &out,
        ]);
        assert_eq!(code(&o), 0, "{kind}: {}", text(&o));
        assert_eq!(code(&trt(&["validate", &out])), 0);
    }
    let o = trt(&[
        "report",
        &fx.s("run"),
        "--evals",
        &fx.s("evals.jsonl"),
        "--baseline",
        &fx.s("parallel"),
        "--out",
        &fx.s("bundle"),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let attribution = read(&fx.path("bundle/attribution.csv"));
    assert_eq!(attribution.lines().count(), 3, "{attribution}");

    // a baseline directory is not a loop run
    let o = trt(&["report", &fx.s("rsa"), "--evals", &fx.s("evals.jsonl")]);
    assert_eq!(code(&o), 1);
}

#[test]
fn report_without_eval_record_names_the_problem() {
    let fx = Fixture::new(SYNTHETIC, &["a", "b"]);
    assert_eq!(code(&fx.run("run", &[])), 0);
    let first = read(&fx.path("evals.jsonl"))
        .lines()
        .next()
        .unwrap()
        .to_string();
    std::fs::write(fx.path("evals.jsonl"), first + "\n").unwrap();
    let o = trt(&["report", &fx.s("run"), "--evals", &fx.s("evals.jsonl")]);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("`b`"), "{}", text(&o));
}

#[test]
fn unreachable_backend_exits_2() {
    let config = r#"
rounds = 2
rollouts_per_round = 1

[backend]
kind = "openai"
base_url = "http://127.0.0.1:9/v1"
model = "m"
max_retries = 0
timeout_ms = 2000
"#;
    let fx = Fixture::new(config, &["a", "b"]);
    let o = fx.run("run", &[]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    let manifest = read(&fx.path("run/manifest.json"));
    assert!(manifest.contains("\"failed\""));
}

#[test]
fn partial_failure_exits_3() {
    // the script only covers problem `a`; `b` aborts in round 1
    let key = |p, t, i| RequestKey::new("a", p, t, i);
    let script = Script::new()
        .with(&key(Purpose::Strategy, 1, 0), "[STRATEGY] Casework")
        .with(
            &key(Purpose::Solve, 1, 1),
            "[Summary]: cases\n[Answer]: \\boxed{5}",
        );
    let config = "rounds = 1\nrollouts_per_round = 1\n\n[backend]\nkind = \"scripted\"\nscript = \"script.jsonl\"\n";
    let fx = Fixture::new(config, &["a", "b"]);
    script.save(&fx.path("script.jsonl")).unwrap();
    let o = fx.run("run", &[]);
    assert_eq!(code(&o), 3, "{}", text(&o));
    let t = Trace::load(&fx.path("run/traces/a.jsonl")).unwrap();
    assert_eq!(t.rounds.len(), 1);
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(code(&trt(&["--help"])), 0);
    assert_eq!(code(&trt(&["frobnicate"])), 1);
    assert_eq!(code(&trt(&["baseline", "bogus"])), 1);
    let fx = Fixture::new(
        "rounds = 0\nrollouts_per_round = 1\n[backend]\nkind = \"synthetic\"\n",
        &["a"],
    );
    let o = fx.run("run", &[]);
    assert_eq!(code(&o), 1, "{}", text(&o));
}
