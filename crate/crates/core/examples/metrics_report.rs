//! Runs the loop on a few synthetic problems, grades the traces against
//! evaluation records and writes the metrics bundle to a temp directory.
//!
//! cargo run -p trt --example metrics_report

use trt::backend::SyntheticSolver;
use trt::domain::{BackendConfig, ProblemKind, ProblemSpec, RunConfig, SyntheticSettings};
use trt::metrics::{
    emit_report, EvalSet, EvaluationRecord, Grader, KeywordTable, ReportInput, Truth,
};
use trt::orchestrator::Engine;

fn main() {
    let settings = SyntheticSettings::default();
    let solver = SyntheticSolver::new(settings.clone());
    let config = RunConfig::new(6, 2, BackendConfig::Synthetic(settings));
    let engine = Engine::new(&config, &solver);

    let problems: Vec<ProblemSpec> = (1..=8)
        .map(|i| {
            ProblemSpec::new(
                format!("m{i}"),
                format!("Synthetic problem {i}."),
                ProblemKind::MathIntegerAnswer,
            )
        })
        .collect();
    let traces: Vec<_> = problems
        .iter()
        .map(|p| engine.run_problem(p).expect("synthetic run"))
        .collect();

    // ground truth is only ever handed to the grader
    let evals = EvalSet::new(problems.iter().map(|p| EvaluationRecord {
        problem_id: p.id.clone(),
        truth: Truth::Answer(solver.hidden_answer(&p.id)),
    }));
    let grader = Grader::new(&evals);
    let bundle = emit_report(&ReportInput {
        traces: &traces,
        baselines: &[],
        grader: &grader,
        switch_threshold: 0.5,
        keywords: &KeywordTable::default(),
    })
    .expect("every trace has an eval record");

    let dir = tempfile::tempdir().unwrap();
    bundle.write(dir.path()).unwrap();
    print!("{}", bundle.files["digest.txt"]);
    println!("\naccuracy.csv:\n{}", bundle.files["accuracy.csv"]);
    println!("files: {:?}", bundle.files.keys().collect::<Vec<_>>());
}
