//! Parallel sampling and recursive self-aggregation on the synthetic solver,
//! with their generation-call counts.
//!
//! cargo run -p trt --example baselines

use trt::backend::{CallLog, SyntheticSolver};
use trt::baselines::Baselines;
use trt::domain::{BackendConfig, ProblemKind, ProblemSpec, RunConfig, SyntheticSettings};

fn main() {
    let settings = SyntheticSettings::default();
    let config = RunConfig::new(8, 2, BackendConfig::Synthetic(settings.clone()));
    let problem = ProblemSpec::new("b1", "Synthetic problem.", ProblemKind::MathIntegerAnswer);
    let truth = SyntheticSolver::world_answer(settings.world_seed, &problem.id);

    let log = CallLog::new(SyntheticSolver::new(settings.clone()));
    let parallel = Baselines::new(&config, &log)
        .parallel_baseline(&problem, 16)
        .unwrap();
    let it = &parallel.iterations[0];
    println!(
        "parallel(16): vote {:?} (truth {truth}), {} generation calls",
        it.majority,
        log.generation_calls()
    );

    let log = CallLog::new(SyntheticSolver::new(settings));
    let rsa = Baselines::new(&config, &log)
        .rsa_run(&problem, 2, 8, 2)
        .unwrap();
    for it in &rsa.iterations {
        let answers: Vec<_> = it.rollouts.iter().map(|r| r.payload.answer()).collect();
        println!("rsa iteration {}: {:?}", it.iteration, answers);
    }
    println!(
        "rsa(2, 8): final {:?}, {} generation calls",
        rsa.final_rollout().and_then(|r| r.payload.answer()),
        log.generation_calls()
    );
}
