//! The loop on the offline synthetic solver: Majority@Prev per round for a
//! handful of problems.
//!
//! cargo run -p trt --release --example synthetic_loop

use trt::backend::SyntheticSolver;
use trt::baselines::rolling_majority;
use trt::domain::{BackendConfig, ProblemKind, ProblemSpec, RunConfig, SyntheticSettings};
use trt::orchestrator::Engine;

fn main() {
    let settings = SyntheticSettings::default();
    let solver = SyntheticSolver::new(settings.clone());
    let rounds = 16;
    let config = RunConfig::new(rounds, 1, BackendConfig::Synthetic(settings));
    let engine = Engine::new(&config, &solver);

    let problems: Vec<ProblemSpec> = (1..=20)
        .map(|i| {
            ProblemSpec::new(
                format!("s{i}"),
                format!("Synthetic problem {i}."),
                ProblemKind::MathIntegerAnswer,
            )
        })
        .collect();
    let mut hits = vec![0; rounds as usize];
    for p in &problems {
        let trace = engine.run_problem(p).expect("synthetic solver never fails");
        let truth = solver.hidden_answer(&p.id);
        for t in 1..=rounds {
            if rolling_majority(&trace, t).ok() == Some(truth) {
                hits[t as usize - 1] += 1;
            }
        }
    }
    println!("round  Majority@Prev");
    for (t, h) in hits.iter().enumerate() {
        println!("{:>5}  {:.2}", t + 1, *h as f64 / problems.len() as f64);
    }
}
