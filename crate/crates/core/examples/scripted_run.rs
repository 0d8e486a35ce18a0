//! Two rounds of the loop against canned replies, printing what each round
//! selected, learned and pruned.
//!
//! cargo run -p trt --example scripted_run

use trt::backend::{Purpose, RequestKey, Script, ScriptedBackend};
use trt::domain::{BackendConfig, ProblemKind, ProblemSpec, RunConfig};
use trt::orchestrator::Engine;

fn main() {
    let problem = ProblemSpec::new(
        "demo",
        "How many positive divisors does 360 have?",
        ProblemKind::MathIntegerAnswer,
    );
    let key = |p, t, i| RequestKey::new("demo", p, t, i);
    let script = Script::new()
        .with(
            &key(Purpose::Strategy, 1, 0),
            "[STRATEGY] Factor 360 into primes\n[STRATEGY] List divisor pairs",
        )
        .with(
            &key(Purpose::Solve, 1, 1),
            "[Summary]: 360 = 2^3 3^2 5, so (3+1)(2+1)(1+1)\n[Answer]: \\boxed{24}",
        )
        .with(
            &key(Purpose::Solve, 1, 2),
            "[Summary]: counted pairs up to 18\n[Answer]: \\boxed{22}",
        )
        .with(&key(Purpose::Select, 1, 0), "[RANKING] 1, 2")
        .with(
            &key(Purpose::Reflect, 1, 2),
            "[INSIGHT] Do not stop pairing divisors before the square root\n[REJECTED_ANSWER] 22",
        )
        .with(
            &key(Purpose::Strategy, 2, 0),
            "[STRATEGY] Recheck the exponents\n[STRATEGY] Count by parity",
        )
        .with(
            &key(Purpose::Solve, 2, 1),
            "[Summary]: exponents confirmed\n[Answer]: \\boxed{24}",
        )
        .with(
            &key(Purpose::Solve, 2, 2),
            "[Summary]: odd 6, even 18\n[Answer]: \\boxed{24}",
        )
        .with(&key(Purpose::Select, 2, 0), "[RANKING] 1, 2, 3")
        .with(
            &key(Purpose::Reflect, 2, 1),
            "[INSIGHT] Do not skip the exponent of 5 when factoring",
        )
        .with(
            &key(Purpose::Reflect, 2, 2),
            "[INSIGHT] Avoid splitting by parity without counting odd divisors first\n[PRUNE] k1",
        );

    let config = RunConfig::new(
        2,
        2,
        BackendConfig::Scripted {
            script: "inline".into(),
        },
    );
    let backend = ScriptedBackend::new(script);
    let trace = Engine::new(&config, &backend)
        .run_problem(&problem)
        .expect("script covers every call");

    for r in &trace.rounds {
        let Some(sel) = &r.selection else {
            println!("round {}: no selection", r.round);
            continue;
        };
        let answer = trace.rollout(sel.chosen).and_then(|x| x.payload.answer());
        println!(
            "round {}: selected {} (answer {answer:?})",
            r.round, sel.chosen
        );
        for e in &r.insights_added {
            println!("  + [{}] {}", e.id, e.text);
        }
        for p in &r.pruned {
            println!("  - [{}] pruned ({:?})", p.entry, p.reason);
        }
        for a in &r.rejected_added {
            println!("  rejected answer {a}");
        }
        for n in &r.notes {
            println!("  note: {n}");
        }
    }
    println!(
        "\nknowledge after the run:\n{}",
        trace.rounds.last().unwrap().knowledge_snapshot
    );
}
