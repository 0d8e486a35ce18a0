//! Execution-based selection: two candidate programs run against tests in a
//! subprocess sandbox; the one passing more tests wins. Needs `python3`.
//!
//! cargo run -p trt --example code_selection

use trt::backend::{Caller, Script, ScriptedBackend};
use trt::domain::{
    KnowledgeList, Payload, ProblemKind, ProblemSpec, Rollout, RolloutId, Sampling, Usage,
};
use trt::sandbox::{detect_examples, GeneratedTest, Limits, Sandbox, TestOrigin};
use trt::selection::select_code;

fn candidate(index: u32, program: &str) -> Rollout {
    Rollout {
        id: RolloutId::new(1, index),
        round: 1,
        strategy_id: None,
        raw_output: format!("```python\n{program}```"),
        payload: Payload::Program(program.into()),
        summary: program.into(),
        usage: Usage::default(),
    }
}

fn main() {
    let statement = "Print the sum of 1..n.\n\nInput\n4\n\nOutput\n10\n";
    let problem = ProblemSpec::new("sum", statement, ProblemKind::CodeGeneration);
    let mut tests: Vec<GeneratedTest> = detect_examples(statement)
        .into_iter()
        .map(|(i, o)| GeneratedTest::new("ex1", i + "\n", &o, 1, TestOrigin::ProblemExample))
        .collect();
    tests.push(GeneratedTest::new(
        "t1",
        "1\n",
        "1",
        1,
        TestOrigin::ModelGenerated,
    ));

    let buggy = candidate(1, "n = int(input())\nprint(sum(range(n)))\n");
    let fixed = candidate(2, "n = int(input())\nprint(n * (n + 1) // 2)\n");
    let sandbox = Sandbox::new("python3 -I", Limits::default(), 2);
    let programs = [
        (buggy.id, buggy.payload.program().unwrap()),
        (fixed.id, fixed.payload.program().unwrap()),
    ];
    let reports = sandbox
        .execute_all(&programs, &tests)
        .expect("python3 available");
    for (id, rep) in &reports {
        let outcomes: Vec<_> = rep
            .results
            .iter()
            .map(|r| format!("{}={:?}", r.test_id, r.outcome))
            .collect();
        println!("{id}: {}", outcomes.join(" "));
    }

    // no model is consulted unless candidates tie on passed tests
    let backend = ScriptedBackend::new(Script::new());
    let sampling = Sampling::default();
    let caller = Caller::new(&backend, &sampling, 0);
    let result = select_code(
        &problem,
        &[&buggy, &fixed],
        &reports,
        &KnowledgeList::new(),
        &caller,
        1,
    )
    .unwrap();
    println!("selected {} ({})", result.chosen, result.rationale);
}
