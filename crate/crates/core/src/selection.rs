//! Choosing r* without ground truth.
//!
//! Integer-answer problems use mutual exclusivity: answers already
//! self-rejected are demoted and the model self-assesses the rest. Code
//! problems rank by generated-test pass count with a model judgment for ties.
//! [`self_rank`] is the generic fallback. Every path ends in the lowest
//! rollout id when the model gives no usable answer.

use std::collections::BTreeMap;

use thiserror::Error;
use tracing::warn;

use crate::backend::parse::parse_ranking;
use crate::backend::prompts::{
    CODE_JUDGE_SYSTEM, KNOWLEDGE_MANAGER_SYSTEM, MATH_SELECT_SYSTEM, NO_KNOWLEDGE, RANKING_FORMAT,
};
use crate::backend::{Caller, Purpose, RequestKey};
use crate::domain::{KnowledgeList, Payload, ProblemSpec, Rollout, RolloutId, SelectionResult};
use crate::sandbox::ExecutionReport;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectionError {
    #[error("no candidate has a usable payload")]
    NoValidCandidate,
}

/// Candidate block as shown to the model.
pub fn render_candidate(position: usize, rollout: &Rollout) -> String {
    match &rollout.payload {
        Payload::Answer(a) => format!(
            "### Candidate {position}\nAnswer: {a}\n{}\n",
            rollout.summary
        ),
        Payload::Program(p) => format!("### Candidate {position}\n```python\n{p}\n```\n"),
        Payload::ParseFailure(reason) => {
            format!("### Candidate {position}\n(unparseable: {reason})\n")
        }
    }
}

fn knowledge_text(knowledge: &KnowledgeList) -> String {
    if knowledge.is_empty() {
        NO_KNOWLEDGE.to_string()
    } else {
        knowledge.render()
    }
}

fn sorted(candidates: &[&Rollout]) -> Vec<Rollout> {
    let mut v: Vec<Rollout> = candidates.iter().map(|r| (*r).clone()).collect();
    v.sort_by_key(|r| r.id);
    v
}

/// Asks the model to order `group`; falls back to the given order.
fn model_order(
    caller: &Caller<'_>,
    key: &RequestKey,
    system: &str,
    preamble: &str,
    group: &[&Rollout],
) -> (Vec<RolloutId>, String) {
    let ids: Vec<RolloutId> = group.iter().map(|r| r.id).collect();
    if group.len() < 2 {
        return (ids, "single candidate".into());
    }
    let mut user = preamble.to_string();
    user.push_str("\n\n## Candidates\n");
    for (i, r) in group.iter().enumerate() {
        user.push_str(&render_candidate(i + 1, r));
        user.push('\n');
    }
    user.push_str(RANKING_FORMAT);
    match caller.call(key, Some(system), user) {
        Ok(resp) => match parse_ranking(&resp.content, group.len()) {
            Some(order) => (
                order.into_iter().map(|i| ids[i]).collect(),
                format!("model ranking via {}", key.purpose),
            ),
            None => {
                warn!(%key, "unparseable ranking; falling back to lowest id order");
                (ids, "fallback: unparseable ranking, lowest id first".into())
            }
        },
        Err(e) => {
            warn!(%key, error = %e, "ranking call failed; falling back to lowest id order");
            (
                ids,
                format!("fallback: ranking call failed ({e}), lowest id first"),
            )
        }
    }
}

fn finish(ranking: Vec<RolloutId>, all: &[Rollout], rationale: String) -> SelectionResult {
    let mut ranking = ranking;
    for r in all {
        if !ranking.contains(&r.id) {
            ranking.push(r.id);
        }
    }
    SelectionResult {
        chosen: ranking[0],
        ranking,
        rationale,
        reports: None,
    }
}

/// Mutual-exclusivity selection for integer answers.
pub fn select_math(
    problem: &ProblemSpec,
    candidates: &[&Rollout],
    knowledge: &KnowledgeList,
    caller: &Caller<'_>,
    round: u32,
) -> Result<SelectionResult, SelectionError> {
    let all = sorted(candidates);
    let rejected = knowledge.rejected_answers();
    let (fresh, demoted): (Vec<&Rollout>, Vec<&Rollout>) = all
        .iter()
        .filter(|r| r.payload.answer().is_some())
        .partition(|r| !rejected.contains(&r.payload.answer().expect("parsed")));
    if fresh.is_empty() && demoted.is_empty() {
        return Err(SelectionError::NoValidCandidate);
    }
    let (group, rest) = if fresh.is_empty() {
        (demoted, Vec::new())
    } else {
        (fresh, demoted)
    };
    let preamble = format!(
        "## Problem\n{}\n\n## Accumulated Knowledge\n{}",
        problem.statement,
        knowledge_text(knowledge)
    );
    let key = RequestKey::new(&problem.id, Purpose::Select, round, 0);
    let (mut ranking, mut rationale) =
        model_order(caller, &key, MATH_SELECT_SYSTEM, &preamble, &group);
    if !rest.is_empty() {
        rationale.push_str(&format!("; {} self-rejected answer(s) demoted", rest.len()));
    }
    ranking.extend(rest.iter().map(|r| r.id));
    Ok(finish(ranking, &all, rationale))
}

/// Execution-ranked selection: most generated tests passed wins, ties go to
/// a model judgment, then to the lowest id.
pub fn select_code(
    problem: &ProblemSpec,
    candidates: &[&Rollout],
    reports: &BTreeMap<RolloutId, ExecutionReport>,
    knowledge: &KnowledgeList,
    caller: &Caller<'_>,
    round: u32,
) -> Result<SelectionResult, SelectionError> {
    let all = sorted(candidates);
    let mut valid: Vec<(&Rollout, usize)> = all
        .iter()
        .filter(|r| r.payload.program().is_some())
        .filter_map(|r| reports.get(&r.id).map(|rep| (r, rep)))
        .filter(|(_, rep)| !rep.failed_everywhere() || rep.results.is_empty())
        .map(|(r, rep)| (r, rep.passed()))
        .collect();
    if valid.is_empty() {
        return Err(SelectionError::NoValidCandidate);
    }
    valid.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.id.cmp(&b.0.id)));
    let best = valid[0].1;
    let top: Vec<&Rollout> = valid
        .iter()
        .filter(|(_, n)| *n == best)
        .map(|(r, _)| *r)
        .collect();
    let preamble = format!(
        "## Problem\n{}\n\n## Accumulated Knowledge\n{}\n\nEach candidate below passed {best} generated test(s).",
        problem.statement,
        knowledge_text(knowledge)
    );
    let key = RequestKey::new(&problem.id, Purpose::Judge, round, 0);
    let (mut ranking, judge_note) = model_order(caller, &key, CODE_JUDGE_SYSTEM, &preamble, &top);
    ranking.extend(valid.iter().filter(|(_, n)| *n < best).map(|(r, _)| r.id));
    let rationale =
        format!("{best} generated test(s) passed by the leader; tie-break: {judge_note}");
    let mut result = finish(ranking, &all, rationale);
    result.reports = Some(
        all.iter()
            .filter_map(|r| reports.get(&r.id).map(|rep| (r.id, rep.clone())))
            .collect(),
    );
    Ok(result)
}

/// Generic model ranking with the knowledge manager's instructions.
pub fn self_rank(
    problem: &ProblemSpec,
    candidates: &[&Rollout],
    knowledge: &KnowledgeList,
    caller: &Caller<'_>,
    round: u32,
) -> Result<SelectionResult, SelectionError> {
    let all = sorted(candidates);
    let valid: Vec<&Rollout> = all.iter().filter(|r| !r.payload.is_failure()).collect();
    if valid.is_empty() {
        return Err(SelectionError::NoValidCandidate);
    }
    let preamble = format!(
        "## Problem\n{}\n\n## Current Knowledge Base\n{}",
        problem.statement,
        knowledge_text(knowledge)
    );
    let key = RequestKey::new(&problem.id, Purpose::Select, round, 0);
    let (ranking, rationale) =
        model_order(caller, &key, KNOWLEDGE_MANAGER_SYSTEM, &preamble, &valid);
    Ok(finish(ranking, &all, rationale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Script, ScriptedBackend};
    use crate::domain::{ProblemKind, Sampling, Usage};
    use crate::sandbox::{TestOutcome, TestResult};
    use proptest::prelude::*;

    fn rollout(round: u32, index: u32, payload: Payload) -> Rollout {
        Rollout {
            id: RolloutId::new(round, index),
            round,
            strategy_id: None,
            raw_output: String::new(),
            payload,
            summary: "s".into(),
            usage: Usage::default(),
        }
    }

    fn math() -> ProblemSpec {
        ProblemSpec::new("m", "Find n.", ProblemKind::MathIntegerAnswer)
    }

    fn run<F>(script: Script, f: F) -> SelectionResult
    where
        F: FnOnce(&Caller<'_>) -> SelectionResult,
    {
        let b = ScriptedBackend::new(script);
        let s = Sampling::default();
        f(&Caller::new(&b, &s, 0))
    }

    #[test]
    fn sole_math_candidate_without_call() {
        let a = rollout(1, 1, Payload::Answer(42));
        let r = run(Script::new(), |c| {
            select_math(&math(), &[&a], &KnowledgeList::new(), c, 1).unwrap()
        });
        assert_eq!(r.chosen, a.id);
    }

    #[test]
    fn rejected_answer_is_demoted() {
        let a = rollout(1, 1, Payload::Answer(17));
        let b = rollout(1, 2, Payload::Answer(42));
        let mut k = KnowledgeList::new();
        k.reject_answer(17);
        let r = run(Script::new(), |c| {
            select_math(&math(), &[&a, &b], &k, c, 1).unwrap()
        });
        assert_eq!(r.chosen, b.id);
        assert_eq!(r.ranking, vec![b.id, a.id]);
    }

    #[test]
    fn all_rejected_still_returns_one() {
        let a = rollout(1, 1, Payload::Answer(17));
        let mut k = KnowledgeList::new();
        k.reject_answer(17);
        let r = run(Script::new(), |c| {
            select_math(&math(), &[&a], &k, c, 1).unwrap()
        });
        assert_eq!(r.chosen, a.id);
    }

    #[test]
    fn all_parse_failures_is_error() {
        let a = rollout(1, 1, Payload::ParseFailure("x".into()));
        let b = ScriptedBackend::new(Script::new());
        let s = Sampling::default();
        let c = Caller::new(&b, &s, 0);
        assert_eq!(
            select_math(&math(), &[&a], &KnowledgeList::new(), &c, 1),
            Err(SelectionError::NoValidCandidate)
        );
        assert_eq!(
            self_rank(&math(), &[&a], &KnowledgeList::new(), &c, 1),
            Err(SelectionError::NoValidCandidate)
        );
    }

    #[test]
    fn self_rank_follows_scripted_ranking_or_falls_back() {
        let cands: Vec<Rollout> = (1..=3)
            .map(|i| rollout(1, i, Payload::Answer(i as u16)))
            .collect();
        let refs: Vec<&Rollout> = cands.iter().collect();
        let key = RequestKey::new("m", Purpose::Select, 1, 0);
        let r = run(Script::new().with(&key, "[RANKING] 2,1,3"), |c| {
            self_rank(&math(), &refs, &KnowledgeList::new(), c, 1).unwrap()
        });
        assert_eq!(r.chosen, cands[1].id);
        let r = run(Script::new().with(&key, "I like them all"), |c| {
            self_rank(&math(), &refs, &KnowledgeList::new(), c, 1).unwrap()
        });
        assert_eq!(r.ranking, vec![cands[0].id, cands[1].id, cands[2].id]);
        assert!(r.rationale.starts_with("fallback"));
    }

    fn report(id: RolloutId, pass: usize, fail: usize) -> ExecutionReport {
        let mut results = Vec::new();
        for i in 0..pass + fail {
            results.push(TestResult {
                test_id: format!("t{i}"),
                outcome: if i < pass {
                    TestOutcome::Pass
                } else {
                    TestOutcome::WrongOutput
                },
                stdout: String::new(),
                stderr: String::new(),
                wall_time_ms: 0,
            });
        }
        ExecutionReport {
            rollout_id: id,
            results,
        }
    }

    fn code() -> ProblemSpec {
        ProblemSpec::new("c", "Print.", ProblemKind::CodeGeneration)
    }

    #[test]
    fn code_count_ordering_and_judge_tie() {
        let a = rollout(1, 1, Payload::Program("a".into()));
        let b = rollout(1, 2, Payload::Program("b".into()));
        let reports: BTreeMap<_, _> =
            [(a.id, report(a.id, 5, 0)), (b.id, report(b.id, 3, 2))].into();
        let r = run(Script::new(), |c| {
            select_code(&code(), &[&a, &b], &reports, &KnowledgeList::new(), c, 1).unwrap()
        });
        assert_eq!(r.chosen, a.id);
        assert!(r.reports.is_some());

        let tied: BTreeMap<_, _> = [(a.id, report(a.id, 5, 0)), (b.id, report(b.id, 5, 0))].into();
        let key = RequestKey::new("c", Purpose::Judge, 1, 0);
        let r = run(Script::new().with(&key, "[RANKING] 2, 1"), |c| {
            select_code(&code(), &[&a, &b], &tied, &KnowledgeList::new(), c, 1).unwrap()
        });
        assert_eq!(r.chosen, b.id);
        let r = run(Script::new(), |c| {
            select_code(&code(), &[&a, &b], &tied, &KnowledgeList::new(), c, 1).unwrap()
        });
        assert_eq!(r.chosen, a.id);
    }

    proptest! {
        #[test]
        fn code_ranking_is_permutation_with_count_dominance(
            passes in proptest::collection::vec(0usize..6, 1..6),
            judge in "[0-9, ]{0,12}",
        ) {
            let cands: Vec<Rollout> = passes
                .iter()
                .enumerate()
                .map(|(i, _)| rollout(2, i as u32 + 1, Payload::Program(format!("p{i}"))))
                .collect();
            let reports: BTreeMap<_, _> = cands
                .iter()
                .zip(&passes)
                .map(|(r, &p)| (r.id, report(r.id, p, 5 - p.min(5))))
                .collect();
            let refs: Vec<&Rollout> = cands.iter().collect();
            let key = RequestKey::new("c", Purpose::Judge, 2, 0);
            let script = Script::new().with(&key, format!("[RANKING] {judge}"));
            let b = ScriptedBackend::new(script);
            let s = Sampling::default();
            let c = Caller::new(&b, &s, 0);
            match select_code(&code(), &refs, &reports, &KnowledgeList::new(), &c, 2) {
                Ok(r) => {
                    let mut sorted_rank = r.ranking.clone();
                    sorted_rank.sort();
                    let mut ids: Vec<_> = cands.iter().map(|c| c.id).collect();
                    ids.sort();
                    prop_assert_eq!(sorted_rank, ids);
                    prop_assert_eq!(r.chosen, r.ranking[0]);
                    let max = *passes.iter().max().unwrap();
                    if passes.iter().filter(|&&p| p == max).count() == 1 {
                        let i = passes.iter().position(|&p| p == max).unwrap();
                        prop_assert_eq!(r.chosen, cands[i].id);
                    }
                }
                Err(SelectionError::NoValidCandidate) => {
                    prop_assert!(passes.iter().all(|&p| p == 0));
                }
            }
        }

        #[test]
        fn math_demotion_soundness(
            answers in proptest::collection::vec(0u16..6, 1..6),
            rejected in proptest::collection::btree_set(0u16..6, 0..4),
            judge in "[0-9, ]{0,12}",
        ) {
            let cands: Vec<Rollout> = answers
                .iter()
                .enumerate()
                .map(|(i, &a)| rollout(1, i as u32 + 1, Payload::Answer(a)))
                .collect();
            let refs: Vec<&Rollout> = cands.iter().collect();
            let mut k = KnowledgeList::new();
            for a in &rejected {
                k.reject_answer(*a);
            }
            let key = RequestKey::new("m", Purpose::Select, 1, 0);
            let b = ScriptedBackend::new(Script::new().with(&key, format!("[RANKING] {judge}")));
            let s = Sampling::default();
            let r = select_math(&math(), &refs, &k, &Caller::new(&b, &s, 0), 1).unwrap();
            let chosen = cands.iter().find(|c| c.id == r.chosen).unwrap();
            if answers.iter().any(|a| !rejected.contains(a)) {
                prop_assert!(!rejected.contains(&chosen.payload.answer().unwrap()));
            }
            prop_assert_eq!(r.ranking.len(), cands.len());
        }
    }
}
