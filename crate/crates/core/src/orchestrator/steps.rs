use std::collections::BTreeSet;

use tracing::warn;

use crate::backend::parse::{items_with_tag, parse_code_output, parse_math_output, section};
use crate::backend::prompts::{
    render_prompt, Bindings, PromptTemplate, NO_KNOWLEDGE, NO_REFERENCE, REFLECT_FORMAT,
    STRATEGY_SYSTEM,
};
use crate::backend::{BackendError, Caller, Purpose, RequestKey};
use crate::domain::{
    EntryId, KnowledgeEntry, KnowledgeList, Mode, Payload, ProblemKind, ProblemSpec, PruneReason,
    Pruning, Rollout, RolloutId, Strategy,
};
use crate::sandbox::ExecutionReport;
use crate::similarity::SoftTfIdf;

const WHY_WRONG: &str = "Why the reference solution is wrong?";

fn knowledge_text(knowledge: &KnowledgeList) -> String {
    if knowledge.is_empty() {
        NO_KNOWLEDGE.to_string()
    } else {
        knowledge.render()
    }
}

fn list_items(raw: &str) -> Vec<String> {
    let tagged = items_with_tag(raw, "STRATEGY");
    if !tagged.is_empty() {
        return tagged;
    }
    raw.lines()
        .map(str::trim)
        .filter_map(|l| {
            let rest = l
                .strip_prefix("- ")
                .or_else(|| l.strip_prefix("* "))
                .or_else(|| {
                    let digits = l.find(|c: char| !c.is_ascii_digit())?;
                    (digits > 0)
                        .then(|| {
                            l[digits..]
                                .strip_prefix(". ")
                                .or(l[digits..].strip_prefix(") "))
                        })
                        .flatten()
                })?;
            let rest = rest.trim();
            (!rest.is_empty()).then(|| rest.to_string())
        })
        .collect()
}

fn first_distinct(items: &[String], k: usize) -> Option<Vec<String>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for it in items {
        if !seen.insert(it.trim().to_lowercase()) {
            return None;
        }
        out.push(it.trim().to_string());
        if out.len() == k {
            return Some(out);
        }
    }
    None
}

/// Makes `items` exactly `k` long and pairwise distinct: pads with generic
/// directives, then suffixes repeats with a variation index.
fn disambiguate(mut items: Vec<String>, k: usize) -> Vec<String> {
    items.truncate(k);
    while items.len() < k {
        items.push(format!("Independent attempt {}", items.len() + 1));
    }
    let mut seen = BTreeSet::new();
    items
        .into_iter()
        .map(|text| {
            let mut candidate = text.clone();
            let mut n = 1;
            while !seen.insert(candidate.to_lowercase()) {
                n += 1;
                candidate = format!("{text} (variation {n})");
            }
            candidate
        })
        .collect()
}

/// Designs `k` complementary strategies for round `round`.
///
/// Duplicate or missing texts trigger one retry; whatever is still
/// duplicated afterwards is disambiguated with a variation suffix.
pub fn design_strategies(
    problem: &ProblemSpec,
    knowledge: &KnowledgeList,
    k: u32,
    caller: &Caller<'_>,
    round: u32,
) -> Result<Vec<Strategy>, BackendError> {
    let k_us = k as usize;
    let user = format!(
        "## Problem\n{}\n\n## Accumulated Knowledge\n{}\n\n\
         Propose exactly {k} complementary strategies for attempt round {round}. \
         Avoid approaches the knowledge list shows have failed. \
         Write one per line, each starting with [STRATEGY].",
        problem.statement,
        knowledge_text(knowledge)
    );
    let mut last = Vec::new();
    let mut texts = None;
    for attempt in 0..2 {
        let key = RequestKey::new(&problem.id, Purpose::Strategy, round, attempt);
        let reply = caller.call(&key, Some(STRATEGY_SYSTEM), user.clone())?;
        let items = list_items(&reply.content);
        if let Some(ok) = first_distinct(&items, k_us) {
            texts = Some(ok);
            break;
        }
        warn!(problem = %problem.id, round, attempt, "strategy reply had duplicates or too few items");
        last = items;
    }
    let texts = texts.unwrap_or_else(|| disambiguate(last, k_us));
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| Strategy::new(round, i as u32 + 1, t))
        .collect())
}

/// Text bound to `reference_solution` for a prior best rollout.
pub fn reference_text(kind: ProblemKind, prior: &Rollout) -> String {
    match (kind, &prior.payload) {
        (ProblemKind::CodeGeneration, Payload::Program(p)) => format!("```python\n{p}\n```"),
        _ => prior.summary.clone(),
    }
}

/// Generates one rollout under `strategy`.
///
/// Round one (and any round without a prior best in math) uses the initial
/// math template. Edit mode binds the prior best as the reference solution;
/// Regenerate binds the "N/A" sentinel.
#[allow(clippy::too_many_arguments)]
pub fn generate_rollout(
    problem: &ProblemSpec,
    knowledge: &KnowledgeList,
    strategy: &Strategy,
    prior_best: Option<&Rollout>,
    mode: Mode,
    caller: &Caller<'_>,
) -> Result<Rollout, BackendError> {
    let round = strategy.round;
    let index = strategy.rollout_index;
    let reference = match (mode, prior_best) {
        (Mode::Edit, Some(p)) => reference_text(problem.kind, p),
        _ => NO_REFERENCE.to_string(),
    };
    let bindings = Bindings::new()
        .problem(&problem.statement)
        .knowledge(knowledge_text(knowledge))
        .reference(reference)
        .strategy(&strategy.text);
    let template = match problem.kind {
        ProblemKind::CodeGeneration => PromptTemplate::SolverCode,
        ProblemKind::MathIntegerAnswer if round == 1 => PromptTemplate::AimeInitial,
        ProblemKind::MathIntegerAnswer => PromptTemplate::AimeIterative,
    };
    let prompt = render_prompt(template, &bindings).expect("all placeholders bound");
    let key = RequestKey::new(&problem.id, Purpose::Solve, round, index);
    let resp = caller.call(&key, prompt.system.as_deref(), prompt.user)?;
    let (payload, summary) = match problem.kind {
        ProblemKind::MathIntegerAnswer => match parse_math_output(&resp.content) {
            Ok(m) => (Payload::Answer(m.answer), m.summary),
            Err(f) => (Payload::ParseFailure(f.0), resp.content.trim().to_string()),
        },
        ProblemKind::CodeGeneration => match parse_code_output(&resp.content) {
            Ok(p) => (Payload::Program(p), String::new()),
            Err(f) => (Payload::ParseFailure(f.0), String::new()),
        },
    };
    Ok(Rollout {
        id: RolloutId::new(round, index),
        round,
        strategy_id: Some(strategy.id.clone()),
        raw_output: resp.content,
        payload,
        summary,
        usage: resp.usage,
    })
}

/// Proposals from reflection, before deduplication and bounds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reflection {
    pub insights: Vec<String>,
    pub prune: Option<EntryId>,
    pub rejected_answers: Vec<u16>,
    pub notes: Vec<String>,
}

fn render_solution(header: &str, r: &Rollout, report: Option<&ExecutionReport>) -> String {
    let mut out = format!("### {header}\n");
    match &r.payload {
        Payload::Answer(a) => out.push_str(&format!("Answer: {a}\n{}\n", r.summary)),
        Payload::Program(p) => out.push_str(&format!("```python\n{p}\n```\n")),
        Payload::ParseFailure(reason) => {
            out.push_str(&format!("(unparseable: {reason})\n{}\n", r.raw_output))
        }
    }
    if let Some(rep) = report {
        out.push_str(&format!(
            "Generated tests passed: {}/{}\n",
            rep.passed(),
            rep.results.len()
        ));
    }
    out
}

/// Contrasts every non-selected rollout of the round with r*.
///
/// A failed call contributes nothing and is noted; only the first valid
/// prune proposal (an id that is currently Active) is kept.
pub fn reflect(
    problem: &ProblemSpec,
    round_rollouts: &[Rollout],
    chosen: &Rollout,
    reports: Option<&std::collections::BTreeMap<RolloutId, ExecutionReport>>,
    knowledge: &KnowledgeList,
    caller: &Caller<'_>,
) -> Reflection {
    let mut out = Reflection::default();
    let losers: Vec<&Rollout> = round_rollouts
        .iter()
        .filter(|r| r.id != chosen.id)
        .collect();
    let report_of = |id: RolloutId| reports.and_then(|m| m.get(&id));
    for loser in losers {
        let user = format!(
            "## Problem\n{}\n\n## Current Knowledge Base\n{}\n\n{}\n{}\n\
             Compare the alternative solution against the selected one. Record what the \
             alternative got wrong as negative constraints (what NOT to do).\n\n{REFLECT_FORMAT}",
            problem.statement,
            knowledge_text(knowledge),
            render_solution("Selected Solution", chosen, report_of(chosen.id)),
            render_solution("Alternative Solution", loser, report_of(loser.id)),
        );
        let key = RequestKey::new(&problem.id, Purpose::Reflect, loser.round, loser.id.index);
        let system = PromptTemplate::KnowledgeManager.system();
        match caller.call(&key, system, user) {
            Ok(resp) => {
                out.insights
                    .extend(items_with_tag(&resp.content, "INSIGHT"));
                for p in items_with_tag(&resp.content, "PRUNE") {
                    let Ok(id) = p.split_whitespace().next().unwrap_or("").parse::<EntryId>()
                    else {
                        continue;
                    };
                    let active = knowledge
                        .get(id)
                        .is_some_and(|e| e.status == crate::domain::EntryStatus::Active);
                    match (active, out.prune) {
                        (true, None) => out.prune = Some(id),
                        (true, Some(_)) => out
                            .notes
                            .push(format!("prune proposal {id} ignored: one prune per round")),
                        (false, _) => out
                            .notes
                            .push(format!("prune proposal {id} ignored: not active")),
                    }
                }
                if problem.kind == ProblemKind::MathIntegerAnswer {
                    for a in items_with_tag(&resp.content, "REJECTED_ANSWER") {
                        if let Ok(v) = a.trim().trim_end_matches('.').parse::<u16>() {
                            if v <= 999 {
                                out.rejected_answers.push(v);
                            }
                        }
                    }
                }
            }
            Err(e) => {
                warn!(problem = %problem.id, %key, error = %e, "reflection failed; no insights from this comparison");
                out.notes
                    .push(format!("reflection on {} failed: {e}", loser.id));
            }
        }
    }
    out
}

/// When r* overturns the prior best in math, its critique of the reference
/// becomes an insight naming the rejected answer.
pub fn overturn_insight(chosen: &Rollout, prior_best: Option<&Rollout>) -> Option<String> {
    let prior = prior_best?;
    let (Some(new), Some(old)) = (chosen.payload.answer(), prior.payload.answer()) else {
        return None;
    };
    if new == old || chosen.id == prior.id {
        return None;
    }
    let why = section(&chosen.raw_output, WHY_WRONG)?;
    let why = why.split_whitespace().collect::<Vec<_>>().join(" ");
    let trimmed = why.trim_end_matches('.');
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("n/a") {
        return None;
    }
    Some(format!("Answer {old} is wrong: {trimmed}."))
}

/// Result of [`update_knowledge`], as recorded in the round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeUpdate {
    pub added: Vec<KnowledgeEntry>,
    pub pruned: Vec<Pruning>,
    pub rejected_added: Vec<u16>,
    pub dropped_duplicates: Vec<String>,
}

/// Applies one round of knowledge changes: appends non-duplicate insights,
/// applies at most one reflective prune, records rejected answers, then
/// evicts the oldest entries while the rendered list exceeds `cap_tokens`.
pub fn update_knowledge(
    knowledge: &mut KnowledgeList,
    insights: &[String],
    prune: Option<EntryId>,
    rejected: &[u16],
    round: u32,
    dedup_threshold: f64,
    cap_tokens: usize,
) -> KnowledgeUpdate {
    let mut up = KnowledgeUpdate::default();
    let existing: Vec<String> = knowledge.active().map(|e| e.text.clone()).collect();
    let model = SoftTfIdf::new(existing.iter().chain(insights.iter()));
    let mut accepted: Vec<String> = Vec::new();
    for text in insights {
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let dup = existing
            .iter()
            .chain(accepted.iter())
            .any(|e| model.similarity(e, text) >= dedup_threshold);
        if dup {
            up.dropped_duplicates.push(text.to_string());
            continue;
        }
        accepted.push(text.to_string());
    }
    for text in accepted {
        up.added.push(knowledge.add(text, round));
    }
    if let Some(id) = prune {
        if knowledge.prune(id, round, PruneReason::Reflective).is_ok() {
            up.pruned.push(Pruning {
                entry: id,
                reason: PruneReason::Reflective,
            });
        }
    }
    let mut seen = BTreeSet::new();
    for &a in rejected {
        if seen.insert(a) && knowledge.reject_answer(a) {
            up.rejected_added.push(a);
        }
    }
    for id in knowledge.enforce_cap(cap_tokens, round) {
        up.pruned.push(Pruning {
            entry: id,
            reason: PruneReason::CapEnforcement,
        });
    }
    up
}
