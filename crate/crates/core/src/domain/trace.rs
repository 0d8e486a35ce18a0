//! Append-only run record and its JSONL encoding.
//!
//! A trace file is one header object followed by one [`RoundRecord`] per
//! line. Baseline runs reuse the same header with `baseline` set and write
//! [`BaselineIteration`] lines instead.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    token_proxy, KnowledgeEntry, KnowledgeError, KnowledgeList, Mode, ProblemKind, PruneReason,
    Pruning, Rollout, RolloutId, SelectionResult, Strategy,
};
use crate::sandbox::GeneratedTest;

pub const TRACE_SCHEMA: &str = "trt-trace/1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("unsupported trace schema `{0}`")]
    Schema(String),
    #[error("trace has no header line")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Parallel,
    Rsa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub problem_id: String,
    pub problem_kind: ProblemKind,
    pub config_fingerprint: String,
    pub rounds_planned: u32,
    pub rollouts_per_round: u32,
    pub context_window_budget: u64,
    pub knowledge_cap_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineKind>,
}

impl TraceHeader {
    /// Largest rendered knowledge size allowed, in proxy tokens.
    pub fn knowledge_cap_tokens(&self) -> usize {
        (self.knowledge_cap_fraction * self.context_window_budget as f64).floor() as usize
    }
}

/// Everything that happened in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub mode: Mode,
    pub strategies: Vec<Strategy>,
    pub rollouts: Vec<Rollout>,
    /// `None` only when no candidate in the pool could be parsed.
    pub selection: Option<SelectionResult>,
    pub insights_added: Vec<KnowledgeEntry>,
    pub pruned: Vec<Pruning>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_added: Vec<u16>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tests_added: Vec<GeneratedTest>,
    pub knowledge_snapshot: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RoundRecord {
    pub fn reflective_prunings(&self) -> usize {
        self.pruned
            .iter()
            .filter(|p| p.reason == PruneReason::Reflective)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub rounds: Vec<RoundRecord>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header,
            rounds: Vec::new(),
        }
    }

    pub fn problem_id(&self) -> &str {
        &self.header.problem_id
    }

    pub fn last_round(&self) -> u32 {
        self.rounds.last().map_or(0, |r| r.round)
    }

    pub fn is_complete(&self) -> bool {
        self.last_round() >= self.header.rounds_planned
    }

    pub fn round(&self, t: u32) -> Option<&RoundRecord> {
        self.rounds.iter().find(|r| r.round == t)
    }

    /// All rollouts ever generated, in generation order.
    pub fn solution_pool(&self) -> Vec<RolloutId> {
        self.rounds
            .iter()
            .flat_map(|r| r.rollouts.iter().map(|x| x.id))
            .collect()
    }

    pub fn rollout(&self, id: RolloutId) -> Option<&Rollout> {
        self.rounds
            .iter()
            .flat_map(|r| r.rollouts.iter())
            .find(|x| x.id == id)
    }

    /// The rollout selected in round `t`, if that round produced a selection.
    pub fn selected(&self, t: u32) -> Option<&Rollout> {
        let chosen = self.round(t)?.selection.as_ref()?.chosen;
        self.rollout(chosen)
    }

    /// Most recent selection at or before round `t`.
    pub fn best_up_to(&self, t: u32) -> Option<&Rollout> {
        (1..=t).rev().find_map(|r| self.selected(r))
    }

    /// Rebuilds the knowledge list by replaying every round.
    pub fn knowledge(&self) -> Result<KnowledgeList, KnowledgeError> {
        let mut k = KnowledgeList::new();
        for r in &self.rounds {
            k.replay(r)?;
        }
        Ok(k)
    }

    pub fn header_line(&self) -> String {
        serde_json::to_string(&self.header).expect("header serializes")
    }

    pub fn round_line(record: &RoundRecord) -> String {
        serde_json::to_string(record).expect("round record serializes")
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for r in &self.rounds {
            out.push_str(&Self::round_line(r));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let (header, rounds) = parse_jsonl(text)?;
        Ok(Self { header, rounds })
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<(TraceHeader, Vec<T>), TraceError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(TraceError::Empty)?;
    let header: TraceHeader =
        serde_json::from_str(first).map_err(|source| TraceError::Parse { line: 1, source })?;
    if header.schema != TRACE_SCHEMA {
        return Err(TraceError::Schema(header.schema));
    }
    let mut body = Vec::new();
    for (i, line) in lines {
        body.push(
            serde_json::from_str(line).map_err(|source| TraceError::Parse {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok((header, body))
}

/// One iteration of a baseline run (a single line for parallel sampling).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineIteration {
    pub iteration: u32,
    /// Generation calls issued in this iteration, including failed ones.
    pub generation_calls: u32,
    pub rollouts: Vec<Rollout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub header: TraceHeader,
    pub iterations: Vec<BaselineIteration>,
}

impl BaselineRecord {
    pub fn generation_calls(&self) -> u64 {
        self.iterations
            .iter()
            .map(|i| u64::from(i.generation_calls))
            .sum()
    }

    /// All rollouts in generation order.
    pub fn rollouts(&self) -> impl Iterator<Item = &Rollout> {
        self.iterations.iter().flat_map(|i| i.rollouts.iter())
    }

    /// The rollout the baseline finally reports, if any.
    pub fn final_rollout(&self) -> Option<&Rollout> {
        let last = self.iterations.last()?;
        let chosen = last.selection.as_ref()?.chosen;
        last.rollouts.iter().find(|r| r.id == chosen)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for it in &self.iterations {
            out.push_str(&serde_json::to_string(it).expect("iteration serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let (header, iterations) = parse_jsonl(text)?;
        Ok(Self { header, iterations })
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

/// Checks every structural invariant of a loop trace. Violations are
/// returned as human-readable strings; an empty list means the trace is
/// well formed.
pub fn validate_trace(trace: &Trace) -> Vec<String> {
    let mut v = Vec::new();
    let h = &trace.header;
    if h.schema != TRACE_SCHEMA {
        v.push(format!("unsupported schema `{}`", h.schema));
    }
    let k = h.rollouts_per_round as usize;
    let cap = h.knowledge_cap_tokens();

    let mut prev: Option<u32> = None;
    let mut seen_rollouts = BTreeSet::new();
    let mut pool: Vec<&Rollout> = Vec::new();
    let mut knowledge = KnowledgeList::new();

    for r in &trace.rounds {
        let t = r.round;
        match prev {
            None if t != 1 => v.push(format!("first round is {t}, expected 1")),
            Some(p) if t == p + 1 => {}
            Some(p) if t > p + 1 => v.push(format!("gap after round {p}")),
            Some(p) => v.push(format!("round {t} does not follow round {p}")),
            _ => {}
        }
        prev = Some(t);

        if r.strategies.len() != k || r.rollouts.len() != k {
            v.push(format!(
                "round {t}: {} strategies and {} rollouts, expected K={k}",
                r.strategies.len(),
                r.rollouts.len()
            ));
        }
        let distinct: BTreeSet<&str> = r.strategies.iter().map(|s| s.text.as_str()).collect();
        if distinct.len() != r.strategies.len() {
            v.push(format!(
                "round {t}: strategy texts are not pairwise distinct"
            ));
        }
        for x in &r.rollouts {
            if x.round != t || x.id.round != t {
                v.push(format!(
                    "round {t}: rollout {} belongs to another round",
                    x.id
                ));
            }
            if !seen_rollouts.insert(x.id) {
                v.push(format!("round {t}: rollout id {} reused", x.id));
            }
            if !x.payload.matches_kind(h.problem_kind) {
                v.push(format!(
                    "round {t}: rollout {} payload does not match problem kind",
                    x.id
                ));
            }
        }
        pool.extend(r.rollouts.iter());

        if let Some(sel) = &r.selection {
            if sel.ranking.first() != Some(&sel.chosen) {
                v.push(format!(
                    "round {t}: chosen {} is not first in ranking",
                    sel.chosen
                ));
            }
            match pool.iter().find(|x| x.id == sel.chosen) {
                None => v.push(format!(
                    "round {t}: chosen {} is not in the pool",
                    sel.chosen
                )),
                Some(x) if x.payload.is_failure() => v.push(format!(
                    "round {t}: chosen {} is a parse failure",
                    sel.chosen
                )),
                Some(_) => {}
            }
            let uniq: BTreeSet<_> = sel.ranking.iter().collect();
            if uniq.len() != sel.ranking.len() {
                v.push(format!("round {t}: ranking repeats a candidate"));
            }
            if sel
                .ranking
                .iter()
                .any(|id| !pool.iter().any(|x| x.id == *id))
            {
                v.push(format!(
                    "round {t}: ranking references a rollout outside the pool"
                ));
            }
        }

        let reflective = r.reflective_prunings();
        if reflective > 1 {
            v.push(format!("round {t}: {reflective} prunings > 1"));
        }
        if let Err(e) = knowledge.replay(r) {
            v.push(format!("round {t}: {e}"));
        } else if knowledge.render() != r.knowledge_snapshot {
            v.push(format!(
                "round {t}: knowledge snapshot does not match the replayed list"
            ));
        }
        let used = token_proxy(&r.knowledge_snapshot);
        if used > cap {
            v.push(format!(
                "round {t}: knowledge uses {used} tokens, cap is {cap}"
            ));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EntryId, Payload, Usage};

    fn header(k: u32) -> TraceHeader {
        TraceHeader {
            schema: TRACE_SCHEMA.into(),
            problem_id: "p".into(),
            problem_kind: ProblemKind::MathIntegerAnswer,
            config_fingerprint: "f".into(),
            rounds_planned: 3,
            rollouts_per_round: k,
            context_window_budget: 128_000,
            knowledge_cap_fraction: 0.05,
            baseline: None,
        }
    }

    fn round(t: u32, knowledge: &mut KnowledgeList, insights: &[&str]) -> RoundRecord {
        let rollout = Rollout {
            id: RolloutId::new(t, 1),
            round: t,
            strategy_id: Some(format!("s{t}.1")),
            raw_output: "\\boxed{1}".into(),
            payload: Payload::Answer(1),
            summary: String::new(),
            usage: Usage::default(),
        };
        let added: Vec<_> = insights.iter().map(|s| knowledge.add(*s, t)).collect();
        RoundRecord {
            round: t,
            mode: Mode::Edit,
            strategies: vec![Strategy::new(t, 1, "direct")],
            rollouts: vec![rollout],
            selection: Some(SelectionResult {
                chosen: RolloutId::new(t, 1),
                ranking: vec![RolloutId::new(t, 1)],
                rationale: String::new(),
                reports: None,
            }),
            insights_added: added,
            pruned: vec![],
            rejected_added: vec![],
            tests_added: vec![],
            knowledge_snapshot: knowledge.render(),
            notes: vec![],
        }
    }

    #[test]
    fn well_formed_trace_has_no_violations() {
        let mut k = KnowledgeList::new();
        let mut trace = Trace::new(header(1));
        trace.rounds.push(round(1, &mut k, &["don't a"]));
        trace.rounds.push(round(2, &mut k, &["don't b"]));
        assert_eq!(validate_trace(&trace), Vec::<String>::new());

        let back = Trace::from_jsonl(&trace.to_jsonl()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn double_pruning_is_reported() {
        let mut k = KnowledgeList::new();
        let mut trace = Trace::new(header(1));
        trace.rounds.push(round(1, &mut k, &["a", "b"]));
        trace.rounds.push(round(2, &mut k, &["c"]));
        let mut r3 = round(3, &mut k, &[]);
        for id in [EntryId(1), EntryId(2)] {
            k.prune(id, 3, PruneReason::Reflective).unwrap();
            r3.pruned.push(Pruning {
                entry: id,
                reason: PruneReason::Reflective,
            });
        }
        r3.knowledge_snapshot = k.render();
        trace.rounds.push(r3);
        assert_eq!(validate_trace(&trace), vec!["round 3: 2 prunings > 1"]);
    }

    #[test]
    fn cap_enforcement_prunings_do_not_count() {
        let mut k = KnowledgeList::new();
        let mut trace = Trace::new(header(1));
        trace.rounds.push(round(1, &mut k, &["a", "b"]));
        let mut r2 = round(2, &mut k, &[]);
        for (id, reason) in [
            (EntryId(1), PruneReason::Reflective),
            (EntryId(2), PruneReason::CapEnforcement),
        ] {
            k.prune(id, 2, reason).unwrap();
            r2.pruned.push(Pruning { entry: id, reason });
        }
        r2.knowledge_snapshot = k.render();
        trace.rounds.push(r2);
        assert!(validate_trace(&trace).is_empty());
    }

    #[test]
    fn round_gap_is_reported() {
        let mut k = KnowledgeList::new();
        let mut trace = Trace::new(header(1));
        trace.rounds.push(round(1, &mut k, &[]));
        trace.rounds.push(round(3, &mut k, &[]));
        assert_eq!(validate_trace(&trace), vec!["gap after round 1"]);
    }

    #[test]
    fn parse_failure_selection_and_wrong_k_are_reported() {
        let mut k = KnowledgeList::new();
        let mut trace = Trace::new(header(2));
        let mut r = round(1, &mut k, &[]);
        r.rollouts[0].payload = Payload::ParseFailure("no boxed integer".into());
        trace.rounds.push(r);
        let v = validate_trace(&trace);
        assert!(v.iter().any(|m| m.contains("expected K=2")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("parse failure")), "{v:?}");
    }

    #[test]
    fn wrong_schema_is_rejected_on_load() {
        let mut h = header(1);
        h.schema = "trt-trace/0".into();
        let text = serde_json::to_string(&h).unwrap();
        assert!(matches!(
            Trace::from_jsonl(&text),
            Err(TraceError::Schema(_))
        ));
        assert!(matches!(Trace::from_jsonl(""), Err(TraceError::Empty)));
    }
}
