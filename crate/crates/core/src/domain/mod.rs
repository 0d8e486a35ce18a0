//! Core value types shared by every stage of the loop.
//!
//! Everything here is an immutable value once built. Ground truth is
//! deliberately absent: evaluation records belong to the metrics module
//! and never flow into the orchestrator, the selectors or the backends.

mod config;
mod knowledge;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use config::{
    BackendConfig, BaselineConfig, LiveSettings, PoolScope, RunConfig, Sampling, SandboxSettings,
    SelectorKind, SyntheticSettings,
};
pub use knowledge::{token_proxy, KnowledgeError, KnowledgeList};
pub use trace::{
    validate_trace, BaselineIteration, BaselineKind, BaselineRecord, RoundRecord, Trace,
    TraceError, TraceHeader, TRACE_SCHEMA,
};

use crate::sandbox::ExecutionReport;

/// Default context window assumed when a problem does not state one.
pub const DEFAULT_CONTEXT_BUDGET: u64 = 128_000;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("problem `{0}`: statement is empty")]
    EmptyStatement(String),
    #[error("duplicate problem id `{0}`")]
    DuplicateProblem(String),
    #[error("problem id is empty")]
    EmptyId,
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[serde(alias = "math")]
    MathIntegerAnswer,
    #[serde(alias = "code")]
    CodeGeneration,
}

/// One task instance as the loop sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: String,
    pub statement: String,
    pub kind: ProblemKind,
    #[serde(default = "default_budget")]
    pub context_window_budget: u64,
}

fn default_budget() -> u64 {
    DEFAULT_CONTEXT_BUDGET
}

impl ProblemSpec {
    pub fn new(id: impl Into<String>, statement: impl Into<String>, kind: ProblemKind) -> Self {
        Self {
            id: id.into(),
            statement: statement.into(),
            kind,
            context_window_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.id.trim().is_empty() {
            return Err(DomainError::EmptyId);
        }
        if self.statement.trim().is_empty() {
            return Err(DomainError::EmptyStatement(self.id.clone()));
        }
        Ok(())
    }
}

/// Parses a problems file (JSONL of `{id, statement, kind}`), enforcing id
/// uniqueness and non-empty statements.
pub fn parse_problems(text: &str, origin: &str) -> Result<Vec<ProblemSpec>, DomainError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let problem: ProblemSpec =
            serde_json::from_str(line).map_err(|source| DomainError::Parse {
                path: origin.to_string(),
                line: i + 1,
                source,
            })?;
        problem.validate()?;
        if !seen.insert(problem.id.clone()) {
            return Err(DomainError::DuplicateProblem(problem.id));
        }
        out.push(problem);
    }
    Ok(out)
}

pub fn load_problems(path: &Path) -> Result<Vec<ProblemSpec>, DomainError> {
    let text = std::fs::read_to_string(path)?;
    parse_problems(&text, &path.display().to_string())
}

/// Rollout identity: round number and 1-based slot within the round.
///
/// Ordering is by `(round, index)`, which is the "lowest id" used for every
/// deterministic tiebreak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RolloutId {
    pub round: u32,
    pub index: u32,
}

impl RolloutId {
    pub fn new(round: u32, index: u32) -> Self {
        Self { round, index }
    }
}

impl fmt::Display for RolloutId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}.{}", self.round, self.index)
    }
}

impl FromStr for RolloutId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s
            .strip_prefix('r')
            .ok_or_else(|| format!("bad rollout id `{s}`"))?;
        let (round, index) = rest
            .split_once('.')
            .ok_or_else(|| format!("bad rollout id `{s}`"))?;
        Ok(Self {
            round: round.parse().map_err(|_| format!("bad rollout id `{s}`"))?,
            index: index.parse().map_err(|_| format!("bad rollout id `{s}`"))?,
        })
    }
}

impl Serialize for RolloutId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RolloutId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Knowledge entry id. Never reused within a list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryId(pub u32);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

impl FromStr for EntryId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().trim_start_matches('[').trim_end_matches(']');
        let digits = s
            .strip_prefix('k')
            .or_else(|| s.strip_prefix('K'))
            .unwrap_or(s);
        digits
            .parse()
            .map(EntryId)
            .map_err(|_| format!("bad knowledge entry id `{s}`"))
    }
}

/// Exploration directive for one rollout slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strategy {
    pub id: String,
    pub round: u32,
    pub rollout_index: u32,
    pub text: String,
}

impl Strategy {
    pub fn new(round: u32, rollout_index: u32, text: impl Into<String>) -> Self {
        Self {
            id: format!("s{round}.{rollout_index}"),
            round,
            rollout_index,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a rollout produced once parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Payload {
    Answer(u16),
    Program(String),
    ParseFailure(String),
}

impl Payload {
    pub fn is_failure(&self) -> bool {
        matches!(self, Payload::ParseFailure(_))
    }

    pub fn answer(&self) -> Option<u16> {
        match self {
            Payload::Answer(a) => Some(*a),
            _ => None,
        }
    }

    pub fn program(&self) -> Option<&str> {
        match self {
            Payload::Program(p) => Some(p),
            _ => None,
        }
    }

    /// Whether this payload shape belongs to problems of `kind`. Parse
    /// failures are valid for either kind.
    pub fn matches_kind(&self, kind: ProblemKind) -> bool {
        match self {
            Payload::Answer(_) => kind == ProblemKind::MathIntegerAnswer,
            Payload::Program(_) => kind == ProblemKind::CodeGeneration,
            Payload::ParseFailure(_) => true,
        }
    }
}

/// One candidate solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rollout {
    pub id: RolloutId,
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy_id: Option<String>,
    pub raw_output: String,
    pub payload: Payload,
    /// `[Summary]` section for math; the program source for code.
    pub summary: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Performance,
    EdgeCases,
    Indexing,
    BugFixes,
    IOFormat,
    Algorithmic,
    Numerical,
    Other,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Performance,
        Category::EdgeCases,
        Category::Indexing,
        Category::BugFixes,
        Category::IOFormat,
        Category::Algorithmic,
        Category::Numerical,
        Category::Other,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Active,
    Pruned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneReason {
    /// Proposed by the reflection step; at most one per round.
    Reflective,
    /// Oldest-first eviction to keep the rendered list under its token cap.
    CapEnforcement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: EntryId,
    pub text: String,
    pub round_added: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    pub status: EntryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruned_in_round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_reason: Option<PruneReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pruning {
    pub entry: EntryId,
    pub reason: PruneReason,
}

/// Outcome of `Select` for one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: RolloutId,
    pub ranking: Vec<RolloutId>,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reports: Option<BTreeMap<RolloutId, ExecutionReport>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Revise the previous round's best solution.
    Edit,
    /// Solve from scratch with only the knowledge list.
    Regenerate,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rollout_id_round_trips_and_orders() {
        let a: RolloutId = "r3.2".parse().unwrap();
        assert_eq!(a, RolloutId::new(3, 2));
        assert_eq!(a.to_string(), "r3.2");
        assert!(RolloutId::new(2, 9) < RolloutId::new(3, 1));
        assert!("3.2".parse::<RolloutId>().is_err());
    }

    #[test]
    fn entry_id_accepts_tagged_forms() {
        assert_eq!("k3".parse::<EntryId>().unwrap(), EntryId(3));
        assert_eq!("[k12]".parse::<EntryId>().unwrap(), EntryId(12));
        assert_eq!(" 4 ".parse::<EntryId>().unwrap(), EntryId(4));
        assert!("kx".parse::<EntryId>().is_err());
    }

    #[test]
    fn problems_file_rejects_duplicates_and_empty_statements() {
        let ok = r#"{"id":"a","statement":"x","kind":"math"}
{"id":"b","statement":"y","kind":"code_generation","context_window_budget":200000}"#;
        let ps = parse_problems(ok, "p").unwrap();
        assert_eq!(ps[0].kind, ProblemKind::MathIntegerAnswer);
        assert_eq!(ps[0].context_window_budget, DEFAULT_CONTEXT_BUDGET);
        assert_eq!(ps[1].context_window_budget, 200_000);

        let dup = r#"{"id":"a","statement":"x","kind":"math"}
{"id":"a","statement":"y","kind":"math"}"#;
        assert!(matches!(
            parse_problems(dup, "p"),
            Err(DomainError::DuplicateProblem(_))
        ));
        let empty = r#"{"id":"a","statement":"  ","kind":"math"}"#;
        assert!(matches!(
            parse_problems(empty, "p"),
            Err(DomainError::EmptyStatement(_))
        ));
    }

    #[test]
    fn payload_kind_matching() {
        assert!(Payload::Answer(3).matches_kind(ProblemKind::MathIntegerAnswer));
        assert!(!Payload::Answer(3).matches_kind(ProblemKind::CodeGeneration));
        assert!(Payload::ParseFailure("x".into()).matches_kind(ProblemKind::CodeGeneration));
    }
}
