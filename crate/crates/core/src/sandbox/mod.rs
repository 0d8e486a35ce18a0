//! Self-verification for code problems: test suites written by the model
//! (plus any examples found in the statement) and subprocess execution of
//! candidate programs against them.

mod exec;
mod suite;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::RolloutId;

pub use exec::{normalize_output, Limits, Sandbox};
pub use suite::{detect_examples, generate_tests, merge_tests, parse_tests_block};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SandboxError {
    #[error("sandbox interpreter `{cmd}` is unavailable: {detail}")]
    Unavailable { cmd: String, detail: String },
    #[error("no tests available: the model produced none and the statement has no examples")]
    EmptyTestSuite,
    #[error("sandbox I/O failure: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOrigin {
    ProblemExample,
    ModelGenerated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedTest {
    pub id: String,
    /// Exact stdin payload.
    pub input: String,
    /// Stored normalized.
    pub expected_output: String,
    pub origin_round: u32,
    pub origin: TestOrigin,
}

impl GeneratedTest {
    pub fn new(
        id: impl Into<String>,
        input: impl Into<String>,
        expected_output: &str,
        origin_round: u32,
        origin: TestOrigin,
    ) -> Self {
        Self {
            id: id.into(),
            input: input.into(),
            expected_output: normalize_output(expected_output),
            origin_round,
            origin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    Pass,
    WrongOutput,
    Timeout,
    RuntimeError,
    Crash,
}

/// Equality ignores `wall_time_ms`.
#[derive(Debug, Clone, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_id: String,
    pub outcome: TestOutcome,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub stdout: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub stderr: String,
    /// Host-dependent, so kept out of serialized traces.
    #[serde(skip)]
    pub wall_time_ms: u64,
}

impl PartialEq for TestResult {
    fn eq(&self, other: &Self) -> bool {
        self.test_id == other.test_id
            && self.outcome == other.outcome
            && self.stdout == other.stdout
            && self.stderr == other.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub rollout_id: RolloutId,
    pub results: Vec<TestResult>,
}

impl ExecutionReport {
    pub fn passed(&self) -> usize {
        self.results
            .iter()
            .filter(|r| r.outcome == TestOutcome::Pass)
            .count()
    }

    pub fn all_passed(&self) -> bool {
        !self.results.is_empty() && self.passed() == self.results.len()
    }

    /// Whether the program crashed or errored on every test.
    pub fn failed_everywhere(&self) -> bool {
        self.results
            .iter()
            .all(|r| matches!(r.outcome, TestOutcome::Crash | TestOutcome::RuntimeError))
    }
}
