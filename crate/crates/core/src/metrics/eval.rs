//! Ground truth. Nothing outside `metrics` and the `report` command should
//! import this module.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::domain::{Payload, RolloutId};
use crate::sandbox::{GeneratedTest, Sandbox, TestOrigin};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceTest {
    pub input: String,
    pub expected_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Answer(u16),
    Tests(Vec<ReferenceTest>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub problem_id: String,
    pub truth: Truth,
}

/// Evaluation records keyed by problem id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalSet {
    records: BTreeMap<String, EvaluationRecord>,
}

impl EvalSet {
    pub fn new(records: impl IntoIterator<Item = EvaluationRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| (r.problem_id.clone(), r))
                .collect(),
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, MetricsError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: EvaluationRecord = serde_json::from_str(line)
                .map_err(|e| MetricsError::Parse(format!("evals line {}: {e}", i + 1)))?;
            if let Truth::Answer(a) = r.truth {
                if a > 999 {
                    return Err(MetricsError::Parse(format!(
                        "evals line {}: answer {a} outside 0..=999",
                        i + 1
                    )));
                }
            }
            records.push(r);
        }
        Ok(Self::new(records))
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn get(&self, problem_id: &str) -> Result<&EvaluationRecord, MetricsError> {
        self.records
            .get(problem_id)
            .ok_or_else(|| MetricsError::MissingEval(problem_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Decides whether a payload is correct. Code payloads are run against the
/// reference suite; verdicts are cached per (problem, program).
pub struct Grader<'a> {
    evals: &'a EvalSet,
    sandbox: Option<&'a Sandbox>,
    cache: Mutex<HashMap<(String, String), bool>>,
}

impl<'a> Grader<'a> {
    pub fn new(evals: &'a EvalSet) -> Self {
        Self {
            evals,
            sandbox: None,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_sandbox(mut self, sandbox: &'a Sandbox) -> Self {
        self.sandbox = Some(sandbox);
        self
    }

    pub fn evals(&self) -> &EvalSet {
        self.evals
    }

    pub fn is_correct(&self, problem_id: &str, payload: &Payload) -> Result<bool, MetricsError> {
        let record = self.evals.get(problem_id)?;
        match (&record.truth, payload) {
            (Truth::Answer(want), Payload::Answer(got)) => Ok(want == got),
            (Truth::Tests(tests), Payload::Program(src)) => {
                let key = (problem_id.to_string(), src.clone());
                if let Some(v) = self.cache.lock().expect("grader cache").get(&key) {
                    return Ok(*v);
                }
                let sandbox = self.sandbox.ok_or(MetricsError::NoSandbox)?;
                let suite: Vec<GeneratedTest> = tests
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        GeneratedTest::new(
                            format!("ref{}", i + 1),
                            t.input.clone(),
                            &t.expected_output,
                            0,
                            TestOrigin::ProblemExample,
                        )
                    })
                    .collect();
                let report = sandbox.execute(RolloutId::new(0, 0), src, &suite)?;
                let ok = report.all_passed();
                self.cache.lock().expect("grader cache").insert(key, ok);
                Ok(ok)
            }
            _ => Ok(false),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::Limits;

    #[test]
    fn parses_and_grades() {
        let evals = EvalSet::from_jsonl(
            "{\"problem_id\":\"a\",\"truth\":{\"answer\":7}}\n\n\
             {\"problem_id\":\"b\",\"truth\":{\"tests\":[{\"input\":\"2\\n\",\"expected_output\":\"4\\n\"}]}}\n",
        )
        .unwrap();
        assert_eq!(evals.len(), 2);
        let sb = Sandbox::new("python3", Limits::default(), 1);
        let g = Grader::new(&evals).with_sandbox(&sb);
        assert!(g.is_correct("a", &Payload::Answer(7)).unwrap());
        assert!(!g
            .is_correct("a", &Payload::ParseFailure("x".into()))
            .unwrap());
        assert!(g
            .is_correct("b", &Payload::Program("print(int(input())*2)".into()))
            .unwrap());
        assert!(!g
            .is_correct("b", &Payload::Program("print(3)".into()))
            .unwrap());
        assert!(matches!(
            g.is_correct("zz", &Payload::Answer(1)),
            Err(MetricsError::MissingEval(id)) if id == "zz"
        ));
    }

    #[test]
    fn rejects_out_of_range_answer() {
        assert!(EvalSet::from_jsonl("{\"problem_id\":\"a\",\"truth\":{\"answer\":1000}}").is_err());
    }
}
