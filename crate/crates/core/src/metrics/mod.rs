//! Evaluation-side measurements over finished traces.
//!
//! Scores are computed in two steps: traces are graded into
//! [`ProblemOutcome`]s (one boolean per rollout plus the verdict on the
//! selection), then the series functions count over those. All fractions
//! come from integer counts divided once, so equal counts give bit-equal
//! floats.

mod analysis;
mod eval;
mod report;

use thiserror::Error;

use crate::domain::{BaselineRecord, Trace};
use crate::sandbox::SandboxError;

pub use analysis::{
    attribute_outcomes, attribute_problems, categorize, categorize_knowledge, internal_signal,
    knowledge_length_series, strategy_dynamics, strategy_dynamics_with, Attribution,
    AttributionCategory, BaselineVerdict, KeywordTable, StrategyDynamics, DEFAULT_KEYWORDS,
    DEFAULT_SWITCH_THRESHOLD,
};
pub use eval::{EvalSet, EvaluationRecord, Grader, ReferenceTest, Truth};
pub use report::{emit_report, ReportBundle, ReportInput, METRICS_SCHEMA};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no evaluation record for problem `{0}`")]
    MissingEval(String),
    #[error("baseline and loop runs cover different problems: {0}")]
    MismatchedProblemSets(String),
    #[error("grading code needs a sandbox")]
    NoSandbox,
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
}

/// Graded view of one round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoundOutcome {
    /// Correctness of each rollout generated this round, in index order.
    pub rollouts: Vec<bool>,
    /// Correctness of r*; `false` when the round had no selection.
    pub selected: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProblemOutcome {
    pub problem_id: String,
    pub rounds: Vec<RoundOutcome>,
}

impl ProblemOutcome {
    fn selected_at(&self, t: usize) -> bool {
        t >= 1 && self.rounds.get(t - 1).is_some_and(|r| r.selected)
    }

    fn any_selected_upto(&self, t: usize) -> bool {
        self.rounds.iter().take(t).any(|r| r.selected)
    }

    fn any_rollout_in_first(&self, n: usize) -> bool {
        self.rounds
            .iter()
            .flat_map(|r| r.rollouts.iter())
            .take(n)
            .any(|c| *c)
    }
}

/// Grades every rollout and selection of `trace`.
pub fn grade_trace(trace: &Trace, grader: &Grader<'_>) -> Result<ProblemOutcome, MetricsError> {
    let pid = trace.problem_id();
    grader.evals().get(pid)?;
    let mut rounds = Vec::with_capacity(trace.rounds.len());
    for r in &trace.rounds {
        let rollouts = r
            .rollouts
            .iter()
            .map(|x| grader.is_correct(pid, &x.payload))
            .collect::<Result<Vec<_>, _>>()?;
        let selected = match r.selection.as_ref().and_then(|s| trace.rollout(s.chosen)) {
            Some(x) => grader.is_correct(pid, &x.payload)?,
            None => false,
        };
        rounds.push(RoundOutcome { rollouts, selected });
    }
    Ok(ProblemOutcome {
        problem_id: pid.to_string(),
        rounds,
    })
}

pub fn grade_traces(
    traces: &[Trace],
    grader: &Grader<'_>,
) -> Result<Vec<ProblemOutcome>, MetricsError> {
    traces.iter().map(|t| grade_trace(t, grader)).collect()
}

fn fraction(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Fraction of problems whose round-`t` selection is correct.
pub fn accuracy(outcomes: &[ProblemOutcome], t: usize) -> f64 {
    fraction(
        outcomes.iter().filter(|o| o.selected_at(t)).count(),
        outcomes.len(),
    )
}

/// Fraction of problems with a correct selection in any round `1..=t`.
pub fn cumulative_best(outcomes: &[ProblemOutcome], t: usize) -> f64 {
    fraction(
        outcomes.iter().filter(|o| o.any_selected_upto(t)).count(),
        outcomes.len(),
    )
}

/// Fraction of problems where any of the first `k * t` rollouts is correct.
pub fn pass_at_k(outcomes: &[ProblemOutcome], t: usize, k: usize) -> f64 {
    fraction(
        outcomes
            .iter()
            .filter(|o| o.any_rollout_in_first(k * t))
            .count(),
        outcomes.len(),
    )
}

/// Cumulative best minus accuracy, in percentage points.
pub fn selection_gap(outcomes: &[ProblemOutcome], t: usize) -> f64 {
    let n = outcomes.len();
    if n == 0 {
        return 0.0;
    }
    let best = outcomes.iter().filter(|o| o.any_selected_upto(t)).count();
    let acc = outcomes.iter().filter(|o| o.selected_at(t)).count();
    (best - acc) as f64 * 100.0 / n as f64
}

/// Whether the baseline's reported solution and its first `n` samples are
/// correct.
pub fn grade_baseline(
    record: &BaselineRecord,
    grader: &Grader<'_>,
    n: usize,
) -> Result<(bool, bool), MetricsError> {
    let pid = &record.header.problem_id;
    grader.evals().get(pid)?;
    let reported = match record.final_rollout() {
        Some(r) => grader.is_correct(pid, &r.payload)?,
        None => false,
    };
    let mut any = false;
    for r in record.rollouts().take(n) {
        if grader.is_correct(pid, &r.payload)? {
            any = true;
            break;
        }
    }
    Ok((reported, any))
}
