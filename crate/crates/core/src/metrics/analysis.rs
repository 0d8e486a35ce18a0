use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::Serialize;

use super::{grade_baseline, grade_trace, Grader, MetricsError, ProblemOutcome};
use crate::domain::{token_proxy, BaselineRecord, Category, KnowledgeEntry, Trace};
use crate::similarity::SoftTfIdf;

pub const DEFAULT_SWITCH_THRESHOLD: f64 = 0.5;

/// Rendered knowledge size per round as a fraction of `budget`.
pub fn knowledge_length_series(trace: &Trace, budget: u64) -> Vec<f64> {
    trace
        .rounds
        .iter()
        .map(|r| token_proxy(&r.knowledge_snapshot) as f64 / budget.max(1) as f64)
        .collect()
}

/// Strategy switching between consecutive rounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StrategyDynamics {
    pub transitions_after_fail: usize,
    pub switches_after_fail: usize,
    pub transitions_after_success: usize,
    pub switches_after_success: usize,
    /// Transitions whose source round had no signal.
    pub unlabelled_transitions: usize,
    /// Greedy single-pass clusters of all strategy texts at the threshold.
    pub unique_clusters: usize,
}

impl StrategyDynamics {
    pub fn switch_rate_after_fail(&self) -> Option<f64> {
        (self.transitions_after_fail > 0)
            .then(|| self.switches_after_fail as f64 / self.transitions_after_fail as f64)
    }

    pub fn switch_rate_after_success(&self) -> Option<f64> {
        (self.transitions_after_success > 0)
            .then(|| self.switches_after_success as f64 / self.transitions_after_success as f64)
    }
}

/// The strategy a round is represented by: that of its selection when r*
/// was generated in the round, else the first strategy.
fn round_strategy(trace: &Trace, t: usize) -> Option<&str> {
    let r = &trace.rounds[t];
    let chosen = r.selection.as_ref().map(|s| s.chosen);
    let from_selection = r
        .rollouts
        .iter()
        .find(|x| Some(x.id) == chosen)
        .and_then(|x| x.strategy_id.as_deref())
        .and_then(|sid| r.strategies.iter().find(|s| s.id == sid));
    from_selection
        .or(r.strategies.first())
        .map(|s| s.text.as_str())
}

/// Internal success per round: the selection passed every test the model
/// wrote for it. `None` when the round has no execution reports.
pub fn internal_signal(trace: &Trace) -> Vec<Option<bool>> {
    trace
        .rounds
        .iter()
        .map(|r| {
            let sel = r.selection.as_ref()?;
            let rep = sel.reports.as_ref()?.get(&sel.chosen)?;
            Some(rep.all_passed())
        })
        .collect()
}

/// Counts switches (similarity below `theta`) after internally failed and
/// successful rounds.
pub fn strategy_dynamics(trace: &Trace, theta: f64) -> StrategyDynamics {
    strategy_dynamics_with(trace, theta, &internal_signal(trace))
}

/// As [`strategy_dynamics`], with caller-supplied per-round success labels.
pub fn strategy_dynamics_with(
    trace: &Trace,
    theta: f64,
    success: &[Option<bool>],
) -> StrategyDynamics {
    let all: Vec<&str> = trace
        .rounds
        .iter()
        .flat_map(|r| r.strategies.iter().map(|s| s.text.as_str()))
        .collect();
    let model = SoftTfIdf::new(all.iter());
    let mut out = StrategyDynamics::default();

    let mut reps: Vec<&str> = Vec::new();
    for s in &all {
        if !reps.iter().any(|r| model.similarity(r, s) >= theta) {
            reps.push(s);
        }
    }
    out.unique_clusters = reps.len();

    for t in 1..trace.rounds.len() {
        let (Some(a), Some(b)) = (round_strategy(trace, t - 1), round_strategy(trace, t)) else {
            continue;
        };
        let switched = model.similarity(a, b) < theta;
        match success.get(t - 1).copied().flatten() {
            Some(true) => {
                out.transitions_after_success += 1;
                out.switches_after_success += usize::from(switched);
            }
            Some(false) => {
                out.transitions_after_fail += 1;
                out.switches_after_fail += usize::from(switched);
            }
            None => out.unlabelled_transitions += 1,
        }
    }
    out
}

/// First-match keyword table for knowledge categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordTable {
    rows: Vec<(Category, Vec<String>)>,
}

/// One `Category: keyword, keyword` row per line; `#` starts a comment.
/// Short alphanumeric keywords (three characters or fewer) must match a
/// whole word; everything else matches as a case-insensitive substring.
pub const DEFAULT_KEYWORDS: &str = "\
Performance: o(n, time limit, tle, too slow, timeout, complexity, efficient, optimiz, prefix sum, quadratic, performance, memoiz, cache, faster
Indexing: off-by-one, off by one, index, bisect, 0-based, 1-based, zero-based, one-based, inclusive, exclusive, slice
EdgeCases: edge case, corner case, boundary, empty, n = 1, n=1, n = 0, single element, minimum input, maximum input, all equal, special case
BugFixes: bug, typo, wrong variable, uninitialized, reset, crash, exception, runtimeerror, mutat, shadow
IOFormat: output format, input format, print, newline, whitespace, read input, stdin, stdout, spaces, formatting, trailing
Algorithmic: greedy, dynamic programming, dp, graph, dfs, bfs, sort, algorithm, two-pointer, two pointer, binary search, recursion, invariant
Numerical: modulo, mod, overflow, precision, floating, integer division, parity, rounding, divisib, gcd, prime
";

impl FromStr for KeywordTable {
    type Err = MetricsError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, kws) = line.split_once(':').ok_or_else(|| {
                MetricsError::Parse(format!("keyword table line {}: missing `:`", i + 1))
            })?;
            let category: Category =
                serde_json::from_value(serde_json::Value::String(name.trim().to_string()))
                    .map_err(|_| {
                        MetricsError::Parse(format!(
                            "keyword table line {}: unknown category `{}`",
                            i + 1,
                            name.trim()
                        ))
                    })?;
            let kws = kws
                .split(',')
                .map(|k| k.trim().to_lowercase())
                .filter(|k| !k.is_empty())
                .collect();
            rows.push((category, kws));
        }
        Ok(Self { rows })
    }
}

impl Default for KeywordTable {
    fn default() -> Self {
        DEFAULT_KEYWORDS
            .parse()
            .expect("built-in keyword table parses")
    }
}

impl KeywordTable {
    pub fn categorize(&self, text: &str) -> Category {
        let lower = text.to_lowercase();
        let words: BTreeSet<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        for (cat, kws) in &self.rows {
            let hit = kws.iter().any(|k| {
                if k.len() <= 3 && k.chars().all(char::is_alphanumeric) {
                    words.contains(k.as_str())
                } else {
                    lower.contains(k.as_str())
                }
            });
            if hit {
                return *cat;
            }
        }
        Category::Other
    }
}

/// Category under the default keyword table.
pub fn categorize(text: &str) -> Category {
    KeywordTable::default().categorize(text)
}

/// Histogram over every category (zero counts included).
pub fn categorize_knowledge<'e>(
    entries: impl IntoIterator<Item = &'e KnowledgeEntry>,
    table: &KeywordTable,
) -> BTreeMap<Category, usize> {
    let mut hist: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
    for e in entries {
        *hist.entry(table.categorize(&e.text)).or_default() += 1;
    }
    hist
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum AttributionCategory {
    BaselineCorrect,
    TrtNewSolve,
    TrtUnstable,
    NeverSolved,
}

impl AttributionCategory {
    pub const ALL: [AttributionCategory; 4] = [
        AttributionCategory::BaselineCorrect,
        AttributionCategory::TrtNewSolve,
        AttributionCategory::TrtUnstable,
        AttributionCategory::NeverSolved,
    ];

    pub fn of(baseline_correct: bool, loop_correct: bool) -> Self {
        match (baseline_correct, loop_correct) {
            (true, true) => Self::BaselineCorrect,
            (false, true) => Self::TrtNewSolve,
            (true, false) => Self::TrtUnstable,
            (false, false) => Self::NeverSolved,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Attribution {
    pub per_problem: BTreeMap<String, AttributionCategory>,
    /// Baseline failed in its first ten samples, the loop solved it in some
    /// round up to the final one.
    pub breakthroughs: Vec<String>,
}

impl Attribution {
    pub fn counts(&self) -> BTreeMap<AttributionCategory, usize> {
        let mut c: BTreeMap<_, _> = AttributionCategory::ALL.iter().map(|k| (*k, 0)).collect();
        for cat in self.per_problem.values() {
            *c.entry(*cat).or_default() += 1;
        }
        c
    }
}

/// Graded baseline verdicts: (reported solution correct, any of first ten correct).
pub type BaselineVerdict = (bool, bool);

/// Partitions problems by (baseline correct, loop's round-`final_round`
/// selection correct) and lists breakthroughs.
pub fn attribute_outcomes(
    outcomes: &[ProblemOutcome],
    baselines: &BTreeMap<String, BaselineVerdict>,
    final_round: usize,
) -> Result<Attribution, MetricsError> {
    let ours: BTreeSet<&str> = outcomes.iter().map(|o| o.problem_id.as_str()).collect();
    let theirs: BTreeSet<&str> = baselines.keys().map(String::as_str).collect();
    if ours != theirs {
        let diff: Vec<&str> = ours.symmetric_difference(&theirs).copied().collect();
        return Err(MetricsError::MismatchedProblemSets(diff.join(", ")));
    }
    let mut out = Attribution::default();
    for o in outcomes {
        let (base, base10) = baselines[&o.problem_id];
        let ours = o.selected_at(final_round);
        out.per_problem
            .insert(o.problem_id.clone(), AttributionCategory::of(base, ours));
        if !base10 && o.any_selected_upto(final_round) {
            out.breakthroughs.push(o.problem_id.clone());
        }
    }
    Ok(out)
}

pub fn attribute_problems(
    traces: &[Trace],
    baselines: &[BaselineRecord],
    grader: &Grader<'_>,
    final_round: usize,
) -> Result<Attribution, MetricsError> {
    let outcomes = traces
        .iter()
        .map(|t| grade_trace(t, grader))
        .collect::<Result<Vec<_>, _>>()?;
    let mut verdicts = BTreeMap::new();
    for b in baselines {
        verdicts.insert(b.header.problem_id.clone(), grade_baseline(b, grader, 10)?);
    }
    attribute_outcomes(&outcomes, &verdicts, final_round)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RoundOutcome;

    #[test]
    fn categorize_examples() {
        assert_eq!(
            categorize("use prefix sums to avoid O(n²)"),
            Category::Performance
        );
        assert_eq!(
            categorize("bisect_right for strict greater comparisons; avoid off-by-one errors"),
            Category::Indexing
        );
        assert_eq!(categorize(""), Category::Other);
        assert_eq!(
            categorize("Do not forget the empty array"),
            Category::EdgeCases
        );
        assert_eq!(categorize("adapt the approach"), Category::Other);
        assert_eq!(categorize("Use dp over subsets"), Category::Algorithmic);
    }

    #[test]
    fn custom_table() {
        let t: KeywordTable = "Numerical: carry\n# comment\n".parse().unwrap();
        assert_eq!(t.categorize("handle the carry"), Category::Numerical);
        assert_eq!(t.categorize("off-by-one"), Category::Other);
        assert!("Bogus: x".parse::<KeywordTable>().is_err());
    }

    fn o(id: &str, sel: &[bool]) -> ProblemOutcome {
        ProblemOutcome {
            problem_id: id.into(),
            rounds: sel
                .iter()
                .map(|s| RoundOutcome {
                    rollouts: vec![*s],
                    selected: *s,
                })
                .collect(),
        }
    }

    #[test]
    fn attribution_partitions() {
        let outcomes = vec![
            o("a", &[true, true]),
            o("b", &[false, true]),
            o("c", &[true, false]),
            o("d", &[false, false]),
        ];
        let base: BTreeMap<String, BaselineVerdict> = [
            ("a", (true, true)),
            ("b", (false, false)),
            ("c", (true, true)),
            ("d", (false, false)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let a = attribute_outcomes(&outcomes, &base, 2).unwrap();
        assert_eq!(a.per_problem["c"], AttributionCategory::TrtUnstable);
        assert_eq!(a.counts().values().sum::<usize>(), 4);
        assert!(a.counts().values().all(|n| *n == 1));
        assert_eq!(a.breakthroughs, vec!["b"]);
        let mut fewer = base.clone();
        fewer.remove("d");
        assert!(matches!(
            attribute_outcomes(&outcomes, &fewer, 2),
            Err(MetricsError::MismatchedProblemSets(_))
        ));
    }
}
