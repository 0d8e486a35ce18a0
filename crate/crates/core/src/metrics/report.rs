use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{
    accuracy, attribute_outcomes, categorize_knowledge, cumulative_best, grade_baseline,
    grade_traces, internal_signal, knowledge_length_series, pass_at_k, selection_gap,
    strategy_dynamics_with, Grader, KeywordTable, MetricsError,
};
use crate::domain::{token_proxy, BaselineRecord, KnowledgeEntry, Trace};

/// Name of the fixed CSV header set written by [`emit_report`].
pub const METRICS_SCHEMA: &str = "trt-metrics/1";

pub struct ReportInput<'a> {
    pub traces: &'a [Trace],
    pub baselines: &'a [BaselineRecord],
    pub grader: &'a Grader<'a>,
    pub switch_threshold: f64,
    pub keywords: &'a KeywordTable,
}

/// Report files by name, plus whether any trace stopped early.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportBundle {
    pub files: BTreeMap<String, String>,
    pub partial: bool,
    pub rounds: usize,
}

impl ReportBundle {
    pub fn write(&self, dir: &Path) -> Result<(), MetricsError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| MetricsError::Io(format!("{}: {e}", dir.display())))?;
        for (name, body) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, body)
                .map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn csv<R: AsRef<[String]>>(header: &[&str], rows: &[R]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r.as_ref()).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Builds the metrics bundle. Per-round series cover rounds every trace has
/// completed; an incomplete run is flagged partial.
pub fn emit_report(input: &ReportInput<'_>) -> Result<ReportBundle, MetricsError> {
    let traces = input.traces;
    let outcomes = grade_traces(traces, input.grader)?;
    let rounds = traces.iter().map(|t| t.rounds.len()).min().unwrap_or(0);
    let partial = traces.iter().any(|t| !t.is_complete());
    let k = traces
        .first()
        .map_or(1, |t| t.header.rollouts_per_round as usize);
    let n = outcomes.len().to_string();

    let mut files = BTreeMap::new();
    let series = |f: &dyn Fn(usize) -> f64| -> Vec<Vec<String>> {
        (1..=rounds)
            .map(|t| vec![t.to_string(), fmt(f(t)), n.clone()])
            .collect()
    };
    files.insert(
        "accuracy.csv".into(),
        csv(
            &["round", "accuracy", "problems"],
            &series(&|t| accuracy(&outcomes, t)),
        ),
    );
    files.insert(
        "cumulative_best.csv".into(),
        csv(
            &["round", "cumulative_best", "problems"],
            &series(&|t| cumulative_best(&outcomes, t)),
        ),
    );
    let pass_rows: Vec<Vec<String>> = (1..=rounds)
        .map(|t| {
            vec![
                t.to_string(),
                (k * t).to_string(),
                fmt(pass_at_k(&outcomes, t, k)),
                n.clone(),
            ]
        })
        .collect();
    files.insert(
        "pass_at_k.csv".into(),
        csv(&["round", "k", "pass_at_k", "problems"], &pass_rows),
    );
    files.insert(
        "selection_gap.csv".into(),
        csv(
            &["round", "gap_pp", "problems"],
            &series(&|t| selection_gap(&outcomes, t)),
        ),
    );

    let mut length_rows = Vec::new();
    let mut max_fraction: f64 = 0.0;
    for tr in traces {
        let budget = tr.header.context_window_budget;
        for (r, frac) in tr.rounds.iter().zip(knowledge_length_series(tr, budget)) {
            max_fraction = max_fraction.max(frac);
            length_rows.push(vec![
                tr.problem_id().to_string(),
                r.round.to_string(),
                token_proxy(&r.knowledge_snapshot).to_string(),
                fmt(frac),
            ]);
        }
    }
    files.insert(
        "knowledge_length.csv".into(),
        csv(
            &["problem_id", "round", "tokens", "fraction_of_budget"],
            &length_rows,
        ),
    );

    let mut all_entries: Vec<KnowledgeEntry> = Vec::new();
    for tr in traces {
        let k = tr
            .knowledge()
            .map_err(|e| MetricsError::Parse(format!("{}: {e}", tr.problem_id())))?;
        all_entries.extend(k.entries().iter().cloned());
    }
    let hist = categorize_knowledge(&all_entries, input.keywords);
    let hist_rows: Vec<Vec<String>> = hist
        .iter()
        .map(|(c, n)| vec![format!("{c:?}"), n.to_string()])
        .collect();
    files.insert(
        "knowledge_categories.csv".into(),
        csv(&["category", "count"], &hist_rows),
    );

    let mut dyn_rows = Vec::new();
    let mut totals = [0usize; 4];
    for (tr, o) in traces.iter().zip(&outcomes) {
        let truth: Vec<Option<bool>> = o.rounds.iter().map(|r| Some(r.selected)).collect();
        for (label, signal) in [
            ("generated_tests", internal_signal(tr)),
            ("ground_truth", truth),
        ] {
            let d = strategy_dynamics_with(tr, input.switch_threshold, &signal);
            if label == "generated_tests" {
                totals[0] += d.switches_after_fail;
                totals[1] += d.transitions_after_fail;
                totals[2] += d.switches_after_success;
                totals[3] += d.transitions_after_success;
            }
            dyn_rows.push(vec![
                tr.problem_id().to_string(),
                label.to_string(),
                d.transitions_after_fail.to_string(),
                d.switches_after_fail.to_string(),
                d.transitions_after_success.to_string(),
                d.switches_after_success.to_string(),
                d.unique_clusters.to_string(),
            ]);
        }
    }
    files.insert(
        "strategy_dynamics.csv".into(),
        csv(
            &[
                "problem_id",
                "signal",
                "transitions_after_fail",
                "switches_after_fail",
                "transitions_after_success",
                "switches_after_success",
                "greedy_clusters",
            ],
            &dyn_rows,
        ),
    );

    let mut attribution_counts = None;
    if !input.baselines.is_empty() {
        let mut verdicts = BTreeMap::new();
        for b in input.baselines {
            verdicts.insert(
                b.header.problem_id.clone(),
                grade_baseline(b, input.grader, 10)?,
            );
        }
        let a = attribute_outcomes(&outcomes, &verdicts, rounds)?;
        let rows: Vec<Vec<String>> = a
            .per_problem
            .iter()
            .map(|(id, c)| {
                vec![
                    id.clone(),
                    format!("{c:?}"),
                    a.breakthroughs.contains(id).to_string(),
                ]
            })
            .collect();
        files.insert(
            "attribution.csv".into(),
            csv(&["problem_id", "category", "breakthrough"], &rows),
        );
        attribution_counts = Some((a.counts(), a.breakthroughs.len()));
    }

    let mut d = String::new();
    let _ = writeln!(d, "schema: {METRICS_SCHEMA}");
    let _ = writeln!(d, "problems: {}", outcomes.len());
    let _ = writeln!(
        d,
        "rounds reported: {rounds}{}",
        if partial { " (partial)" } else { "" }
    );
    if rounds > 0 {
        let _ = writeln!(
            d,
            "round {rounds}: accuracy {:.1}%, cumulative best {:.1}%, pass@{} {:.1}%, selection gap {:.1} pp",
            accuracy(&outcomes, rounds) * 100.0,
            cumulative_best(&outcomes, rounds) * 100.0,
            k * rounds,
            pass_at_k(&outcomes, rounds, k) * 100.0,
            selection_gap(&outcomes, rounds),
        );
    }
    let _ = writeln!(
        d,
        "max knowledge size: {:.2}% of context budget",
        max_fraction * 100.0
    );
    let rate = |s: usize, n: usize| {
        if n == 0 {
            "n/a".to_string()
        } else {
            format!("{:.0}% of {n}", s as f64 * 100.0 / n as f64)
        }
    };
    let _ = writeln!(
        d,
        "strategy switches (internal signal, threshold {}): after fail {}, after success {}",
        input.switch_threshold,
        rate(totals[0], totals[1]),
        rate(totals[2], totals[3]),
    );
    let _ = writeln!(
        d,
        "strategy clusters use greedy single-pass threshold clustering"
    );
    let cats: Vec<String> = hist.iter().map(|(c, n)| format!("{c:?} {n}")).collect();
    let _ = writeln!(d, "knowledge categories: {}", cats.join(", "));
    if let Some((counts, breakthroughs)) = attribution_counts {
        let parts: Vec<String> = counts.iter().map(|(c, n)| format!("{c:?} {n}")).collect();
        let _ = writeln!(
            d,
            "attribution: {}; breakthroughs {breakthroughs}",
            parts.join(", ")
        );
    }
    files.insert("digest.txt".into(), d);

    Ok(ReportBundle {
        files,
        partial,
        rounds,
    })
}
