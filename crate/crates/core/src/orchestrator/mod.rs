//! The round loop: design strategies, roll out in parallel, select r*,
//! reflect against it, and fold the result into the knowledge list.

mod steps;

use std::time::Instant;

use thiserror::Error;
use tracing::{info, warn};

use crate::backend::{BackendError, Caller, ChatBackend};
use crate::domain::{
    KnowledgeList, PoolScope, ProblemKind, ProblemSpec, Rollout, RoundRecord, RunConfig,
    SelectionResult, SelectorKind, Trace, TraceHeader, TRACE_SCHEMA,
};
use crate::sandbox::{generate_tests, merge_tests, GeneratedTest, Sandbox, SandboxError};
use crate::selection::{select_code, select_math, self_rank, SelectionError};

pub use steps::{
    design_strategies, generate_rollout, overturn_insight, reference_text, reflect,
    update_knowledge, KnowledgeUpdate, Reflection,
};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("selector {selector:?} cannot be used for {kind:?} problems")]
    IncompatibleSelector {
        selector: SelectorKind,
        kind: ProblemKind,
    },
    #[error("code problems need a sandbox")]
    NoSandbox,
    #[error("round {round} aborted: {source}")]
    Backend {
        round: u32,
        #[source]
        source: BackendError,
    },
    #[error("round {round} aborted: {source}")]
    Sandbox {
        round: u32,
        #[source]
        source: SandboxError,
    },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("failed to persist round {round}: {detail}")]
    Persist { round: u32, detail: String },
}

impl OrchestratorError {
    /// Whether the failure came from a backend that could not be reached at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, OrchestratorError::Backend { source, .. } if source.is_unreachable())
    }
}

/// A run that stopped early, with every round completed before the failure.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct RunFailure {
    pub trace: Trace,
    #[source]
    pub error: OrchestratorError,
}

/// Runs the loop for one problem at a time.
pub struct Engine<'a> {
    config: &'a RunConfig,
    caller: Caller<'a>,
    sandbox: Option<&'a Sandbox>,
}

type RoundHook<'h> = dyn FnMut(&TraceHeader, &RoundRecord) -> Result<(), String> + 'h;

// failures hand back the partial trace by value
#[allow(clippy::result_large_err)]
impl<'a> Engine<'a> {
    pub fn new(config: &'a RunConfig, backend: &'a dyn ChatBackend) -> Self {
        Self {
            config,
            caller: Caller::new(backend, &config.sampling, config.seed),
            sandbox: None,
        }
    }

    pub fn with_sandbox(mut self, sandbox: &'a Sandbox) -> Self {
        self.sandbox = Some(sandbox);
        self
    }

    pub fn header(&self, problem: &ProblemSpec) -> TraceHeader {
        TraceHeader {
            schema: TRACE_SCHEMA.to_string(),
            problem_id: problem.id.clone(),
            problem_kind: problem.kind,
            config_fingerprint: self.config.fingerprint(),
            rounds_planned: self.config.rounds,
            rollouts_per_round: self.config.rollouts_per_round,
            context_window_budget: problem.context_window_budget,
            knowledge_cap_fraction: self.config.knowledge_cap_fraction,
            baseline: None,
        }
    }

    /// Runs all T rounds from scratch.
    pub fn run_problem(&self, problem: &ProblemSpec) -> Result<Trace, RunFailure> {
        self.run_with(
            problem,
            Trace::new(self.header(problem)),
            &mut |_, _| Ok(()),
        )
    }

    /// Continues `trace` from its last complete round. Because every request
    /// is keyed and seeded, the result is identical to an uninterrupted run.
    pub fn resume(&self, problem: &ProblemSpec, trace: Trace) -> Result<Trace, RunFailure> {
        self.run_with(problem, trace, &mut |_, _| Ok(()))
    }

    /// Like [`Engine::resume`], calling `on_round` after each completed round
    /// so the caller can persist it. A hook error stops the run.
    pub fn run_with(
        &self,
        problem: &ProblemSpec,
        mut trace: Trace,
        on_round: &mut RoundHook<'_>,
    ) -> Result<Trace, RunFailure> {
        if let Err(error) = self.check(problem, &trace) {
            return Err(RunFailure { trace, error });
        }
        let mut knowledge = match trace.knowledge() {
            Ok(k) => k,
            Err(e) => {
                let error = OrchestratorError::Resume(e.to_string());
                return Err(RunFailure { trace, error });
            }
        };
        let mut suite: Vec<GeneratedTest> = trace
            .rounds
            .iter()
            .flat_map(|r| r.tests_added.iter().cloned())
            .collect();
        let cap = trace.header.knowledge_cap_tokens();
        for t in trace.last_round() + 1..=self.config.rounds {
            let started = Instant::now();
            info!(problem = %problem.id, round = t, "round started");
            let record = match self.round(problem, &trace, &mut knowledge, &mut suite, t, cap) {
                Ok(r) => r,
                Err(error) => {
                    warn!(problem = %problem.id, round = t, %error, "round aborted");
                    return Err(RunFailure { trace, error });
                }
            };
            if let Err(detail) = on_round(&trace.header, &record) {
                let error = OrchestratorError::Persist { round: t, detail };
                return Err(RunFailure { trace, error });
            }
            info!(
                problem = %problem.id,
                round = t,
                selected = ?record.selection.as_ref().map(|s| s.chosen.to_string()),
                knowledge_entries = knowledge.active_count(),
                elapsed_ms = started.elapsed().as_millis() as u64,
                "round finished"
            );
            trace.rounds.push(record);
        }
        Ok(trace)
    }

    fn check(&self, problem: &ProblemSpec, trace: &Trace) -> Result<(), OrchestratorError> {
        let selector = self.config.selector;
        if !selector.compatible_with(problem.kind) {
            return Err(OrchestratorError::IncompatibleSelector {
                selector,
                kind: problem.kind,
            });
        }
        if self.uses_execution(problem) && self.sandbox.is_none() {
            return Err(OrchestratorError::NoSandbox);
        }
        let want = self.header(problem);
        let h = &trace.header;
        if h.problem_id != want.problem_id {
            return Err(OrchestratorError::Resume(format!(
                "trace is for problem `{}`, not `{}`",
                h.problem_id, want.problem_id
            )));
        }
        if h.config_fingerprint != want.config_fingerprint {
            return Err(OrchestratorError::Resume(
                "trace was produced with a different configuration".into(),
            ));
        }
        Ok(())
    }

    fn uses_execution(&self, problem: &ProblemSpec) -> bool {
        problem.kind == ProblemKind::CodeGeneration
            && matches!(
                self.config.selector,
                SelectorKind::Auto | SelectorKind::Code
            )
    }

    fn round(
        &self,
        problem: &ProblemSpec,
        trace: &Trace,
        knowledge: &mut KnowledgeList,
        suite: &mut Vec<GeneratedTest>,
        t: u32,
        cap: usize,
    ) -> Result<RoundRecord, OrchestratorError> {
        let k = self.config.rollouts_per_round;
        let caller = &self.caller;
        let backend_err = |source| OrchestratorError::Backend { round: t, source };
        let mut notes = Vec::new();

        let strategies =
            design_strategies(problem, knowledge, k, caller, t).map_err(backend_err)?;

        let prior_best = trace.best_up_to(t.saturating_sub(1));
        let mode = self.config.mode;
        let kn: &KnowledgeList = knowledge;
        let rollouts: Vec<Rollout> = if strategies.len() == 1 {
            vec![
                generate_rollout(problem, kn, &strategies[0], prior_best, mode, caller)
                    .map_err(backend_err)?,
            ]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = strategies
                    .iter()
                    .map(|st| {
                        s.spawn(move || generate_rollout(problem, kn, st, prior_best, mode, caller))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("rollout thread panicked"))
                    .collect::<Result<Vec<_>, _>>()
            })
            .map_err(backend_err)?
        };
        info!(problem = %problem.id, round = t, rollouts = rollouts.len(), "rollouts generated");

        let mut pool: Vec<&Rollout> = match self.config.pool {
            PoolScope::Full => trace
                .rounds
                .iter()
                .flat_map(|r| r.rollouts.iter())
                .collect(),
            PoolScope::CurrentPlusBest => prior_best.into_iter().collect(),
        };
        pool.extend(rollouts.iter());

        let mut tests_added = Vec::new();
        let selected: Result<SelectionResult, SelectionError> =
            match (self.config.selector, problem.kind) {
                (SelectorKind::SelfRank, _) => self_rank(problem, &pool, kn, caller, t),
                (_, ProblemKind::MathIntegerAnswer) => select_math(problem, &pool, kn, caller, t),
                (_, ProblemKind::CodeGeneration) => {
                    let programs: Vec<&str> = rollouts
                        .iter()
                        .filter_map(|r| r.payload.program())
                        .collect();
                    match generate_tests(problem, &programs, kn, caller, t) {
                        Ok(new) => tests_added = merge_tests(suite, new),
                        Err(SandboxError::EmptyTestSuite) => {}
                        Err(source) => return Err(OrchestratorError::Sandbox { round: t, source }),
                    }
                    if suite.is_empty() {
                        notes.push("no tests available; fell back to self-ranking".to_string());
                        self_rank(problem, &pool, kn, caller, t)
                    } else {
                        let sandbox = self.sandbox.ok_or(OrchestratorError::NoSandbox)?;
                        let candidates: Vec<_> = pool
                            .iter()
                            .filter_map(|r| r.payload.program().map(|p| (r.id, p)))
                            .collect();
                        let reports = sandbox
                            .execute_all(&candidates, suite)
                            .map_err(|source| OrchestratorError::Sandbox { round: t, source })?;
                        select_code(problem, &pool, &reports, kn, caller, t)
                    }
                }
            };
        let selection = match selected {
            Ok(s) => Some(s),
            Err(e) => {
                warn!(problem = %problem.id, round = t, error = %e, "no selection this round");
                notes.push(format!("no selection: {e}"));
                None
            }
        };

        let mut insights = Vec::new();
        let mut prune = None;
        let mut rejected = Vec::new();
        if let Some(sel) = &selection {
            let chosen = pool
                .iter()
                .find(|r| r.id == sel.chosen)
                .copied()
                .expect("selection comes from the pool");
            let reflection = reflect(problem, &rollouts, chosen, sel.reports.as_ref(), kn, caller);
            notes.extend(reflection.notes);
            if problem.kind == ProblemKind::MathIntegerAnswer {
                if let Some(harvest) = overturn_insight(chosen, prior_best) {
                    insights.push(harvest);
                }
                let best = chosen.payload.answer();
                let losers = rollouts
                    .iter()
                    .chain(prior_best)
                    .filter(|r| r.id != chosen.id)
                    .filter_map(|r| r.payload.answer());
                rejected.extend(
                    losers
                        .chain(reflection.rejected_answers)
                        .filter(|a| Some(*a) != best),
                );
            }
            insights.extend(reflection.insights);
            prune = reflection.prune;
        }

        let up = update_knowledge(
            knowledge,
            &insights,
            prune,
            &rejected,
            t,
            self.config.dedup_threshold,
            cap,
        );
        if !up.dropped_duplicates.is_empty() {
            notes.push(format!(
                "{} near-duplicate insight(s) dropped",
                up.dropped_duplicates.len()
            ));
        }
        Ok(RoundRecord {
            round: t,
            mode,
            strategies,
            rollouts,
            selection,
            insights_added: up.added,
            pruned: up.pruned,
            rejected_added: up.rejected_added,
            tests_added,
            knowledge_snapshot: knowledge.render(),
            notes,
        })
    }
}
