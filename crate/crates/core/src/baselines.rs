//! Matched-compute baselines: independent sampling with majority vote, the
//! rolling Majority@Prev read-out over a trace, and Recursive
//! Self-Aggregation (RSA).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use tracing::{info, warn};

use crate::backend::parse::{parse_code_output, parse_math_output};
use crate::backend::prompts::{render_prompt, Bindings, PromptTemplate, AGGREGATE_SYSTEM};
use crate::backend::{BackendError, Caller, ChatBackend, Purpose, RequestKey};
use crate::domain::{
    BaselineIteration, BaselineKind, BaselineRecord, KnowledgeList, Payload, ProblemKind,
    ProblemSpec, Rollout, RolloutId, RunConfig, SelectionResult, SelectorKind, Trace, TraceHeader,
    Usage, TRACE_SCHEMA,
};
use crate::sandbox::{generate_tests, Sandbox, SandboxError};
use crate::selection::{render_candidate, select_code, select_math, self_rank};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no parsed answers to vote over")]
    EmptyInput,
    #[error("invalid baseline parameters: {0}")]
    InvalidParameters(String),
    #[error("every generation failed{}: {source}", iteration.map(|i| format!(" in iteration {i}")).unwrap_or_default())]
    AllFailed {
        iteration: Option<u32>,
        #[source]
        source: BackendError,
    },
    #[error("sandbox failure: {0}")]
    Sandbox(#[from] SandboxError),
}

impl BaselineError {
    pub fn is_unreachable(&self) -> bool {
        matches!(self, BaselineError::AllFailed { source, .. } if source.is_unreachable())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Majority {
    pub winner: u16,
    pub counts: BTreeMap<u16, u32>,
}

/// Modal answer; ties go to the answer that occurred most recently.
pub fn majority_vote(answers: &[u16]) -> Result<Majority, BaselineError> {
    let mut counts: BTreeMap<u16, u32> = BTreeMap::new();
    let mut last_seen: BTreeMap<u16, usize> = BTreeMap::new();
    for (i, &a) in answers.iter().enumerate() {
        *counts.entry(a).or_default() += 1;
        last_seen.insert(a, i);
    }
    let winner = counts
        .iter()
        .max_by_key(|(a, n)| (**n, last_seen[*a]))
        .map(|(a, _)| *a)
        .ok_or(BaselineError::EmptyInput)?;
    Ok(Majority { winner, counts })
}

/// Majority@Prev: vote over the selected answers of rounds `1..=upto`.
/// Rounds without a parsed selection are skipped.
pub fn rolling_majority(trace: &Trace, upto: u32) -> Result<u16, BaselineError> {
    let answers: Vec<u16> = (1..=upto)
        .filter_map(|t| trace.selected(t)?.payload.answer())
        .collect();
    majority_vote(&answers).map(|m| m.winner)
}

/// Runs `f` over `0..n` on up to `workers` threads, keeping index order.
fn parallel_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out = Mutex::new(Vec::with_capacity(n));
    std::thread::scope(|s| {
        for _ in 0..workers.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let v = f(i);
                out.lock().expect("results lock").push((i, v));
            });
        }
    });
    let mut v = out.into_inner().expect("results lock");
    v.sort_by_key(|(i, _)| *i);
    v.into_iter().map(|(_, x)| x).collect()
}

fn to_rollout(kind: ProblemKind, id: RolloutId, raw: String, usage: Usage) -> Rollout {
    let (payload, summary) = match kind {
        ProblemKind::MathIntegerAnswer => match parse_math_output(&raw) {
            Ok(m) => (Payload::Answer(m.answer), m.summary),
            Err(f) => (Payload::ParseFailure(f.0), raw.trim().to_string()),
        },
        ProblemKind::CodeGeneration => match parse_code_output(&raw) {
            Ok(p) => (Payload::Program(p), String::new()),
            Err(f) => (Payload::ParseFailure(f.0), String::new()),
        },
    };
    Rollout {
        id,
        round: id.round,
        strategy_id: None,
        raw_output: raw,
        payload,
        summary,
        usage,
    }
}

/// Runs the baselines for one problem at a time under a shared config.
pub struct Baselines<'a> {
    config: &'a RunConfig,
    caller: Caller<'a>,
    sandbox: Option<&'a Sandbox>,
    workers: usize,
}

impl<'a> Baselines<'a> {
    pub fn new(config: &'a RunConfig, backend: &'a dyn ChatBackend) -> Self {
        Self {
            config,
            caller: Caller::new(backend, &config.sampling, config.seed),
            sandbox: None,
            workers: 8,
        }
    }

    pub fn with_sandbox(mut self, sandbox: &'a Sandbox) -> Self {
        self.sandbox = Some(sandbox);
        self
    }

    /// Concurrent generations per iteration; 1 runs them in order.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    fn header(
        &self,
        problem: &ProblemSpec,
        kind: BaselineKind,
        iters: u32,
        width: u32,
    ) -> TraceHeader {
        TraceHeader {
            schema: TRACE_SCHEMA.to_string(),
            problem_id: problem.id.clone(),
            problem_kind: problem.kind,
            config_fingerprint: self.config.fingerprint(),
            rounds_planned: iters,
            rollouts_per_round: width,
            context_window_budget: problem.context_window_budget,
            knowledge_cap_fraction: self.config.knowledge_cap_fraction,
            baseline: Some(kind),
        }
    }

    fn initial_sample(
        &self,
        problem: &ProblemSpec,
        round: u32,
        index: u32,
    ) -> Result<Rollout, BackendError> {
        let template = match problem.kind {
            ProblemKind::MathIntegerAnswer => PromptTemplate::AimeInitial,
            ProblemKind::CodeGeneration => PromptTemplate::SolverCode,
        };
        let bindings = Bindings::new()
            .problem(&problem.statement)
            .knowledge(crate::backend::prompts::NO_KNOWLEDGE)
            .reference(crate::backend::prompts::NO_REFERENCE)
            .strategy("Solve the problem directly.");
        let prompt = render_prompt(template, &bindings).expect("all placeholders bound");
        let key = RequestKey::new(&problem.id, Purpose::Sample, round, index);
        let resp = self
            .caller
            .call(&key, prompt.system.as_deref(), prompt.user)?;
        Ok(to_rollout(
            problem.kind,
            RolloutId::new(round, index),
            resp.content,
            resp.usage,
        ))
    }

    /// N independent single-shot generations, reduced by majority vote
    /// (integer answers) or by the configured selector (programs).
    pub fn parallel_baseline(
        &self,
        problem: &ProblemSpec,
        n: u32,
    ) -> Result<BaselineRecord, BaselineError> {
        if n == 0 {
            return Err(BaselineError::InvalidParameters(
                "N must be at least 1".into(),
            ));
        }
        let results = parallel_map(n as usize, self.workers, |i| {
            self.initial_sample(problem, 1, i as u32 + 1)
        });
        let (rollouts, last_err) = split(results);
        if rollouts.is_empty() {
            return Err(BaselineError::AllFailed {
                iteration: None,
                source: last_err.expect("n >= 1"),
            });
        }
        let mut iteration = BaselineIteration {
            iteration: 1,
            generation_calls: n,
            rollouts,
            selection: None,
            majority: None,
        };
        if problem.kind == ProblemKind::MathIntegerAnswer {
            let answers: Vec<u16> = iteration
                .rollouts
                .iter()
                .filter_map(|r| r.payload.answer())
                .collect();
            if let Ok(m) = majority_vote(&answers) {
                iteration.selection = Some(vote_selection(&iteration.rollouts, &m));
                iteration.majority = Some(m.winner);
            }
        } else {
            iteration.selection = self.final_selection(problem, &iteration.rollouts, 1)?;
        }
        info!(problem = %problem.id, samples = n, majority = ?iteration.majority, "parallel baseline finished");
        Ok(BaselineRecord {
            header: self.header(problem, BaselineKind::Parallel, 1, n),
            iterations: vec![iteration],
        })
    }

    /// Recursive Self-Aggregation. Iteration 1 samples `population`
    /// candidates; each later iteration builds `population` new ones, each
    /// from a uniformly drawn subset of the previous population.
    pub fn rsa_run(
        &self,
        problem: &ProblemSpec,
        population: u32,
        iterations: u32,
        subset_size: u32,
    ) -> Result<BaselineRecord, BaselineError> {
        if population == 0 || iterations == 0 {
            return Err(BaselineError::InvalidParameters(
                "population and iterations must be at least 1".into(),
            ));
        }
        if subset_size == 0 || subset_size > population {
            return Err(BaselineError::InvalidParameters(format!(
                "subset size {subset_size} must be in 1..={population}"
            )));
        }
        let mut record = BaselineRecord {
            header: self.header(problem, BaselineKind::Rsa, iterations, population),
            iterations: Vec::with_capacity(iterations as usize),
        };
        let mut previous: Vec<Rollout> = Vec::new();
        for it in 1..=iterations {
            let results = parallel_map(population as usize, self.workers, |slot| {
                let index = slot as u32 + 1;
                if it == 1 {
                    self.initial_sample(problem, it, index)
                } else {
                    self.aggregate(problem, &previous, subset_size, it, index)
                }
            });
            let (rollouts, last_err) = split(results);
            if rollouts.is_empty() {
                return Err(BaselineError::AllFailed {
                    iteration: Some(it),
                    source: last_err.expect("population >= 1"),
                });
            }
            if rollouts.len() < population as usize {
                warn!(problem = %problem.id, iteration = it, survivors = rollouts.len(), "some RSA slots failed");
            }
            previous = rollouts.clone();
            record.iterations.push(BaselineIteration {
                iteration: it,
                generation_calls: population,
                rollouts,
                selection: None,
                majority: None,
            });
        }
        let last = record.iterations.last_mut().expect("iterations >= 1");
        last.selection = self.final_selection(problem, &last.rollouts, iterations)?;
        info!(problem = %problem.id, population, iterations, "RSA finished");
        Ok(record)
    }

    fn aggregate(
        &self,
        problem: &ProblemSpec,
        previous: &[Rollout],
        subset_size: u32,
        iteration: u32,
        index: u32,
    ) -> Result<Rollout, BackendError> {
        let key = RequestKey::new(&problem.id, Purpose::Aggregate, iteration, index);
        let mut rng = ChaCha8Rng::seed_from_u64(key.seed(self.caller.seed));
        let m = (subset_size as usize).min(previous.len());
        let mut picked: Vec<usize> = sample(&mut rng, previous.len(), m).into_vec();
        picked.sort_unstable();
        let mut user = format!(
            "## Problem\n{}\n\n## Candidate Solutions\n",
            problem.statement
        );
        for (pos, &i) in picked.iter().enumerate() {
            user.push_str(&render_candidate(pos + 1, &previous[i]));
            user.push('\n');
        }
        user.push_str(match problem.kind {
            ProblemKind::MathIntegerAnswer => {
                "Aggregate these solutions into an improved one. End with:\n[Summary]: <key steps>\n[Answer]: \\boxed{<integer 0-999>}"
            }
            ProblemKind::CodeGeneration => {
                "Aggregate these solutions into an improved one. Give the complete program in a single ```python block."
            }
        });
        let resp = self.caller.call(&key, Some(AGGREGATE_SYSTEM), user)?;
        Ok(to_rollout(
            problem.kind,
            RolloutId::new(iteration, index),
            resp.content,
            resp.usage,
        ))
    }

    fn final_selection(
        &self,
        problem: &ProblemSpec,
        rollouts: &[Rollout],
        round: u32,
    ) -> Result<Option<SelectionResult>, BaselineError> {
        let empty = KnowledgeList::new();
        let pool: Vec<&Rollout> = rollouts.iter().collect();
        let caller = &self.caller;
        let result = match (self.config.selector, problem.kind, self.sandbox) {
            (SelectorKind::SelfRank, _, _) => self_rank(problem, &pool, &empty, caller, round),
            (_, ProblemKind::MathIntegerAnswer, _) => {
                select_math(problem, &pool, &empty, caller, round)
            }
            (_, ProblemKind::CodeGeneration, Some(sandbox)) => {
                let programs: Vec<&str> = rollouts
                    .iter()
                    .filter_map(|r| r.payload.program())
                    .collect();
                match generate_tests(problem, &programs, &empty, caller, round) {
                    Ok(suite) => {
                        let cands: Vec<_> = rollouts
                            .iter()
                            .filter_map(|r| r.payload.program().map(|p| (r.id, p)))
                            .collect();
                        let reports = sandbox.execute_all(&cands, &suite)?;
                        select_code(problem, &pool, &reports, &empty, caller, round)
                    }
                    Err(SandboxError::EmptyTestSuite) => {
                        self_rank(problem, &pool, &empty, caller, round)
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            (_, ProblemKind::CodeGeneration, None) => {
                self_rank(problem, &pool, &empty, caller, round)
            }
        };
        Ok(result.ok())
    }
}

fn split(results: Vec<Result<Rollout, BackendError>>) -> (Vec<Rollout>, Option<BackendError>) {
    let mut ok = Vec::new();
    let mut last = None;
    for r in results {
        match r {
            Ok(x) => ok.push(x),
            Err(e) => last = Some(e),
        }
    }
    (ok, last)
}

/// Ranks the most recent sample carrying the winning answer first.
fn vote_selection(rollouts: &[Rollout], m: &Majority) -> SelectionResult {
    let mut ranking: Vec<RolloutId> = rollouts
        .iter()
        .rev()
        .filter(|r| r.payload.answer() == Some(m.winner))
        .map(|r| r.id)
        .collect();
    ranking.extend(
        rollouts
            .iter()
            .filter(|r| r.payload.answer() != Some(m.winner))
            .map(|r| r.id),
    );
    SelectionResult {
        chosen: ranking[0],
        ranking,
        rationale: format!(
            "majority vote: {} of {} samples",
            m.counts[&m.winner],
            rollouts.len()
        ),
        reports: None,
    }
}
