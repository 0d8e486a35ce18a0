//! Offline stand-in for an integer-answer solver.
//!
//! Each problem has a hidden answer derived from `world_seed` and the problem
//! id. A solve call succeeds with probability `min(1, p0 + beta * n)`, where
//! `n` counts rendered knowledge entries (`- [kN] ...` lines) that mention one
//! of the unlock tokens. Critiques of a wrong reference solution name an
//! unlock token with probability `unlock_rate`, so knowledge harvested from
//! them raises later success rates. Every reply is a pure function of the
//! request key and seed.
//!
//! Prompt conventions it reads: `### Candidate N` / `### Selected Solution` /
//! `### Alternative Solution` headers followed by an `Answer: X` line, the
//! `### Reference Solution` block, and `exactly N` in strategy requests.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Purpose, RequestKey};
use crate::domain::{token_proxy, SyntheticSettings, Usage};

const TOKEN_CRITIQUES: [&str; 6] = [
    "never checks the {tok} that the construction preserves",
    "misses the {tok} argument that pins down the count",
    "applies the {tok} step to the wrong quantity",
    "ignores the {tok} constraint on admissible values",
    "loses track of {tok} while reducing modulo the base",
    "treats the {tok} relation as optional when it is forced",
];

const PLAIN_CRITIQUES: [&str; 6] = [
    "drops a term in the final summation",
    "double counts the symmetric cases",
    "mis-adds the last two partial results",
    "uses the wrong range for the outer index",
    "stops the case split one case too early",
    "copies a coefficient incorrectly between steps",
];

const VERBS: [&str; 8] = [
    "assume", "skip", "overlook", "trust", "conflate", "misapply", "rush", "hardcode",
];

const OBJECTS: [&str; 10] = [
    "the base case",
    "symmetric configurations",
    "overlapping counts",
    "degenerate cases",
    "the final normalization",
    "sign conventions",
    "the recursion bound",
    "boundary terms of the sum",
    "the choice of modulus",
    "the factorization step",
];

const TOKEN_TAILS: [&str; 4] = [
    "without verifying the {tok}",
    "before establishing the {tok}",
    "when the {tok} already rules it out",
    "instead of exploiting the {tok}",
];

const PLAIN_TAILS: [&str; 4] = [
    "before recomputing small cases",
    "when a direct check is cheap",
    "without a sanity estimate",
    "after a long chain of algebra",
];

const STRATEGIES: [&str; 16] = [
    "Set up a recurrence and compute small cases first",
    "Use complementary counting over the forbidden configurations",
    "Work modulo small primes and combine with the Chinese remainder theorem",
    "Introduce coordinates and reduce to an algebraic equation",
    "Enumerate cases by the size of the largest part",
    "Build a generating function and extract the coefficient",
    "Look for an extremal element and argue by contradiction",
    "Translate the condition into a graph and count paths",
    "Bound the answer from both sides and close the gap",
    "Simplify with a substitution that symmetrises the expression",
    "Apply inclusion and exclusion over the constraint sets",
    "Track the process backwards from the final state",
    "Use vectors and dot products for the geometric relations",
    "Split into residue classes and count each separately",
    "Compute a few instances numerically and guess the closed form",
    "Reformulate as an optimisation and use convexity",
];

fn digest_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn candidate_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^### Candidate (\d+)\s*\nAnswer: (\d+)").unwrap())
}

fn labelled_answer(text: &str, header: &str) -> Option<u16> {
    let pos = text.find(header)?;
    let rest = &text[pos + header.len()..];
    let line = rest.lines().find(|l| l.starts_with("Answer: "))?;
    line["Answer: ".len()..].trim().parse().ok()
}

fn reference_answer(text: &str) -> Option<u16> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"final answer was (\d+)").unwrap());
    let start = text.find("### Reference Solution")?;
    let end = text[start..]
        .find("### Output format")
        .map_or(text.len(), |e| start + e);
    re.captures_iter(&text[start..end])
        .last()
        .and_then(|c| c[1].parse().ok())
}

/// Offline math solver model. See the module docs for its rules.
#[derive(Debug)]
pub struct SyntheticSolver {
    settings: SyntheticSettings,
    calls: AtomicU64,
}

impl SyntheticSolver {
    pub fn new(settings: SyntheticSettings) -> Self {
        Self {
            settings,
            calls: AtomicU64::new(0),
        }
    }

    pub fn settings(&self) -> &SyntheticSettings {
        &self.settings
    }

    /// The answer this world considers correct for `problem_id`.
    pub fn world_answer(world_seed: u64, problem_id: &str) -> u16 {
        (digest_u64(&[&world_seed.to_le_bytes(), problem_id.as_bytes()]) % 1000) as u16
    }

    pub fn hidden_answer(&self, problem_id: &str) -> u16 {
        Self::world_answer(self.settings.world_seed, problem_id)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Rendered knowledge entries in `text` that name an unlock token.
    pub fn unlocked_entries(&self, text: &str) -> usize {
        text.lines()
            .map(str::trim_start)
            .filter(|l| l.starts_with("- [k"))
            .filter(|l| self.has_token(l))
            .count()
    }

    fn has_token(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.settings
            .unlock_tokens
            .iter()
            .any(|t| lower.contains(&t.to_lowercase()))
    }

    fn success_probability(&self, unlocked: usize) -> f64 {
        (self.settings.p0 + self.settings.beta * unlocked as f64).clamp(0.0, 1.0)
    }

    fn token(&self, rng: &mut ChaCha8Rng) -> String {
        self.settings
            .unlock_tokens
            .choose(rng)
            .cloned()
            .unwrap_or_default()
    }

    fn draw_answer(&self, rng: &mut ChaCha8Rng, correct: u16, p: f64) -> u16 {
        if rng.gen_bool(p) {
            correct
        } else {
            let other = rng.gen_range(0..999u16);
            if other >= correct {
                other + 1
            } else {
                other
            }
        }
    }

    fn solution_text(&self, answer: u16, rng: &mut ChaCha8Rng) -> String {
        let object = OBJECTS.choose(rng).expect("non-empty");
        format!(
            "[Summary]: I organised the computation around {object} and carried every step \
             through to the end; the final answer was {answer}.\n\
             [Answer]: Therefore, final answer is \\boxed{{{answer}}}."
        )
    }

    fn solve(&self, key: &RequestKey, text: &str, rng: &mut ChaCha8Rng) -> String {
        let correct = self.hidden_answer(&key.problem_id);
        let p = self.success_probability(self.unlocked_entries(text));
        let answer = self.draw_answer(rng, correct, p);
        let mut out = String::new();
        if text.contains("### Reference Solution") {
            out.push_str("[Why the reference solution is wrong?]: ");
            match reference_answer(text) {
                Some(r) if r != answer => {
                    let critique = if r != correct && rng.gen_bool(self.settings.unlock_rate) {
                        let tok = self.token(rng);
                        TOKEN_CRITIQUES
                            .choose(rng)
                            .expect("non-empty")
                            .replace("{tok}", &tok)
                    } else {
                        PLAIN_CRITIQUES.choose(rng).expect("non-empty").to_string()
                    };
                    out.push_str(&format!(
                        "The reference solution's final answer is {r}. It is incorrect because it {critique}."
                    ));
                }
                _ => out.push_str("N/A"),
            }
            out.push('\n');
        }
        out.push_str(&self.solution_text(answer, rng));
        out
    }

    fn aggregate(&self, key: &RequestKey, text: &str, rng: &mut ChaCha8Rng) -> String {
        let correct = self.hidden_answer(&key.problem_id);
        let hits = candidate_re()
            .captures_iter(text)
            .filter(|c| c[2].parse::<u16>().ok() == Some(correct))
            .count();
        let answer = self.draw_answer(rng, correct, self.success_probability(hits));
        self.solution_text(answer, rng)
    }

    fn select(&self, key: &RequestKey, text: &str, rng: &mut ChaCha8Rng) -> String {
        let correct = self.hidden_answer(&key.problem_id);
        let mut cands: Vec<(usize, Option<u16>)> = candidate_re()
            .captures_iter(text)
            .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok())))
            .collect();
        // newest first
        cands.sort_by_key(|c| std::cmp::Reverse(c.0));
        if rng.gen_bool(self.settings.judge_accuracy) {
            cands.sort_by_key(|(_, a)| *a != Some(correct));
        }
        let order: Vec<String> = cands.iter().map(|(i, _)| i.to_string()).collect();
        format!(
            "Checked each candidate for consistency.\n[RANKING] {}",
            order.join(", ")
        )
    }

    fn reflect(&self, text: &str, rng: &mut ChaCha8Rng) -> String {
        let chosen = labelled_answer(text, "### Selected Solution");
        let other = labelled_answer(text, "### Alternative Solution");
        let (Some(_), Some(b)) = (chosen, other) else {
            return "No comparable solutions.".into();
        };
        if chosen == other {
            return "Both solutions agree; no new lessons.".into();
        }
        let verb = VERBS.choose(rng).expect("non-empty");
        let object = OBJECTS.choose(rng).expect("non-empty");
        let tail = if rng.gen_bool(self.settings.unlock_rate) {
            let tok = self.token(rng);
            TOKEN_TAILS
                .choose(rng)
                .expect("non-empty")
                .replace("{tok}", &tok)
        } else {
            PLAIN_TAILS.choose(rng).expect("non-empty").to_string()
        };
        let mut out = format!(
            "[INSIGHT] Do not {verb} {object} {tail}; that is how the route to {b} went wrong."
        );
        if rng.gen_bool(0.1) {
            let stale = text
                .lines()
                .map(str::trim_start)
                .filter(|l| l.starts_with("- [k") && !self.has_token(l))
                .find_map(|l| l[3..].split(']').next().map(str::to_string));
            if let Some(id) = stale {
                out.push_str(&format!("\n[PRUNE] {id}"));
            }
        }
        out
    }

    fn strategies(&self, text: &str, rng: &mut ChaCha8Rng) -> String {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| Regex::new(r"exactly (\d+)").unwrap());
        let k: usize = re
            .captures(text)
            .and_then(|c| c[1].parse().ok())
            .unwrap_or(1);
        let mut pool: Vec<&str> = STRATEGIES.to_vec();
        pool.shuffle(rng);
        (0..k)
            .map(|i| {
                let base = pool[i % pool.len()];
                if i < pool.len() {
                    format!("[STRATEGY] {base}")
                } else {
                    format!("[STRATEGY] {base}, angle {}", i / pool.len() + 1)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl ChatBackend for SyntheticSolver {
    fn id(&self) -> &str {
        "synthetic"
    }

    fn complete(
        &self,
        key: &RequestKey,
        request: &ChatRequest,
    ) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let text = request.full_text();
        let seed = digest_u64(&[
            &request.seed.unwrap_or(0).to_le_bytes(),
            key.hash().as_bytes(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let content = match key.purpose {
            Purpose::Solve | Purpose::Sample => self.solve(key, &text, &mut rng),
            Purpose::Aggregate => self.aggregate(key, &text, &mut rng),
            Purpose::Select => self.select(key, &text, &mut rng),
            Purpose::Reflect => self.reflect(&text, &mut rng),
            Purpose::Strategy => self.strategies(&text, &mut rng),
            Purpose::Tests | Purpose::Judge => {
                return Err(BackendError::Unsupported(format!(
                    "synthetic solver has no {} capability",
                    key.purpose
                )))
            }
        };
        Ok(ChatResponse {
            usage: Usage {
                prompt_tokens: token_proxy(&text) as u64,
                completion_tokens: token_proxy(&content) as u64,
            },
            content,
            backend_id: self.id().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::parse::{items_with_tag, parse_math_output, parse_ranking, section};
    use crate::domain::Sampling;

    fn solver(p0: f64, beta: f64) -> SyntheticSolver {
        SyntheticSolver::new(SyntheticSettings {
            p0,
            beta,
            ..SyntheticSettings::default()
        })
    }

    fn call(s: &SyntheticSolver, purpose: Purpose, index: u32, user: &str) -> String {
        let req = ChatRequest::new(None, user, &Sampling::default()).with_seed(7);
        s.complete(&RequestKey::new("p1", purpose, 1, index), &req)
            .unwrap()
            .content
    }

    #[test]
    fn unlocked_knowledge_yields_correct_answer() {
        let s = solver(0.0, 1.0);
        let a = s.hidden_answer("p1");
        let prompt = "Problem\n## Empirical Mistakes List\n- [k1] Do not skip the parity check";
        let out = call(&s, Purpose::Solve, 0, prompt);
        assert!(out.ends_with(&format!("\\boxed{{{a}}}.")));
        assert_eq!(parse_math_output(&out).unwrap().answer, a);
    }

    #[test]
    fn without_knowledge_and_p0_zero_always_wrong() {
        let s = solver(0.0, 1.0);
        let a = s.hidden_answer("p1");
        for i in 0..50 {
            let out = call(&s, Purpose::Solve, i, "Problem without help");
            assert_ne!(parse_math_output(&out).unwrap().answer, a);
        }
    }

    #[test]
    fn replies_are_deterministic() {
        let s = solver(0.1, 0.15);
        assert_eq!(
            call(&s, Purpose::Solve, 3, "x"),
            call(&s, Purpose::Solve, 3, "x")
        );
    }

    #[test]
    fn critique_of_wrong_reference_names_token() {
        let s = solver(1.0, 0.0);
        let a = s.hidden_answer("p1");
        let wrong = (a + 1) % 1000;
        let prompt = format!(
            "### Reference Solution\nTake these...\nthe final answer was {wrong}.\n\n### Output format\n"
        );
        let out = call(&s, Purpose::Solve, 0, &prompt);
        let why = section(&out, "Why the reference solution is wrong?").unwrap();
        assert!(why.contains(&format!("final answer is {wrong}")));
        assert!(s.has_token(why), "{why}");
        assert_eq!(parse_math_output(&out).unwrap().answer, a);
    }

    #[test]
    fn agreeing_with_reference_writes_na() {
        let s = solver(1.0, 0.0);
        let a = s.hidden_answer("p1");
        let prompt =
            format!("### Reference Solution\nthe final answer was {a}.\n### Output format");
        let out = call(&s, Purpose::Solve, 0, &prompt);
        assert_eq!(
            section(&out, "Why the reference solution is wrong?"),
            Some("N/A")
        );
    }

    #[test]
    fn judge_ranks_correct_first() {
        let s = solver(0.1, 0.15);
        let a = s.hidden_answer("p1");
        let prompt = format!(
            "### Candidate 1\nAnswer: {a}\nstuff\n\n### Candidate 2\nAnswer: {}\nstuff",
            (a + 5) % 1000
        );
        let out = call(&s, Purpose::Select, 0, &prompt);
        assert_eq!(parse_ranking(&out, 2), Some(vec![0, 1]));
        let prompt = format!(
            "### Candidate 1\nAnswer: 1{}\n\n### Candidate 2\nAnswer: 2\n",
            a
        );
        let out = call(&s, Purpose::Select, 1, &prompt);
        assert_eq!(parse_ranking(&out, 2), Some(vec![1, 0]));
    }

    #[test]
    fn strategies_are_distinct() {
        let s = solver(0.1, 0.15);
        let out = call(&s, Purpose::Strategy, 0, "Propose exactly 20 strategies");
        let items = items_with_tag(&out, "STRATEGY");
        assert_eq!(items.len(), 20);
        let set: std::collections::BTreeSet<_> = items.iter().collect();
        assert_eq!(set.len(), 20);
        assert!(items.iter().all(|i| !s.has_token(i)));
    }

    #[test]
    fn reflect_needs_disagreement() {
        let s = solver(0.1, 0.15);
        let same = "### Selected Solution\nAnswer: 3\n\n### Alternative Solution\nAnswer: 3\n";
        assert!(items_with_tag(&call(&s, Purpose::Reflect, 0, same), "INSIGHT").is_empty());
        let diff = "### Selected Solution\nAnswer: 3\n\n### Alternative Solution\nAnswer: 4\n";
        let out = call(&s, Purpose::Reflect, 0, diff);
        let ins = items_with_tag(&out, "INSIGHT");
        assert_eq!(ins.len(), 1);
        assert!(ins[0].starts_with("Do not"));
    }

    #[test]
    fn code_purposes_unsupported() {
        let s = solver(0.1, 0.15);
        let req = ChatRequest::new(None, "x", &Sampling::default());
        assert!(matches!(
            s.complete(&RequestKey::new("p", Purpose::Tests, 1, 0), &req),
            Err(BackendError::Unsupported(_))
        ));
    }
}
