//! Prompt templates.
//!
//! The five named templates carry their instruction text verbatim; only the
//! surrounding frame (where the problem, knowledge and strategy are placed)
//! is ours. Placeholders are `{problem_statement}`, `{knowledge_text}`,
//! `{reference_solution}` and `{strategy_text}`. Other brace groups such as
//! `\boxed{<integer>}` are literal text.

use thiserror::Error;

/// Value bound to `reference_solution` when there is nothing to revise.
pub const NO_REFERENCE: &str = "N/A";

/// Value bound to `knowledge_text` before anything has been learned.
pub const NO_KNOWLEDGE: &str = "(no accumulated knowledge yet)";

pub const SOLVER_SYSTEM: &str = "You are an expert competitive programmer solving coding problems.

## YOUR TASK:
1. Read the problem statement carefully
2. If you have previous attempts/solutions shown, analyze them critically for bugs
3. Write a complete, working Python solution
4. If a reference solution exists, analyze it critically for bugs. Your job is to improve it.

## CRITICAL OUTPUT FORMAT (MANDATORY):
Your solution MUST be wrapped in a Python code block like this:
```python
# your code here
```

## SOLUTION QUALITY:
- Ensure your solution solves the problem as stated
- Check time/space complexity against problem constraints
- Test your logic mentally with the given examples

## VERIFICATION:
Before finalizing, trace through your solution with the example inputs from the problem.
If your output doesn't match the expected output, you have a bug - fix it before submitting.";

pub const KNOWLEDGE_MANAGER_SYSTEM: &str =
    "You are a technical reviewer analyzing competitive programming solutions.

Your job:
1. Rank solutions by CORRECTNESS first, then EFFICIENCY
2. Extract SPECIFIC, ACTIONABLE lessons from failures (not generic tips)
3. DEDUPLICATE insights - don't repeat what's already in knowledge base
4. Update the knowledge base with the best solution

DO NOT solve the problem yourself. Focus only on evaluation and knowledge curation.
IMPORTANT: Call update_knowledge exactly ONCE at the end.";

pub const TEST_GENERATOR_SYSTEM: &str =
    "You are a test engineer designing test cases for competitive programming.

Your task:
1. Analyze the problem and candidate solutions
2. Generate discriminating test cases that differentiate solutions
3. Call execute_generated_tests EXACTLY ONCE

Prioritize tests that:
- Target differences in logic between solutions
- Expose bugs: off-by-one, boundary conditions, edge cases
- Include problem examples for baseline validation";

pub const AIME_INITIAL: &str = "Guideline: Let's solve this problem. Be thorough.

## Output format (Use exact headers including square brackets):
[Summary]: A paragraph of detailed step-by-step summary of your solution, write
thoroughly and in details, note down every steps of calculation you did, and
what was the final answer you got.
[Answer]: Therefore, final answer is \\boxed{<integer>}.

Let's think step by step. Follow the output format strictly.";

pub const AIME_ITERATIVE: &str =
    "Let's solve this problem. I have some additional information that might help.
Examine them carefully and see if they can help you solve the problem more
accurately.

{knowledge_text}

### Reference Solution
Take these information with a grain of salt, they might be wrong or incomplete.
Try to spot the mistakes in the solution and see if there is a more accurate
approach.
{reference_solution}

### Output format (Use exact headers including square brackets):
[Why the reference solution is wrong?]: If you get a different solution than
the reference solution, explain here in a stand-alone manner, you must explain
what is the reference solution's final answer, and why is it incorrect.
(or write \"N/A\" if you agree with the reference solution)
[Summary]: A paragraph of detailed step-by-step summary of your solution, write
thoroughly and in details, note down every steps of calculation you did, and
what was the final answer you got.
[Answer]: Therefore, final answer is \\boxed{<integer>}.

Let's think step by step. Follow the output format strictly.";

/// Structured-text stand-ins for the tool calls the verbatim prompts mention.
/// Appended to the user message of the corresponding call.
pub const REFLECT_FORMAT: &str = "Respond with plain text sections instead of a tool call:
[INSIGHT] <one specific lesson, phrased as a negative constraint: what NOT to do>
(repeat [INSIGHT] for each new lesson; skip lessons already in the knowledge base)
[PRUNE] <id of at most one outdated knowledge entry, e.g. k3> (optional)
[REJECTED_ANSWER] <integer answer now known to be wrong> (optional, integer-answer problems only)";

pub const TESTS_FORMAT: &str = "Respond with a single [TESTS] block instead of a tool call:
[TESTS]
[INPUT]
<exact stdin for test 1>
[OUTPUT]
<exact expected stdout for test 1>
[INPUT]
<exact stdin for test 2>
[OUTPUT]
<exact expected stdout for test 2>
[/TESTS]";

pub const RANKING_FORMAT: &str =
    "Finish with one line listing every candidate number from best to worst:
[RANKING] 2, 1, 3";

pub const STRATEGY_SYSTEM: &str =
    "You design exploration strategies for solving a hard problem over several attempts.
Each strategy is a short directive naming a concrete approach: an algorithmic paradigm,
a proof technique, a decomposition, or an implementation priority.
Strategies must be complementary, avoid approaches the knowledge list says have failed,
and explore new directions.";

pub const MATH_SELECT_SYSTEM: &str =
    "You are verifying candidate solutions to a problem with exactly one correct integer answer.
Check each candidate for consistency, logical errors and arithmetic slips. Candidates whose
answer was previously self-rejected are very likely wrong. Do not solve the problem from scratch.";

pub const CODE_JUDGE_SYSTEM: &str =
    "You are reviewing candidate programs that passed the same number of generated tests.
Prefer cleaner logic, better handling of edge cases mentioned in the problem, and consistency
with the accumulated knowledge about approaches that previously failed.";

pub const AGGREGATE_SYSTEM: &str =
    "You are given several candidate solutions to the same problem. Some may be wrong.
Aggregate these solutions into an improved one: keep correct reasoning, discard mistakes,
and produce a single complete solution in the required output format.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptTemplate {
    SolverCode,
    KnowledgeManager,
    TestGenerator,
    AimeInitial,
    AimeIterative,
}

pub const PLACEHOLDERS: [&str; 4] = [
    "problem_statement",
    "knowledge_text",
    "reference_solution",
    "strategy_text",
];

impl PromptTemplate {
    pub fn name(self) -> &'static str {
        match self {
            PromptTemplate::SolverCode => "solver_code",
            PromptTemplate::KnowledgeManager => "knowledge_manager",
            PromptTemplate::TestGenerator => "test_generator",
            PromptTemplate::AimeInitial => "aime_initial",
            PromptTemplate::AimeIterative => "aime_iterative",
        }
    }

    pub fn system(self) -> Option<&'static str> {
        match self {
            PromptTemplate::SolverCode => Some(SOLVER_SYSTEM),
            PromptTemplate::KnowledgeManager => Some(KNOWLEDGE_MANAGER_SYSTEM),
            PromptTemplate::TestGenerator => Some(TEST_GENERATOR_SYSTEM),
            PromptTemplate::AimeInitial | PromptTemplate::AimeIterative => None,
        }
    }

    /// User-message frame with placeholders.
    pub fn user_frame(self) -> String {
        match self {
            PromptTemplate::SolverCode => "## Problem\n{problem_statement}\n\n\
                 ## Accumulated Knowledge\n{knowledge_text}\n\n\
                 ## Reference Solution\n{reference_solution}\n\n\
                 ## Strategy for This Attempt\n{strategy_text}"
                .to_string(),
            PromptTemplate::KnowledgeManager => {
                "## Problem\n{problem_statement}\n\n## Current Knowledge Base\n{knowledge_text}"
                    .to_string()
            }
            PromptTemplate::TestGenerator => {
                "## Problem\n{problem_statement}\n\n## Known Pitfalls\n{knowledge_text}".to_string()
            }
            PromptTemplate::AimeInitial => {
                format!(
                    "{{problem_statement}}\n\n{AIME_INITIAL}\n\n### Strategy\n{{strategy_text}}"
                )
            }
            PromptTemplate::AimeIterative => format!(
                "{{problem_statement}}\n\n{AIME_ITERATIVE}\n\n### Strategy\n{{strategy_text}}"
            ),
        }
    }

    /// Placeholders this template requires, in order of first appearance.
    pub fn placeholders(self) -> Vec<&'static str> {
        let mut found = Vec::new();
        for seg in scan(&self.user_frame()) {
            if let Segment::Placeholder(name) = seg {
                if !found.contains(&name) {
                    found.push(name);
                }
            }
        }
        found
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing binding for placeholder `{0}`")]
    MissingBinding(&'static str),
}

#[derive(Debug, Clone, Default)]
pub struct Bindings {
    pub problem_statement: Option<String>,
    pub knowledge_text: Option<String>,
    pub reference_solution: Option<String>,
    pub strategy_text: Option<String>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn problem(mut self, v: impl Into<String>) -> Self {
        self.problem_statement = Some(v.into());
        self
    }

    pub fn knowledge(mut self, v: impl Into<String>) -> Self {
        self.knowledge_text = Some(v.into());
        self
    }

    pub fn reference(mut self, v: impl Into<String>) -> Self {
        self.reference_solution = Some(v.into());
        self
    }

    pub fn strategy(mut self, v: impl Into<String>) -> Self {
        self.strategy_text = Some(v.into());
        self
    }

    fn get(&self, name: &str) -> Option<&str> {
        match name {
            "problem_statement" => self.problem_statement.as_deref(),
            "knowledge_text" => self.knowledge_text.as_deref(),
            "reference_solution" => self.reference_solution.as_deref(),
            "strategy_text" => self.strategy_text.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: Option<String>,
    pub user: String,
}

impl RenderedPrompt {
    /// System and user text joined, for inspection.
    pub fn text(&self) -> String {
        match &self.system {
            Some(s) => format!("{s}\n\n{}", self.user),
            None => self.user.clone(),
        }
    }
}

enum Segment<'a> {
    Literal(&'a str),
    Placeholder(&'static str),
}

/// Splits a frame into literal runs and known placeholders. Single pass, so
/// bound values are never rescanned.
fn scan(frame: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = frame;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let hit = PLACEHOLDERS
            .iter()
            .find(|p| after.starts_with(**p) && after[p.len()..].starts_with('}'));
        match hit {
            Some(name) => {
                out.push(Segment::Literal(&rest[..open]));
                out.push(Segment::Placeholder(name));
                rest = &after[name.len() + 1..];
            }
            None => {
                out.push(Segment::Literal(&rest[..=open]));
                rest = after;
            }
        }
    }
    out.push(Segment::Literal(rest));
    out
}

pub fn render_prompt(
    template: PromptTemplate,
    bindings: &Bindings,
) -> Result<RenderedPrompt, PromptError> {
    let frame = template.user_frame();
    let mut user = String::with_capacity(frame.len() + 256);
    for seg in scan(&frame) {
        match seg {
            Segment::Literal(s) => user.push_str(s),
            Segment::Placeholder(name) => user.push_str(
                bindings
                    .get(name)
                    .ok_or(PromptError::MissingBinding(name))?,
            ),
        }
    }
    Ok(RenderedPrompt {
        system: template.system().map(str::to_string),
        user,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full() -> Bindings {
        Bindings::new()
            .problem("Find x.")
            .knowledge("")
            .reference(NO_REFERENCE)
            .strategy("case analysis")
    }

    #[test]
    fn aime_initial_contains_answer_format() {
        let p = render_prompt(PromptTemplate::AimeInitial, &full()).unwrap();
        assert!(p
            .user
            .contains("[Answer]: Therefore, final answer is \\boxed{<integer>}."));
        assert!(p
            .user
            .starts_with("Find x.\n\nGuideline: Let's solve this problem."));
        assert!(p.system.is_none());
    }

    #[test]
    fn solver_code_has_fence_instruction() {
        let p = render_prompt(PromptTemplate::SolverCode, &full()).unwrap();
        assert!(p.text().contains("```python"));
        assert!(p
            .text()
            .contains("Your solution MUST be wrapped in a Python code block"));
    }

    #[test]
    fn iterative_requires_knowledge() {
        let b = Bindings::new().problem("p").reference("r").strategy("s");
        assert_eq!(
            render_prompt(PromptTemplate::AimeIterative, &b),
            Err(PromptError::MissingBinding("knowledge_text"))
        );
    }

    #[test]
    fn iterative_has_reference_header_and_no_residual_placeholders() {
        let p = render_prompt(PromptTemplate::AimeIterative, &full()).unwrap();
        assert!(p
            .user
            .contains("### Reference Solution\nTake these information"));
        for name in PLACEHOLDERS {
            assert!(!p.user.contains(&format!("{{{name}}}")), "{name}");
        }
    }

    #[test]
    fn bound_values_are_not_rescanned() {
        let b = full().strategy("use {knowledge_text} literally");
        let p = render_prompt(PromptTemplate::AimeInitial, &b).unwrap();
        assert!(p.user.ends_with("use {knowledge_text} literally"));
    }

    #[test]
    fn placeholder_sets() {
        assert_eq!(
            PromptTemplate::AimeInitial.placeholders(),
            vec!["problem_statement", "strategy_text"]
        );
        assert_eq!(PromptTemplate::AimeIterative.placeholders().len(), 4);
        assert_eq!(PromptTemplate::SolverCode.placeholders().len(), 4);
    }
}
