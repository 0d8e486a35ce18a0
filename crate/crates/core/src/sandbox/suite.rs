use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use tracing::warn;

use super::{normalize_output, GeneratedTest, SandboxError, TestOrigin};
use crate::backend::prompts::{
    render_prompt, Bindings, PromptTemplate, NO_KNOWLEDGE, TESTS_FORMAT,
};
use crate::backend::{Caller, Purpose, RequestKey};
use crate::domain::{KnowledgeList, ProblemSpec};

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:#+\s*)?(?:\*\*)?(?:(?:sample|example)\s+)?(input|output)(?:\s*#?\d+)?(?:\*\*)?\s*:?\s*(.*)$",
        )
        .unwrap()
    })
}

fn is_section_break(line: &str) -> bool {
    let l = line
        .trim()
        .trim_start_matches('#')
        .trim()
        .to_ascii_lowercase();
    ["explanation", "note", "constraints", "example", "sample"]
        .iter()
        .any(|w| l.starts_with(w) && !header_re().is_match(line))
}

fn finish(lines: &[&str]) -> String {
    let mut v: Vec<&str> = lines.to_vec();
    while v.last().is_some_and(|l| l.trim().is_empty()) {
        v.pop();
    }
    while v.first().is_some_and(|l| l.trim().is_empty()) {
        v.remove(0);
    }
    v.join("\n")
}

/// Finds `Input` / `Output` example pairs in a problem statement.
///
/// Recognises headers such as `Input`, `Sample Input 1:`, `Example Output`
/// (optionally markdown-decorated), with content on the same line or on the
/// following lines. Code fences are ignored. An output ends at the first
/// blank line once it has content.
pub fn detect_examples(statement: &str) -> Vec<(String, String)> {
    #[derive(PartialEq)]
    enum State {
        Idle,
        Input,
        Output,
    }
    let mut pairs = Vec::new();
    let mut state = State::Idle;
    let mut input: Vec<&str> = Vec::new();
    let mut output: Vec<&str> = Vec::new();
    let mut flush = |input: &mut Vec<&str>, output: &mut Vec<&str>| {
        if !output.is_empty() {
            let i = finish(input);
            let o = finish(output);
            if !o.is_empty() {
                pairs.push((i, o));
            }
        }
        input.clear();
        output.clear();
    };
    for line in statement.lines() {
        if line.trim_start().starts_with("```") {
            continue;
        }
        if let Some(c) = header_re().captures(line) {
            let inline = c.get(2).map_or("", |m| m.as_str()).trim();
            if c[1].eq_ignore_ascii_case("input") {
                flush(&mut input, &mut output);
                state = State::Input;
                if !inline.is_empty() {
                    input.push(inline);
                }
            } else if state == State::Input {
                state = State::Output;
                if !inline.is_empty() {
                    output.push(inline);
                }
            }
            continue;
        }
        match state {
            State::Idle => {}
            State::Input => {
                if is_section_break(line) {
                    input.clear();
                    state = State::Idle;
                } else {
                    input.push(line);
                }
            }
            State::Output => {
                let done = (line.trim().is_empty() && !output.is_empty()) || is_section_break(line);
                if done {
                    flush(&mut input, &mut output);
                    state = State::Idle;
                } else if !line.trim().is_empty() || !output.is_empty() {
                    output.push(line);
                }
            }
        }
    }
    if state == State::Output {
        flush(&mut input, &mut output);
    }
    pairs
}

fn with_newline(input: String) -> String {
    if input.is_empty() || input.ends_with('\n') {
        input
    } else {
        input + "\n"
    }
}

/// Parses the last `[TESTS]` block into `(input, expected_output)` pairs.
pub fn parse_tests_block(raw: &str) -> Vec<(String, String)> {
    let Some(start) = raw.rfind("[TESTS]") else {
        return Vec::new();
    };
    let body = &raw[start + "[TESTS]".len()..];
    let body = body.find("[/TESTS]").map_or(body, |e| &body[..e]);
    let mut pairs = Vec::new();
    let mut input: Option<Vec<&str>> = None;
    let mut output: Option<Vec<&str>> = None;
    for line in body.lines() {
        let t = line.trim();
        if t.starts_with("```") {
            continue;
        }
        if let Some(rest) = t.strip_prefix("[INPUT]") {
            if let (Some(i), Some(o)) = (input.take(), output.take()) {
                pairs.push((finish(&i), finish(&o)));
            }
            output = None;
            input = Some(if rest.trim().is_empty() {
                vec![]
            } else {
                vec![rest.trim()]
            });
        } else if let Some(rest) = t.strip_prefix("[OUTPUT]") {
            if input.is_some() {
                output = Some(if rest.trim().is_empty() {
                    vec![]
                } else {
                    vec![rest.trim()]
                });
            }
        } else if let Some(o) = output.as_mut() {
            o.push(line);
        } else if let Some(i) = input.as_mut() {
            i.push(line);
        }
    }
    if let (Some(i), Some(o)) = (input, output) {
        pairs.push((finish(&i), finish(&o)));
    }
    pairs
}

fn input_key(input: &str) -> String {
    normalize_output(input)
}

/// Appends tests whose input is not already present. Returns the added ones.
pub fn merge_tests(suite: &mut Vec<GeneratedTest>, new: Vec<GeneratedTest>) -> Vec<GeneratedTest> {
    let mut seen: BTreeSet<String> = suite.iter().map(|t| input_key(&t.input)).collect();
    let mut added = Vec::new();
    for t in new {
        if seen.insert(input_key(&t.input)) {
            suite.push(t.clone());
            added.push(t);
        }
    }
    added
}

/// Builds this round's test suite: statement examples first, then tests
/// from the model's `[TESTS]` block, deduplicated by input.
///
/// A failed model call leaves only the examples. Returns
/// [`SandboxError::EmptyTestSuite`] when nothing is left.
pub fn generate_tests(
    problem: &ProblemSpec,
    candidates: &[&str],
    knowledge: &KnowledgeList,
    caller: &Caller<'_>,
    round: u32,
) -> Result<Vec<GeneratedTest>, SandboxError> {
    let examples: Vec<GeneratedTest> = detect_examples(&problem.statement)
        .into_iter()
        .enumerate()
        .map(|(i, (inp, out))| {
            GeneratedTest::new(
                format!("ex{}", i + 1),
                with_newline(inp),
                &out,
                round,
                TestOrigin::ProblemExample,
            )
        })
        .collect();

    let knowledge_text = if knowledge.is_empty() {
        NO_KNOWLEDGE.to_string()
    } else {
        knowledge.render()
    };
    let rendered = render_prompt(
        PromptTemplate::TestGenerator,
        &Bindings::new()
            .problem(&problem.statement)
            .knowledge(knowledge_text),
    )
    .expect("test generator bindings complete");
    let mut user = rendered.user;
    user.push_str("\n\n## Candidate Solutions\n");
    for (i, c) in candidates.iter().enumerate() {
        user.push_str(&format!("### Candidate {}\n```python\n{c}\n```\n\n", i + 1));
    }
    user.push_str(TESTS_FORMAT);

    let key = RequestKey::new(&problem.id, Purpose::Tests, round, 0);
    let generated: Vec<GeneratedTest> = match caller.call(&key, rendered.system.as_deref(), user) {
        Ok(resp) => parse_tests_block(&resp.content)
            .into_iter()
            .enumerate()
            .map(|(i, (inp, out))| {
                GeneratedTest::new(
                    format!("t{round}.{}", i + 1),
                    with_newline(inp),
                    &out,
                    round,
                    TestOrigin::ModelGenerated,
                )
            })
            .collect(),
        Err(e) => {
            warn!(problem = %problem.id, round, error = %e, "test generation failed; using statement examples only");
            Vec::new()
        }
    };

    let mut suite = Vec::new();
    merge_tests(&mut suite, examples);
    merge_tests(&mut suite, generated);
    if suite.is_empty() {
        return Err(SandboxError::EmptyTestSuite);
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Script, ScriptedBackend};
    use crate::domain::{ProblemKind, Sampling};

    const STATEMENT: &str = "Double the number.\n\nInput\nA single integer n.\n\nExample\nInput\n3\nOutput\n6\n\nNote: trivial.";

    #[test]
    fn detects_worked_example() {
        let ex = detect_examples(STATEMENT);
        assert_eq!(ex, vec![("3".to_string(), "6".to_string())]);
    }

    #[test]
    fn detects_numbered_samples_and_inline_forms() {
        let s = "Sample Input 1:\n1 2\nSample Output 1:\n3\n\nSample Input 2:\n```\n4 5\n```\nSample Output 2:\n```\n9\n```\n\nInput: 7 7\nOutput: 14";
        assert_eq!(
            detect_examples(s),
            vec![
                ("1 2".to_string(), "3".to_string()),
                ("4 5".to_string(), "9".to_string()),
                ("7 7".to_string(), "14".to_string()),
            ]
        );
        assert!(detect_examples("No examples here.").is_empty());
    }

    #[test]
    fn tests_block_parsing() {
        let raw =
            "thinking...\n[TESTS]\n[INPUT]\n1\n2\n[OUTPUT]\n3\n[INPUT] 5\n[OUTPUT] 5\n[/TESTS]\n";
        assert_eq!(
            parse_tests_block(raw),
            vec![
                ("1\n2".to_string(), "3".to_string()),
                ("5".to_string(), "5".to_string())
            ]
        );
        assert!(parse_tests_block("none").is_empty());
    }

    fn problem() -> ProblemSpec {
        ProblemSpec::new("c1", STATEMENT, ProblemKind::CodeGeneration)
    }

    #[test]
    fn suite_has_examples_and_dedups_model_tests() {
        let key = RequestKey::new("c1", Purpose::Tests, 1, 0);
        let reply = "[TESTS]\n[INPUT]\n1\n[OUTPUT]\n2\n[INPUT]\n2\n[OUTPUT]\n4\n[INPUT]\n1\n[OUTPUT]\n2\n[INPUT]\n10\n[OUTPUT]\n20\n[INPUT]\n3\n[OUTPUT]\n6\n[/TESTS]";
        let backend = ScriptedBackend::new(Script::new().with(&key, reply));
        let sampling = Sampling::default();
        let caller = Caller::new(&backend, &sampling, 0);
        let suite =
            generate_tests(&problem(), &["print(1)"], &KnowledgeList::new(), &caller, 1).unwrap();
        let inputs: Vec<&str> = suite.iter().map(|t| t.input.as_str()).collect();
        assert_eq!(inputs, vec!["3\n", "1\n", "2\n", "10\n"]);
        assert_eq!(suite[0].origin, TestOrigin::ProblemExample);
        assert_eq!(suite[1].origin, TestOrigin::ModelGenerated);
    }

    #[test]
    fn backend_down_falls_back_to_examples_or_empty() {
        let backend = ScriptedBackend::new(Script::new());
        let sampling = Sampling::default();
        let caller = Caller::new(&backend, &sampling, 0);
        let suite = generate_tests(&problem(), &["x"], &KnowledgeList::new(), &caller, 1).unwrap();
        assert_eq!(suite.len(), 1);
        let bare = ProblemSpec::new("c2", "Print hello.", ProblemKind::CodeGeneration);
        assert_eq!(
            generate_tests(&bare, &["x"], &KnowledgeList::new(), &caller, 1),
            Err(SandboxError::EmptyTestSuite)
        );
    }
}
