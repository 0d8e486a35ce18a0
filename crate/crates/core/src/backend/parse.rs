//! Extraction of structured payloads from raw model text.
//!
//! All extractors use last-match semantics: refinement-style outputs revise
//! earlier drafts and the final artifact governs.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure(pub String);

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MathOutput {
    pub summary: String,
    pub answer: u16,
}

/// Contents of every `\boxed{...}` span, in order, with nested braces
/// balanced. Unterminated spans are dropped.
pub fn boxed_spans(raw: &str) -> Vec<&str> {
    const OPEN: &str = "\\boxed{";
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = raw[from..].find(OPEN) {
        let start = from + pos + OPEN.len();
        let mut depth = 1usize;
        let mut end = None;
        for (i, c) in raw[start..].char_indices() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        match end {
            Some(e) => {
                out.push(&raw[start..e]);
                from = e + 1;
            }
            None => break,
        }
    }
    out
}

fn integer_answer(content: &str) -> Option<u16> {
    let t = content.trim();
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: u32 = t.parse().ok()?;
    (v <= 999).then_some(v as u16)
}

/// Body of the last `[Header]` section: text after the header (and an
/// optional colon) up to the next bracketed header line or the end.
pub fn section<'a>(raw: &'a str, header: &str) -> Option<&'a str> {
    let tag = format!("[{header}]");
    let pos = raw.rfind(&tag)?;
    let mut body = &raw[pos + tag.len()..];
    body = body.strip_prefix(':').unwrap_or(body);
    let end = next_header(body).unwrap_or(body.len());
    Some(body[..end].trim())
}

fn next_header(text: &str) -> Option<usize> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if offset > 0 {
            let t = line.trim_start();
            if t.starts_with('[')
                && t[1..].contains(']')
                && t[1..].starts_with(|c: char| c.is_ascii_alphabetic())
            {
                return Some(offset);
            }
        }
        offset += line.len();
    }
    None
}

/// Extracts the last boxed integer in `[0, 999]` and the `[Summary]`
/// section (the whole text when no summary header is present).
pub fn parse_math_output(raw: &str) -> Result<MathOutput, ParseFailure> {
    let answer = boxed_spans(raw)
        .into_iter()
        .rev()
        .find_map(integer_answer)
        .ok_or_else(|| ParseFailure("no boxed integer".into()))?;
    let summary = section(raw, "Summary")
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| raw.trim())
        .to_string();
    Ok(MathOutput { summary, answer })
}

/// Extracts the body of the last complete fenced code block.
pub fn parse_code_output(raw: &str) -> Result<String, ParseFailure> {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in raw.lines() {
        let fence = line.trim_start().starts_with("```");
        match (&mut current, fence) {
            (None, true) => current = Some(Vec::new()),
            (Some(_), true) => blocks.push(current.take().expect("open block")),
            (Some(buf), false) => buf.push(line),
            (None, false) => {}
        }
    }
    blocks
        .pop()
        .map(|b| b.join("\n"))
        .ok_or_else(|| ParseFailure("no code block".into()))
}

/// Every `[TAG] body` item in the text, in order. A body runs from after the
/// tag to the next blank line or tag line.
pub fn tagged_items(raw: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut open = false;
    for line in raw.lines() {
        let t = line.trim();
        if let Some((tag, rest)) = leading_tag(t) {
            out.push((
                tag.to_ascii_uppercase(),
                rest.trim_start_matches(':').trim().to_string(),
            ));
            open = true;
        } else if t.is_empty() {
            open = false;
        } else if open {
            let body = &mut out.last_mut().expect("open item").1;
            if !body.is_empty() {
                body.push(' ');
            }
            body.push_str(t);
        }
    }
    out
}

fn leading_tag(line: &str) -> Option<(&str, &str)> {
    let inner = line.strip_prefix('[')?;
    let close = inner.find(']')?;
    let tag = &inner[..close];
    let ok = !tag.is_empty()
        && tag
            .chars()
            .all(|c| c.is_ascii_uppercase() || c == '_' || c == '/');
    ok.then(|| (tag, &inner[close + 1..]))
}

/// Bodies of every `[tag]` item (tag compared case-insensitively).
pub fn items_with_tag(raw: &str, tag: &str) -> Vec<String> {
    let tag = tag.to_ascii_uppercase();
    tagged_items(raw)
        .into_iter()
        .filter(|(t, _)| *t == tag)
        .map(|(_, b)| b)
        .filter(|b| !b.is_empty())
        .collect()
}

/// Parses the last `[RANKING]` line into 0-based candidate positions.
///
/// Numbers are 1-based in the text. Any out-of-range or repeated number makes
/// the ranking unparseable; candidates the model omitted are appended in
/// ascending order.
pub fn parse_ranking(raw: &str, n: usize) -> Option<Vec<usize>> {
    let body = items_with_tag(raw, "RANKING").pop()?;
    let mut order = Vec::new();
    for tok in body
        .split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
    {
        let v: usize = tok.parse().ok()?;
        if v == 0 || v > n || order.contains(&(v - 1)) {
            return None;
        }
        order.push(v - 1);
    }
    if order.is_empty() {
        return None;
    }
    for i in 0..n {
        if !order.contains(&i) {
            order.push(i);
        }
    }
    Some(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use regex::Regex;

    /// Independent oracle: every `\boxed{digits}` span via a flat regex.
    fn last_boxed_by_scan(raw: &str) -> Option<u16> {
        let re = Regex::new(r"\\boxed\{\s*(\d+)\s*\}").unwrap();
        re.captures_iter(raw)
            .filter_map(|c| c[1].parse::<u32>().ok())
            .filter(|v| *v <= 999)
            .last()
            .map(|v| v as u16)
    }

    #[test]
    fn single_boxed_answer() {
        let raw = "[Summary]: computed.\n[Answer]: Therefore, final answer is \\boxed{42}.";
        let m = parse_math_output(raw).unwrap();
        assert_eq!(m.answer, 42);
        assert_eq!(m.summary, "computed.");
    }

    #[test]
    fn last_boxed_wins() {
        let raw = "first try \\boxed{7} hmm, revised: \\boxed{19}.";
        assert_eq!(parse_math_output(raw).unwrap().answer, 19);
        assert_eq!(last_boxed_by_scan(raw), Some(19));
    }

    #[test]
    fn non_integer_and_out_of_range_boxes_are_skipped() {
        let raw = "\\boxed{12} then \\boxed{\\frac{1}{2}} then \\boxed{1000}";
        assert_eq!(parse_math_output(raw).unwrap().answer, 12);
        assert_eq!(last_boxed_by_scan(raw), Some(12));
    }

    #[test]
    fn missing_boxed_is_failure() {
        assert_eq!(
            parse_math_output("the answer is 5").unwrap_err(),
            ParseFailure("no boxed integer".into())
        );
        assert!(parse_math_output("\\boxed{12").is_err());
    }

    #[test]
    fn summary_falls_back_to_whole_text() {
        let m = parse_math_output("  just \\boxed{3}  ").unwrap();
        assert_eq!(m.summary, "just \\boxed{3}");
    }

    #[test]
    fn sections_stop_at_next_header() {
        let raw = "[Why the reference solution is wrong?]: ref said 12, parity slip.\n\
                   [Summary]: redo gives 14.\nmore detail\n[Answer]: \\boxed{14}";
        assert_eq!(
            section(raw, "Why the reference solution is wrong?"),
            Some("ref said 12, parity slip.")
        );
        assert_eq!(section(raw, "Summary"), Some("redo gives 14.\nmore detail"));
        assert_eq!(section(raw, "Missing"), None);
    }

    #[test]
    fn code_single_block() {
        let raw = "Here:\n```python\nprint(1)\n```\n";
        assert_eq!(parse_code_output(raw).unwrap(), "print(1)");
    }

    #[test]
    fn code_last_block_wins() {
        let raw = "```python\nprint(1)\n```\nbetter:\n```\nx = input()\nprint(x)\n```";
        assert_eq!(parse_code_output(raw).unwrap(), "x = input()\nprint(x)");
        // brute-force span scan over fence positions
        let fences: Vec<usize> = raw
            .lines()
            .enumerate()
            .filter(|(_, l)| l.starts_with("```"))
            .map(|(i, _)| i)
            .collect();
        let lines: Vec<&str> = raw.lines().collect();
        let (a, b) = (fences[fences.len() - 2], fences[fences.len() - 1]);
        assert_eq!(parse_code_output(raw).unwrap(), lines[a + 1..b].join("\n"));
    }

    #[test]
    fn code_without_fence_fails() {
        assert_eq!(
            parse_code_output("print(1)").unwrap_err(),
            ParseFailure("no code block".into())
        );
        assert!(parse_code_output("```python\nprint(1)").is_err());
    }

    #[test]
    fn tagged_items_collect_continuations() {
        let raw = "[INSIGHT] Don't sort\nby value only.\n\n[PRUNE] k2\n\n[INSIGHT]: Avoid O(n^2)\n[insight] lowercase is not a tag";
        assert_eq!(
            items_with_tag(raw, "INSIGHT"),
            vec![
                "Don't sort by value only.",
                "Avoid O(n^2) [insight] lowercase is not a tag"
            ]
        );
        assert_eq!(items_with_tag(raw, "PRUNE"), vec!["k2"]);
    }

    #[test]
    fn ranking_parsing() {
        assert_eq!(parse_ranking("[RANKING] 2,1,3", 3), Some(vec![1, 0, 2]));
        assert_eq!(parse_ranking("[RANKING] 3 > 1", 3), Some(vec![2, 0, 1]));
        assert_eq!(parse_ranking("[RANKING] 2,2", 3), None);
        assert_eq!(parse_ranking("[RANKING] 4", 3), None);
        assert_eq!(parse_ranking("best is the second", 3), None);
    }

    proptest! {
        #[test]
        fn rendered_answer_round_trips(answer in 0u16..=999, noise in "[a-z ]{0,40}") {
            let raw = format!(
                "[Summary]: {noise}\n[Answer]: Therefore, final answer is \\boxed{{{answer}}}."
            );
            prop_assert_eq!(parse_math_output(&raw).unwrap().answer, answer);
        }

        #[test]
        fn extraction_agrees_with_flat_scan(vals in proptest::collection::vec(0u32..1500, 0..6)) {
            let raw: String = vals.iter().map(|v| format!("step \\boxed{{{v}}} ")).collect();
            prop_assert_eq!(parse_math_output(&raw).ok().map(|m| m.answer), last_boxed_by_scan(&raw));
        }
    }
}
