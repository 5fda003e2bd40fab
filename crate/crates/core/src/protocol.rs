//! Prompt rendering and strict parsing of agent and ranker turns.
//!
//! Both roles answer with exactly two tag blocks. Anything else is a format
//! violation, which is reported as data (a [`Violation`]) because f = 0 is a
//! reward case, not an error.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::retrieval::Document;

/// Version tag embedded in every exported sample.
pub const TEMPLATE_VERSION: &str = "prompts-v1";

const MAIN_TEMPLATE: &str = include_str!("../templates/main_agent.txt");
const RANKER_TEMPLATE: &str = include_str!("../templates/ranker.txt");

/// Sent after the search budget is used up.
pub const FORCE_ANSWER_INSTRUCTION: &str = "The search budget is exhausted. Do not call the \
search tool again. Respond now with <reason> ... </reason> followed by <answer> ... </answer>.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error("ranker prompt needs at least one candidate document")]
    NoCandidates,
    #[error("cannot select {k} documents from {n} candidates")]
    TooFewCandidates { k: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

pub fn render_main_prompt(question: &str) -> Result<String, ProtocolError> {
    if question.trim().is_empty() {
        return Err(ProtocolError::EmptyQuestion);
    }
    Ok(MAIN_TEMPLATE.replace("{question}", question))
}

/// Candidates are labelled `[1]..[N]` in the given order.
pub fn render_ranker_prompt(
    original_question: &str,
    sub_query: &str,
    docs: &[Document],
    k: usize,
) -> Result<String, ProtocolError> {
    if docs.is_empty() {
        return Err(ProtocolError::NoCandidates);
    }
    if k > docs.len() {
        return Err(ProtocolError::TooFewCandidates { k, n: docs.len() });
    }
    Ok(RANKER_TEMPLATE
        .replace("{original_question}", original_question)
        .replace("{sub_query}", sub_query)
        .replace("{documents}", &render_documents(docs)))
}

/// `[i] "title"` followed by the passage text, one document per entry.
pub fn render_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    docs.into_iter()
        .enumerate()
        .map(|(i, d)| format!("[{}] \"{}\"\n{}", i + 1, d.title, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The environment message carrying an observation back to the agent.
pub fn render_observation<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    format!("<tool_response>\n{}\n</tool_response>", render_documents(docs))
}

/// Title of the first document in a rendered observation, if any.
pub fn top_title(observation: &str) -> Option<&str> {
    observation
        .lines()
        .find_map(|l| l.strip_prefix("[1] \""))
        .and_then(|rest| rest.strip_suffix('"'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    MissingTags,
    ExtraText,
    BadJson,
    BadSchema,
    DupIndex,
    RangeIndex,
    WrongCount,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Violation::MissingTags => "missing-tags",
            Violation::ExtraText => "extra-text",
            Violation::BadJson => "bad-json",
            Violation::BadSchema => "bad-schema",
            Violation::DupIndex => "dup-index",
            Violation::RangeIndex => "range-index",
            Violation::WrongCount => "wrong-count",
        };
        f.write_str(s)
    }
}

/// Format indicator f. `f == 1` exactly when no violation was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatFlag {
    pub f: u8,
    pub violation: Option<Violation>,
}

impl FormatFlag {
    pub const OK: FormatFlag = FormatFlag { f: 1, violation: None };

    pub fn violated(v: Violation) -> Self {
        Self { f: 0, violation: Some(v) }
    }

    pub fn of<T>(parsed: &Result<T, Violation>) -> Self {
        match parsed {
            Ok(_) => Self::OK,
            Err(v) => Self::violated(*v),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.f == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    ToolCall { query: String },
    Answer { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MainTurn {
    pub reason: String,
    pub action: Action,
}

impl MainTurn {
    pub fn to_text(&self) -> String {
        match &self.action {
            Action::ToolCall { query } => {
                let call = json!({ "name": "search", "arguments": { "query": query } });
                format!("<reason>{}</reason>\n<tool_call>{}</tool_call>", self.reason, call)
            }
            Action::Answer { text } => {
                format!("<reason>{}</reason>\n<answer>{}</answer>", self.reason, text)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerTurn {
    pub reason: String,
    /// 1-based candidate indices, most relevant first.
    pub ranking: Vec<usize>,
}

impl RankerTurn {
    pub fn to_text(&self) -> String {
        let list = self
            .ranking
            .iter()
            .map(|i| format!("[{i}]"))
            .collect::<Vec<_>>()
            .join(" > ");
        format!("<reason>{}</reason>\n<rerank>{}</rerank>", self.reason, list)
    }
}

const MAIN_TAGS: [&str; 3] = ["reason", "tool_call", "answer"];
const RANKER_TAGS: [&str; 2] = ["reason", "rerank"];

/// Splits `text` into top-level tag blocks. Tags must pair up without
/// nesting; only whitespace may appear between blocks.
fn tag_blocks<'a>(text: &'a str, names: &[&'a str]) -> Result<Vec<(&'a str, &'a str)>, Violation> {
    let mut marks: Vec<(usize, usize, &str, bool)> = Vec::new();
    for &name in names {
        let open = format!("<{name}>");
        let close = format!("</{name}>");
        marks.extend(text.match_indices(&open).map(|(i, m)| (i, i + m.len(), name, true)));
        marks.extend(text.match_indices(&close).map(|(i, m)| (i, i + m.len(), name, false)));
    }
    marks.sort_by_key(|m| m.0);

    if !marks.len().is_multiple_of(2) {
        return Err(Violation::MissingTags);
    }
    let mut blocks = Vec::with_capacity(marks.len() / 2);
    let mut gaps = Vec::with_capacity(blocks.capacity() + 1);
    let mut cursor = 0;
    for pair in marks.chunks(2) {
        let (open, close) = (pair[0], pair[1]);
        if !open.3 || close.3 || open.2 != close.2 {
            return Err(Violation::MissingTags);
        }
        gaps.push(&text[cursor..open.0]);
        blocks.push((open.2, &text[open.1..close.0]));
        cursor = close.1;
    }
    gaps.push(&text[cursor..]);
    if gaps.iter().any(|g| !g.trim().is_empty()) {
        return Err(Violation::ExtraText);
    }
    Ok(blocks)
}

pub fn parse_main_turn(text: &str) -> Result<MainTurn, Violation> {
    let blocks = tag_blocks(text, &MAIN_TAGS)?;
    let [("reason", reason), (action, body)] = blocks.as_slice() else {
        return Err(Violation::MissingTags);
    };
    let reason = reason.trim().to_owned();
    match *action {
        "tool_call" => {
            let value: Value = serde_json::from_str(body.trim()).map_err(|_| Violation::BadJson)?;
            let query = search_query(&value).ok_or(Violation::BadSchema)?;
            Ok(MainTurn { reason, action: Action::ToolCall { query } })
        }
        "answer" => {
            let text = body.trim();
            if text.is_empty() {
                return Err(Violation::MissingTags);
            }
            Ok(MainTurn { reason, action: Action::Answer { text: text.to_owned() } })
        }
        _ => Err(Violation::MissingTags),
    }
}

/// `{"name": "search", "arguments": {"query": "<non-empty string>"}}`, no other keys.
fn search_query(value: &Value) -> Option<String> {
    let call = value.as_object()?;
    if call.len() != 2 || call.get("name")?.as_str()? != "search" {
        return None;
    }
    let args = call.get("arguments")?.as_object()?;
    if args.len() != 1 {
        return None;
    }
    let query = args.get("query")?.as_str()?;
    (!query.trim().is_empty()).then(|| query.to_owned())
}

/// Parses a ranker reply against `n` candidates and a required length `k`.
/// Checks run in the order range, duplicates, count.
pub fn parse_ranker_turn(text: &str, n: usize, k: usize) -> Result<RankerTurn, Violation> {
    let blocks = tag_blocks(text, &RANKER_TAGS)?;
    let [("reason", reason), ("rerank", body)] = blocks.as_slice() else {
        return Err(Violation::MissingTags);
    };
    let ranking = parse_index_list(body)?;
    if ranking.iter().any(|&i| i == 0 || i > n) {
        return Err(Violation::RangeIndex);
    }
    let mut seen = vec![false; n + 1];
    for &i in &ranking {
        if std::mem::replace(&mut seen[i], true) {
            return Err(Violation::DupIndex);
        }
    }
    if ranking.len() != k {
        return Err(Violation::WrongCount);
    }
    Ok(RankerTurn { reason: reason.trim().to_owned(), ranking })
}

/// `[i] > [j] > ...` with optional whitespace around separators. Indices too
/// large for `usize` are reported as out of range.
fn parse_index_list(body: &str) -> Result<Vec<usize>, Violation> {
    let body = body.trim();
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('>')
        .map(|item| {
            let digits = item
                .trim()
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                .ok_or(Violation::ExtraText)?;
            digits.parse().map_err(|_| Violation::RangeIndex)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE1_OUTPUT: &str = "<reason>\nThe Initial Query asks for a town with an island that has a community building built in\n1911-12. Passage [1] directly mentions a community building built in 1911-12 and locates\nit on Harpswell Island Road, making it the top choice. Passage [48] also fits the criteria\nbut contains less detailed information. Passages [2], [32] discuss islands but do not\nmention a community building from that period. Passage [39] describes a small island with\nno matching structure.\n</reason>\n<rerank>[1] > [48] > [2] > [32] > [39]</rerank>";

    fn doc(i: usize) -> Document {
        Document { id: format!("d{i}"), title: format!("T{i}"), text: format!("text {i}") }
    }

    #[test]
    fn main_prompt_substitutes_question() {
        let q = "who has played the most state of origins";
        let p = render_main_prompt(q).unwrap();
        assert!(p.ends_with("Question: who has played the most state of origins"));
        assert!(p.starts_with("You are a tool-augmented research agent"));
        assert_eq!(p, render_main_prompt(q).unwrap());
        assert_eq!(render_main_prompt("  "), Err(ProtocolError::EmptyQuestion));
    }

    #[test]
    fn ranker_prompt_labels_every_candidate() {
        let docs: Vec<_> = (0..50).map(doc).collect();
        let p = render_ranker_prompt(
            "What town has an island with a community building built in 1911-12?",
            "island with community building built 1911-12",
            &docs,
            5,
        )
        .unwrap();
        assert!(p.contains("Sub-Query: island with community building built 1911-12"));
        for i in 1..=50 {
            assert!(p.contains(&format!("\n[{i}] \"T{}\"\n", i - 1)), "label {i}");
        }
        let three: Vec<_> = (0..3).map(doc).collect();
        assert_eq!(
            render_ranker_prompt("q", "q", &three, 5),
            Err(ProtocolError::TooFewCandidates { k: 5, n: 3 })
        );
    }

    #[test]
    fn minimal_tool_call() {
        let t = parse_main_turn(
            r#"<reason>r</reason><tool_call>{"name":"search","arguments":{"query":"q"}}</tool_call>"#,
        )
        .unwrap();
        assert_eq!(t.action, Action::ToolCall { query: "q".into() });
    }

    #[test]
    fn answer_turn() {
        let t = parse_main_turn("<reason>r</reason><answer>Paris</answer>").unwrap();
        assert_eq!(t.action, Action::Answer { text: "Paris".into() });
        // incidental whitespace is fine
        let t = parse_main_turn("\n <reason>r</reason>\n\n<answer> Paris\n</answer>\n").unwrap();
        assert_eq!(t.action, Action::Answer { text: "Paris".into() });
    }

    #[test]
    fn schema_violations() {
        let extra = r#"<reason>r</reason><tool_call>{"name":"search","arguments":{"query":"q"},"k":1}</tool_call>"#;
        assert_eq!(parse_main_turn(extra), Err(Violation::BadSchema));
        let inner = r#"<reason>r</reason><tool_call>{"name":"search","arguments":{"query":"q","k":1}}</tool_call>"#;
        assert_eq!(parse_main_turn(inner), Err(Violation::BadSchema));
        let name = r#"<reason>r</reason><tool_call>{"name":"lookup","arguments":{"query":"q"}}</tool_call>"#;
        assert_eq!(parse_main_turn(name), Err(Violation::BadSchema));
        let num = r#"<reason>r</reason><tool_call>{"name":"search","arguments":{"query":3}}</tool_call>"#;
        assert_eq!(parse_main_turn(num), Err(Violation::BadSchema));
        let md = "<reason>r</reason><tool_call>```json\n{\"name\":\"search\",\"arguments\":{\"query\":\"q\"}}\n```</tool_call>";
        assert_eq!(parse_main_turn(md), Err(Violation::BadJson));
        let comma = r#"<reason>r</reason><tool_call>{"name":"search","arguments":{"query":"q",}}</tool_call>"#;
        assert_eq!(parse_main_turn(comma), Err(Violation::BadJson));
    }

    #[test]
    fn structural_violations() {
        assert_eq!(parse_main_turn(""), Err(Violation::MissingTags));
        assert_eq!(parse_main_turn("<answer>Paris</answer>"), Err(Violation::MissingTags));
        assert_eq!(
            parse_main_turn("<answer>Paris</answer><reason>r</reason>"),
            Err(Violation::MissingTags)
        );
        assert_eq!(
            parse_main_turn("<reason>r<answer>x</answer></reason><answer>Paris</answer>"),
            Err(Violation::MissingTags)
        );
        assert_eq!(
            parse_main_turn("Sure! <reason>r</reason><answer>Paris</answer>"),
            Err(Violation::ExtraText)
        );
        assert_eq!(
            parse_main_turn("<reason>r</reason>so<answer>Paris</answer>"),
            Err(Violation::ExtraText)
        );
        assert_eq!(
            parse_main_turn("<reason>r</reason><answer> </answer>"),
            Err(Violation::MissingTags)
        );
    }

    #[test]
    fn ranker_example_output() {
        let t = parse_ranker_turn(EXAMPLE1_OUTPUT, 50, 5).unwrap();
        assert_eq!(t.ranking, vec![1, 48, 2, 32, 39]);
    }

    #[test]
    fn ranker_violations() {
        let dup = "<reason>r</reason><rerank>[1] > [1] > [2] > [3] > [4]</rerank>";
        assert_eq!(parse_ranker_turn(dup, 50, 5), Err(Violation::DupIndex));
        let range = "<reason>r</reason><rerank>[1] > [51] > [2] > [3] > [4]</rerank>";
        assert_eq!(parse_ranker_turn(range, 50, 5), Err(Violation::RangeIndex));
        let zero = "<reason>r</reason><rerank>[0] > [1] > [2] > [3] > [4]</rerank>";
        assert_eq!(parse_ranker_turn(zero, 50, 5), Err(Violation::RangeIndex));
        let short = "<reason>r</reason><rerank>[1] > [2]</rerank>";
        assert_eq!(parse_ranker_turn(short, 50, 5), Err(Violation::WrongCount));
        let chatty = "<reason>r</reason><rerank>[1] > [2] because</rerank>";
        assert_eq!(parse_ranker_turn(chatty, 50, 2), Err(Violation::ExtraText));
        let compact = "<reason>r</reason><rerank>[3]>[1]</rerank>";
        assert_eq!(parse_ranker_turn(compact, 3, 2).unwrap().ranking, vec![3, 1]);
    }

    #[test]
    fn observation_top_title() {
        let docs = [doc(7), doc(2)];
        let obs = render_observation(&docs);
        assert_eq!(top_title(&obs), Some("T7"));
        assert_eq!(top_title("<tool_response>\n\n</tool_response>"), None);
    }
}
