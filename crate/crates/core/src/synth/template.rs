//! Deterministic generator that answers the prompts built in
//! [`super::prompt`] with fixed sentence frames.

use serde_json::json;

use super::prompt::{
    display_value, PromptStep, CURRENT_MARKER, INPUTS_MARKER, INTENT_HEADER, NEXT_MARKER,
    OPERATION_PREFIX, REQUIRED_MARKER, RULES_MARKER, THOUGHT_HEADER, TRACE_MARKER,
};
use super::{Generator, GeneratorError};
use crate::registry::{Args, ToolKind};

/// Offline [`Generator`]: identical prompts always give identical text, and
/// temperature is ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateGenerator;

impl Generator for TemplateGenerator {
    fn complete(&self, prompt: &str, _temperature: f64) -> Result<String, GeneratorError> {
        if prompt.starts_with(THOUGHT_HEADER) {
            thought(prompt)
        } else if prompt.starts_with(INTENT_HEADER) {
            intent(prompt)
        } else {
            Err(GeneratorError::new(
                "template engine does not recognize this prompt",
            ))
        }
    }
}

struct Verb {
    imperative: String,
    past: String,
    creates: bool,
}

fn verb(word: &str) -> Verb {
    let (imperative, past) = match word {
        "create" => ("create", "created"),
        "add" => ("add", "added"),
        "get" | "read" | "fetch" => ("look up", "looked up"),
        "list" => ("list", "listed"),
        "search" => ("search for", "searched for"),
        "update" | "set" => ("update", "updated"),
        "delete" => ("delete", "deleted"),
        "remove" => ("remove", "removed"),
        "assign" => ("assign", "assigned"),
        "post" => ("post", "posted"),
        other => {
            let past = if other.ends_with('e') {
                format!("{other}d")
            } else {
                format!("{other}ed")
            };
            return Verb {
                imperative: other.to_string(),
                past,
                creates: false,
            };
        }
    };
    Verb {
        imperative: imperative.into(),
        past: past.into(),
        creates: matches!(word, "create" | "add" | "post"),
    }
}

/// `(verb, object phrase)` for an operation title such as `Create Customer`.
fn split_operation(title: &str) -> (Verb, String) {
    let words: Vec<String> = title.split_whitespace().map(str::to_lowercase).collect();
    match words.split_first() {
        Some((v, rest)) if !rest.is_empty() => {
            let verb = verb(v);
            let article = if verb.creates { "a new" } else { "the" };
            (verb, format!("{article} {}", rest.join(" ")))
        }
        Some((v, _)) => (verb(v), "it".into()),
        None => (verb("handle"), "it".into()),
    }
}

fn with_values(inputs: &Args) -> String {
    let parts: Vec<String> = inputs
        .iter()
        .map(|(k, v)| format!("{} {}", k.replace('_', " "), display_value(v)))
        .collect();
    match parts.len() {
        0 => String::new(),
        1 => format!(" with {}", parts[0]),
        n => format!(" with {} and {}", parts[..n - 1].join(", "), parts[n - 1]),
    }
}

fn section<'a>(lines: &[&'a str], marker: &str) -> Option<Vec<&'a str>> {
    let start = lines.iter().position(|l| *l == marker)?;
    Some(lines[start + 1..].to_vec())
}

fn parse_action(lines: &[&str], marker: &str) -> Result<(String, Args), GeneratorError> {
    let body = section(lines, marker)
        .ok_or_else(|| GeneratorError::new(format!("prompt lacks {marker}")))?;
    let title = body
        .iter()
        .find_map(|l| l.strip_prefix(OPERATION_PREFIX))
        .ok_or_else(|| GeneratorError::new("action has no operation"))?;
    let inputs_at = body
        .iter()
        .position(|l| *l == INPUTS_MARKER)
        .ok_or_else(|| GeneratorError::new("action has no inputs"))?;
    let raw = body
        .get(inputs_at + 1)
        .ok_or_else(|| GeneratorError::new("action inputs are missing"))?;
    let inputs: Args = serde_json::from_str(raw)
        .map_err(|e| GeneratorError::new(format!("action inputs are not JSON: {e}")))?;
    Ok((title.to_string(), inputs))
}

fn thought(prompt: &str) -> Result<String, GeneratorError> {
    let lines: Vec<&str> = prompt.lines().collect();
    let (cur_title, cur_inputs) = parse_action(&lines, CURRENT_MARKER)?;
    let (next_title, next_inputs) = parse_action(&lines, NEXT_MARKER)?;
    let (cv, co) = split_operation(&cur_title);
    let (nv, no) = split_operation(&next_title);
    Ok(format!(
        "Having {} {co}{}, I will now {} {no}{}.",
        cv.past,
        with_values(&cur_inputs),
        nv.imperative,
        with_values(&next_inputs)
    ))
}

fn intent(prompt: &str) -> Result<String, GeneratorError> {
    let lines: Vec<&str> = prompt.lines().collect();
    let trace =
        section(&lines, TRACE_MARKER).ok_or_else(|| GeneratorError::new("prompt lacks a trace"))?;
    let mut steps: Vec<PromptStep> = Vec::new();
    for line in trace {
        if line.starts_with(REQUIRED_MARKER) {
            break;
        }
        let Some((num, rest)) = line.split_once(". ") else {
            continue;
        };
        if num.is_empty() || !num.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let step: PromptStep = serde_json::from_str(rest)
            .map_err(|e| GeneratorError::new(format!("bad trace line: {e}")))?;
        steps.push(step);
    }
    if steps.is_empty() {
        return Err(GeneratorError::new("trace is empty"));
    }
    let mut required: Vec<(String, String)> = Vec::new();
    if let Some(block) = section(&lines, REQUIRED_MARKER) {
        for line in block {
            if line.starts_with(RULES_MARKER) {
                break;
            }
            if let Some((k, v)) = line.strip_prefix("- ").and_then(|l| l.split_once(": ")) {
                required.push((k.to_string(), v.to_string()));
            }
        }
    }

    let mut clauses = Vec::with_capacity(steps.len());
    let mut criteria = Vec::with_capacity(steps.len());
    for (i, s) in steps.iter().enumerate() {
        let (v, obj) = split_operation(&s.title());
        let vals = with_values(&s.inputs);
        if i == 0 && s.kind == ToolKind::Create && v.creates {
            clauses.push(format!("Set up {obj}{vals}"));
        } else if i == 0 {
            clauses.push(format!("Please {} {obj}{vals}", v.imperative));
        } else {
            clauses.push(format!("{} {obj}{vals}", v.imperative));
        }
        let mut c = format!("{} {obj}{vals}", v.past);
        if let Some(first) = c.get(..1) {
            c = first.to_uppercase() + &c[1..];
        }
        criteria.push(c);
    }
    let mut instruction = clauses.join(", then ");
    instruction.push('.');
    for (k, v) in &required {
        if !instruction.contains(v.as_str()) {
            instruction.push_str(&format!(" Use {} {v}.", k.replace('_', " ")));
        }
    }
    instruction.push_str(" Let me know once this is done.");
    Ok(json!({"instruction": instruction, "success_criteria": criteria}).to_string())
}
