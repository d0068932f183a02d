//! Prompt construction for thought and intent generation.
//!
//! Prompts are plain text with fixed section markers so the template engine
//! (and any external model) can read them back.

use heck::ToTitleCase;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::registry::{Args, ToolKind};

pub const THOUGHT_HEADER: &str = "You are an agent in the middle of a business task. Describe your NEXT action in plain language.";
pub const INTENT_HEADER: &str =
    "Write the request a real user would have made to cause the execution trace below.";

pub const CONTEXT_MARKER: &str = "CONTEXT:";
pub const CURRENT_MARKER: &str = "CURRENT ACTION:";
pub const NEXT_MARKER: &str = "NEXT ACTION:";
pub const OPERATION_PREFIX: &str = "Operation: ";
pub const DATA_PREFIX: &str = "With Data: ";
pub const INPUTS_MARKER: &str = "Full Inputs:";
pub const OUTPUTS_MARKER: &str = "Outputs:";
pub const DOMAIN_PREFIX: &str = "DOMAIN: ";
pub const TRACE_MARKER: &str = "TRACE:";
pub const REQUIRED_MARKER: &str = "REQUIRED DATA:";
pub const RULES_MARKER: &str = "RULES:";

/// One tool call as shown to the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptStep {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub app: String,
    /// Unqualified tool name, e.g. `create_customer`.
    pub operation: String,
    pub kind: ToolKind,
    pub inputs: Args,
    #[serde(default)]
    pub outputs: Args,
}

impl PromptStep {
    pub fn title(&self) -> String {
        self.operation.to_title_case()
    }
}

/// `key=value` pairs, strings unquoted.
pub fn key_values(args: &Args) -> String {
    args.iter()
        .map(|(k, v)| format!("{k}={}", display_value(v)))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn display_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn json_line(args: &Args) -> String {
    serde_json::to_string(args).expect("args serialize")
}

fn push_action(out: &mut String, marker: &str, step: &PromptStep, with_outputs: bool) {
    out.push_str(marker);
    out.push('\n');
    out.push_str(OPERATION_PREFIX);
    out.push_str(&step.title());
    out.push('\n');
    out.push_str(DATA_PREFIX);
    out.push_str(&key_values(&step.inputs));
    out.push_str("\n\n");
    out.push_str(INPUTS_MARKER);
    out.push('\n');
    out.push_str(&json_line(&step.inputs));
    out.push_str("\n\n");
    if with_outputs {
        out.push_str(OUTPUTS_MARKER);
        out.push('\n');
        out.push_str(&json_line(&step.outputs));
        out.push_str("\n\n");
    }
}

/// Prompt asking for one first-person sentence describing the move from
/// `current` to `next`. `earlier` lists the span's steps before `current`.
pub fn thought_prompt(earlier: &[PromptStep], current: &PromptStep, next: &PromptStep) -> String {
    let mut out = String::new();
    out.push_str(THOUGHT_HEADER);
    out.push_str("\n\n");
    out.push_str(CONTEXT_MARKER);
    out.push('\n');
    if earlier.is_empty() {
        out.push_str("Nothing has been done yet in this task.");
    } else {
        let done: Vec<String> = earlier.iter().map(PromptStep::title).collect();
        out.push_str("Already done: ");
        out.push_str(&done.join(", "));
    }
    out.push_str("\n\n");
    push_action(&mut out, CURRENT_MARKER, current, true);
    push_action(&mut out, NEXT_MARKER, next, false);
    out.push_str(RULES_MARKER);
    out.push('\n');
    out.push_str("1. Answer with ONE first-person sentence (\"I will ...\").\n");
    out.push_str("2. Speak in business terms; never name tools or APIs.\n");
    out.push_str("3. Mention the concrete values (ids, names, amounts).\n");
    out.push_str("4. Say what is being done and to what end.\n\n");
    out.push_str("YOUR RESPONSE:\n");
    out
}

/// Prompt asking for `{instruction, success_criteria}` JSON covering the
/// whole span. `required` lists `(field, value)` pairs that must appear in
/// the instruction.
pub fn intent_prompt(
    domain: &[&str],
    steps: &[PromptStep],
    thoughts: &[String],
    required: &[(String, Value)],
) -> String {
    #[derive(Serialize)]
    struct TraceLine<'a> {
        operation: &'a str,
        kind: ToolKind,
        inputs: &'a Args,
        outputs: &'a Args,
    }
    let mut out = String::new();
    out.push_str(INTENT_HEADER);
    out.push_str("\n\n");
    out.push_str(DOMAIN_PREFIX);
    out.push_str(&domain.join(", "));
    out.push_str("\n\n");
    out.push_str(TRACE_MARKER);
    out.push('\n');
    for (i, s) in steps.iter().enumerate() {
        let line = TraceLine {
            operation: &s.operation,
            kind: s.kind,
            inputs: &s.inputs,
            outputs: &s.outputs,
        };
        out.push_str(&format!(
            "{}. {}\n",
            i + 1,
            serde_json::to_string(&line).expect("trace line serializes")
        ));
        if let Some(t) = thoughts.get(i) {
            out.push_str(&format!("   then: {t}\n"));
        }
    }
    out.push('\n');
    out.push_str(REQUIRED_MARKER);
    out.push('\n');
    for (k, v) in required {
        out.push_str(&format!("- {k}: {}\n", display_value(v)));
    }
    out.push('\n');
    out.push_str(RULES_MARKER);
    out.push('\n');
    out.push_str("1. Phrase it as a realistic business request of two or three sentences.\n");
    out.push_str("2. Every value listed under REQUIRED DATA must appear verbatim.\n");
    out.push_str("3. Never mention tools, APIs or function names.\n");
    out.push_str("4. Ask for creation when the trace created data and for lookups when it retrieved data.\n\n");
    out.push_str("OUTPUT (JSON):\n");
    out.push_str("{\"instruction\": \"...\", \"success_criteria\": [\"...\", \"...\"]}\n\n");
    out.push_str("YOUR RESPONSE:\n");
    out
}
