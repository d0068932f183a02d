//! ReAct step parsing, rollout execution and loss-mask spans.
//!
//! A transcript is a preamble (`User: <query>` plus blank line) followed by
//! spans joined with `\n`. Each span starts at a keyword line (`Thought: `,
//! `Action: `, `Action Input: `, `Observation: `, `Final Answer: `) and runs
//! up to the newline before the next keyword line. All ranges are char
//! offsets into the full transcript text.

use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::env::{normalize_observation, Episode, ToolStatus, DEFAULT_OBSERVATION_BUDGET};
use crate::registry::{Args, ToolRegistry};
use crate::rpc::RpcClient;

pub const DEFAULT_T_MAX: usize = 10;

pub const THOUGHT: &str = "Thought: ";
pub const ACTION: &str = "Action: ";
pub const ACTION_INPUT: &str = "Action Input: ";
pub const OBSERVATION: &str = "Observation: ";
pub const FINAL_ANSWER: &str = "Final Answer: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Thought,
    Action,
    ActionInput,
    Observation,
    FinalAnswer,
    /// A whole policy step that failed to parse.
    Invalid,
}

impl SpanKind {
    pub fn keyword(self) -> Option<&'static str> {
        match self {
            SpanKind::Thought => Some(THOUGHT),
            SpanKind::Action => Some(ACTION),
            SpanKind::ActionInput => Some(ACTION_INPUT),
            SpanKind::Observation => Some(OBSERVATION),
            SpanKind::FinalAnswer => Some(FINAL_ANSWER),
            SpanKind::Invalid => None,
        }
    }
}

/// Keyword at the start of `line`, if any. `Action Input: ` is checked
/// before `Action: ` only for clarity; the two cannot both match.
pub fn keyword_kind(line: &str) -> Option<SpanKind> {
    [
        SpanKind::Thought,
        SpanKind::ActionInput,
        SpanKind::Action,
        SpanKind::Observation,
        SpanKind::FinalAnswer,
    ]
    .into_iter()
    .find(|k| line.starts_with(k.keyword().expect("keyword kinds")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSpan {
    pub kind: SpanKind,
    /// Verbatim span text, keyword included.
    pub text: String,
    pub range: [usize; 2],
}

impl TranscriptSpan {
    /// Text after the keyword, without trailing line breaks.
    pub fn content(&self) -> &str {
        let body = match self.kind.keyword() {
            Some(k) => self.text.strip_prefix(k).unwrap_or(&self.text),
            None => &self.text,
        };
        body.trim_end_matches(['\n', '\r'])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTranscript {
    pub preamble: String,
    pub spans: Vec<TranscriptSpan>,
}

impl ParsedTranscript {
    pub fn serialize(&self) -> String {
        serialize_transcript(&self.preamble, &self.spans)
    }
}

pub fn serialize_transcript(preamble: &str, spans: &[TranscriptSpan]) -> String {
    let mut out = String::from(preamble);
    for (i, s) in spans.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&s.text);
    }
    out
}

/// Byte offsets of every keyword line start in `text`.
fn keyword_starts(text: &str) -> Vec<(usize, SpanKind)> {
    let mut out = Vec::new();
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        if let Some(k) = keyword_kind(line) {
            out.push((pos, k));
        }
        pos += line.len();
    }
    out
}

/// Splits any text into preamble and keyword-anchored spans, offsetting
/// ranges by `char_offset`. Never fails; text before the first keyword line
/// is preamble.
pub fn parse_transcript_at(text: &str, char_offset: usize) -> ParsedTranscript {
    let starts = keyword_starts(text);
    let Some(&(first, _)) = starts.first() else {
        return ParsedTranscript {
            preamble: text.to_string(),
            spans: Vec::new(),
        };
    };
    let preamble = text[..first].to_string();
    let mut chars_before = char_offset + preamble.chars().count();
    let mut spans = Vec::with_capacity(starts.len());
    for (i, &(start, kind)) in starts.iter().enumerate() {
        // drop the single newline that separates this span from the next
        let end = starts.get(i + 1).map_or(text.len(), |&(next, _)| next - 1);
        let body = &text[start..end];
        let n = body.chars().count();
        spans.push(TranscriptSpan {
            kind,
            text: body.to_string(),
            range: [chars_before, chars_before + n],
        });
        chars_before += n + 1;
    }
    ParsedTranscript { preamble, spans }
}

pub fn parse_transcript(text: &str) -> ParsedTranscript {
    parse_transcript_at(text, 0)
}

// ---------------------------------------------------------------------------
// Single-step parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepBody {
    Action { name: String, input: Args },
    FinalAnswer { answer: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedStep {
    pub thought: String,
    pub body: StepBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub reason: String,
}

impl ParseFailure {
    fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseMode {
    /// Accept an Action Input written as a fenced JSON block.
    pub relaxed_json: bool,
}

fn xml_tag() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"</?[A-Za-z][A-Za-z0-9_:-]*(\s[^<>]*)?/?>").expect("valid regex"))
}

fn parse_action_input(rest: &str, mode: ParseMode) -> Result<Args, ParseFailure> {
    let raw = if mode.relaxed_json && rest.trim_start().starts_with("```") {
        let inner = rest.trim_start().trim_start_matches("```");
        let inner = inner.strip_prefix("json").unwrap_or(inner);
        let close = inner
            .find("```")
            .ok_or_else(|| ParseFailure::new("unterminated fenced action input"))?;
        if !inner[close + 3..].trim().is_empty() {
            return Err(ParseFailure::new("text after fenced action input"));
        }
        inner[..close].trim().to_string()
    } else {
        let trimmed = rest.trim_end();
        if trimmed.contains('\n') {
            return Err(ParseFailure::new("action input must be one line"));
        }
        trimmed.to_string()
    };
    match serde_json::from_str::<Value>(&raw) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ParseFailure::new("action input is not a JSON object")),
        Err(e) => Err(ParseFailure::new(format!("bad action input: {e}"))),
    }
}

/// Parses one policy step: a Thought, then either Action + Action Input or
/// Final Answer.
pub fn parse_react_step(text: &str, mode: ParseMode) -> Result<ParsedStep, ParseFailure> {
    if xml_tag().is_match(text) {
        return Err(ParseFailure::new("XML-style tags are not allowed"));
    }
    let parsed = parse_transcript(text);
    if !parsed.preamble.trim().is_empty() {
        return Err(ParseFailure::new("step must start with a Thought line"));
    }
    let spans = &parsed.spans;
    let kinds: Vec<SpanKind> = spans.iter().map(|s| s.kind).collect();
    match kinds.as_slice() {
        [SpanKind::Thought, SpanKind::Action, SpanKind::ActionInput] => {
            let name = spans[1].content().trim();
            if name.is_empty() || name.contains('\n') {
                return Err(ParseFailure::new(
                    "action name must be a single non-empty line",
                ));
            }
            let rest = spans[2].text.strip_prefix(ACTION_INPUT).unwrap_or_default();
            let input = parse_action_input(rest, mode)?;
            Ok(ParsedStep {
                thought: spans[0].content().to_string(),
                body: StepBody::Action {
                    name: name.to_string(),
                    input,
                },
            })
        }
        [SpanKind::Thought, SpanKind::FinalAnswer] => Ok(ParsedStep {
            thought: spans[0].content().to_string(),
            body: StepBody::FinalAnswer {
                answer: spans[1].content().to_string(),
            },
        }),
        [] => Err(ParseFailure::new("no Thought line")),
        [first, ..] if *first != SpanKind::Thought => {
            Err(ParseFailure::new("step must start with a Thought line"))
        }
        _ => Err(ParseFailure::new(format!(
            "unexpected line sequence {kinds:?}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("policy error: {0}")]
pub struct PolicyError(pub String);

/// Text-in, text-out policy: given the transcript so far, return the next
/// step.
pub trait Policy {
    fn complete(&mut self, history: &str) -> Result<String, PolicyError>;
}

/// Replays fixed step texts in order.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    steps: Vec<String>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new<S: Into<String>>(steps: impl IntoIterator<Item = S>) -> Self {
        Self {
            steps: steps.into_iter().map(Into::into).collect(),
            next: 0,
        }
    }
}

impl Policy for ScriptedPolicy {
    fn complete(&mut self, _history: &str) -> Result<String, PolicyError> {
        let s = self
            .steps
            .get(self.next)
            .cloned()
            .ok_or_else(|| PolicyError("scripted policy has no more steps".into()))?;
        self.next += 1;
        Ok(s)
    }
}

/// Policy behind a JSON-RPC endpoint answering `policy/complete` with
/// `{"text": ...}`.
pub struct ExternalPolicy {
    endpoint: String,
    system: String,
    client: Mutex<Option<RpcClient>>,
}

impl ExternalPolicy {
    pub fn new(endpoint: impl Into<String>, system: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            system: system.into(),
            client: Mutex::new(None),
        }
    }
}

impl Policy for ExternalPolicy {
    fn complete(&mut self, history: &str) -> Result<String, PolicyError> {
        let guard = self.client.get_mut().expect("policy client lock");
        if guard.is_none() {
            *guard =
                Some(RpcClient::connect(&self.endpoint).map_err(|e| PolicyError(e.to_string()))?);
        }
        let client = guard.as_mut().expect("client just set");
        let result = match client.call(
            "policy/complete",
            json!({"system": self.system, "history": history}),
        ) {
            Ok(r) => r,
            Err(e) => {
                *guard = None;
                return Err(PolicyError(e.to_string()));
            }
        };
        result
            .get("text")
            .and_then(Value::as_str)
            .or_else(|| result.as_str())
            .map(str::to_string)
            .ok_or_else(|| PolicyError("policy/complete returned no text".into()))
    }
}

/// System prompt listing the tools and the required step format.
pub fn system_prompt(registry: &ToolRegistry) -> String {
    let mut s = String::from(
        "You solve user requests by calling tools. Reply in the ReAct line format.\n\nTOOLS:\n",
    );
    for t in registry.tools() {
        let params: Vec<String> = t
            .params
            .iter()
            .map(|p| {
                format!(
                    "{}: {}{}",
                    p.name,
                    p.semantic_type,
                    if p.required { "" } else { " (optional)" }
                )
            })
            .collect();
        s.push_str(&format!("- {} ({})\n", t.qualified_name, params.join(", ")));
    }
    s.push_str(
        "\nFORMAT:\nThought: <reasoning>\nAction: <tool name>\nAction Input: <JSON object on one line>\n\
         or, when done:\nThought: <reasoning>\nFinal Answer: <answer>\n\
         Each line starts with its keyword followed by a colon and a space. No XML tags, no markdown.\n",
    );
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    FinalAnswer,
    StepLimit,
    ParseFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tool: String,
    pub args: Args,
    pub status: ToolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Args>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpans {
    pub masked: Vec<[usize; 2]>,
    pub unmasked: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTranscript {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub task_id: String,
    #[serde(default)]
    pub rollout: usize,
    pub query: String,
    pub terminal: Terminal,
    pub steps_used: usize,
    pub preamble: String,
    pub spans: Vec<TranscriptSpan>,
    pub mask: MaskSpans,
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_answer: Option<String>,
    #[serde(default)]
    pub parse_failures: usize,
    pub episode_id: String,
}

impl RolloutTranscript {
    pub fn text(&self) -> String {
        serialize_transcript(&self.preamble, &self.spans)
    }

    pub fn predicted_calls(&self) -> Vec<(String, Args)> {
        self.calls
            .iter()
            .map(|c| (c.tool.clone(), c.args.clone()))
            .collect()
    }
}

pub fn preamble_for(query: &str) -> String {
    format!("User: {query}\n\n")
}

/// Masked ranges are the observation spans; unmasked ranges are their
/// complement over `[0, total_chars)`.
pub fn compute_mask_spans(spans: &[TranscriptSpan], total_chars: usize) -> MaskSpans {
    let masked: Vec<[usize; 2]> = spans
        .iter()
        .filter(|s| s.kind == SpanKind::Observation)
        .map(|s| s.range)
        .collect();
    let mut unmasked = Vec::new();
    let mut cursor = 0;
    for &[a, b] in &masked {
        if a > cursor {
            unmasked.push([cursor, a]);
        }
        cursor = b;
    }
    if cursor < total_chars {
        unmasked.push([cursor, total_chars]);
    }
    MaskSpans { masked, unmasked }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub t_max: usize,
    pub observation_budget: usize,
    pub parse_mode: ParseMode,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            t_max: DEFAULT_T_MAX,
            observation_budget: DEFAULT_OBSERVATION_BUDGET,
            parse_mode: ParseMode::default(),
        }
    }
}

struct Builder {
    text: String,
    chars: usize,
    spans: Vec<TranscriptSpan>,
}

impl Builder {
    fn push(&mut self, kind: SpanKind, body: &str) {
        if !self.spans.is_empty() {
            self.text.push('\n');
            self.chars += 1;
        }
        let n = body.chars().count();
        self.spans.push(TranscriptSpan {
            kind,
            text: body.to_string(),
            range: [self.chars, self.chars + n],
        });
        self.text.push_str(body);
        self.chars += n;
    }
}

/// Runs the policy against `ep` until a Final Answer, a parse failure or
/// `t_max` policy steps.
///
/// # Panics
///
/// If `cfg.t_max == 0`.
pub fn run_rollout(
    policy: &mut dyn Policy,
    ep: &mut Episode,
    query: &str,
    cfg: &RolloutConfig,
) -> Result<RolloutTranscript, PolicyError> {
    assert!(cfg.t_max >= 1, "t_max must be at least 1");
    let preamble = preamble_for(query);
    let mut b = Builder {
        chars: preamble.chars().count(),
        text: preamble.clone(),
        spans: Vec::new(),
    };
    let mut calls = Vec::new();
    let mut steps_used = 0;
    let mut parse_failures = 0;
    let mut final_answer = None;
    let mut terminal = Terminal::StepLimit;

    while steps_used < cfg.t_max {
        let raw = policy.complete(&b.text)?;
        steps_used += 1;
        let step = raw.trim_end();
        match parse_react_step(step, cfg.parse_mode) {
            Err(f) => {
                log::debug!("parse failure: {}", f.reason);
                parse_failures += 1;
                b.push(SpanKind::Invalid, step);
                terminal = Terminal::ParseFailure;
                break;
            }
            Ok(parsed) => {
                for s in parse_transcript(step).spans {
                    b.push(s.kind, &s.text);
                }
                match parsed.body {
                    StepBody::FinalAnswer { answer } => {
                        final_answer = Some(answer);
                        terminal = Terminal::FinalAnswer;
                        break;
                    }
                    StepBody::Action { name, input } => {
                        let result = ep.call(&name, &input);
                        let obs = normalize_observation(&result, cfg.observation_budget);
                        b.push(
                            SpanKind::Observation,
                            &format!("{OBSERVATION}{}\n", obs.to_text()),
                        );
                        calls.push(CallRecord {
                            tool: name,
                            args: input,
                            status: result.status,
                            payload: result.payload,
                        });
                    }
                }
            }
        }
    }
    let mask = compute_mask_spans(&b.spans, b.chars);
    Ok(RolloutTranscript {
        task_id: String::new(),
        rollout: 0,
        query: query.to_string(),
        terminal,
        steps_used,
        preamble,
        spans: b.spans,
        mask,
        calls,
        final_answer,
        parse_failures,
        episode_id: ep.id().to_string(),
    })
}

pub fn transcripts_to_jsonl(ts: &[RolloutTranscript]) -> String {
    let mut s = String::new();
    for t in ts {
        s.push_str(&serde_json::to_string(t).expect("transcript serializes"));
        s.push('\n');
    }
    s
}

pub fn transcripts_from_jsonl(text: &str) -> serde_json::Result<Vec<RolloutTranscript>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
