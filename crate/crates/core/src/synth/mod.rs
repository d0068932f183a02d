//! Hierarchical task synthesis: a thought per consecutive step pair, then
//! one user instruction per contiguous span of a trajectory.

pub mod prompt;
pub mod template;

use std::collections::BTreeSet;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::registry::{Args, ToolRegistry};
use crate::rpc::RpcClient;
use crate::sampler::{Trajectory, TrajectoryStep};

pub use prompt::{display_value, PromptStep};
pub use template::TemplateGenerator;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const MIN_SPAN: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("generator error: {0}")]
pub struct GeneratorError(pub String);

impl GeneratorError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

/// Text completion contract shared by the template engine and external
/// models.
pub trait Generator: Send + Sync {
    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, GeneratorError>;
}

/// Generator behind a JSON-RPC endpoint answering `generator/complete` with
/// `{"text": ...}`.
pub struct ExternalGenerator {
    endpoint: String,
    client: Mutex<Option<RpcClient>>,
}

impl ExternalGenerator {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            client: Mutex::new(None),
        }
    }
}

impl Generator for ExternalGenerator {
    fn complete(&self, prompt: &str, temperature: f64) -> Result<String, GeneratorError> {
        let mut guard = self.client.lock().expect("generator client lock");
        if guard.is_none() {
            *guard = Some(
                RpcClient::connect(&self.endpoint)
                    .map_err(|e| GeneratorError::new(e.to_string()))?,
            );
        }
        let client = guard.as_mut().expect("client just set");
        let result = client
            .call(
                "generator/complete",
                json!({"prompt": prompt, "temperature": temperature}),
            )
            .map_err(|e| GeneratorError::new(e.to_string()));
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                *guard = None;
                return Err(e);
            }
        };
        result
            .get("text")
            .and_then(Value::as_str)
            .or_else(|| result.as_str())
            .map(str::to_string)
            .ok_or_else(|| GeneratorError::new("generator/complete returned no text"))
    }
}

/// All `(start, len)` spans with `len` in `[min_len, min(max_len, n)]`,
/// ordered by start, then length.
pub fn enumerate_subsequences(n: usize, min_len: usize, max_len: usize) -> Vec<(usize, usize)> {
    let min_len = min_len.max(1);
    let mut out = Vec::new();
    for start in 0..n {
        for len in min_len..=max_len.min(n - start) {
            out.push((start, len));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStep {
    pub tool: String,
    pub args: Args,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub steps: Vec<ReferenceStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProvenance {
    pub trajectory_id: String,
    /// `[start, len]` within the source trajectory.
    pub span: [usize; 2],
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCandidate {
    pub task_id: String,
    pub instruction: String,
    pub success_criteria: Vec<String>,
    pub reference: Reference,
    pub provenance: TaskProvenance,
    #[serde(default)]
    pub thoughts: Vec<String>,
}

impl TaskCandidate {
    pub fn distinct_tools(&self) -> usize {
        self.reference
            .steps
            .iter()
            .map(|s| s.tool.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn span_len(&self) -> usize {
        self.reference.steps.len()
    }
}

pub fn task_id(trajectory_id: &str, start: usize, len: usize) -> String {
    format!("{trajectory_id}/{start}-{len}")
}

pub fn corpus_to_jsonl(tasks: &[TaskCandidate]) -> String {
    let mut s = String::new();
    for t in tasks {
        s.push_str(&serde_json::to_string(t).expect("task serializes"));
        s.push('\n');
    }
    s
}

pub fn corpus_from_jsonl(text: &str) -> serde_json::Result<Vec<TaskCandidate>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Generator view of executed steps.
pub fn prompt_steps(registry: &ToolRegistry, steps: &[TrajectoryStep]) -> Vec<PromptStep> {
    steps
        .iter()
        .map(|s| {
            let spec = registry.get(&s.tool);
            PromptStep {
                app: spec.map(|t| t.namespace().to_string()).unwrap_or_default(),
                operation: spec
                    .map(|t| t.local_name().to_string())
                    .unwrap_or_else(|| s.tool.clone()),
                kind: spec.map_or(crate::registry::ToolKind::Other, |t| t.kind),
                inputs: s.args.clone(),
                outputs: s.payload.clone(),
            }
        })
        .collect()
}

/// Required argument values of the span, in step order, without repeats.
pub fn required_data(registry: &ToolRegistry, steps: &[TrajectoryStep]) -> Vec<(String, Value)> {
    let mut out: Vec<(String, Value)> = Vec::new();
    for s in steps {
        let Some(spec) = registry.get(&s.tool) else {
            continue;
        };
        for p in spec.required_params() {
            if let Some(v) = s.args.get(&p.name) {
                let pair = (p.name.clone(), v.clone());
                if !out.contains(&pair) {
                    out.push(pair);
                }
            }
        }
    }
    out
}

/// One sentence per consecutive pair of `steps`.
pub fn generate_low_level_thoughts(
    steps: &[PromptStep],
    gen: &dyn Generator,
    temperature: f64,
) -> Result<Vec<String>, GeneratorError> {
    if steps.len() < MIN_SPAN {
        return Err(GeneratorError::new("a span needs at least two steps"));
    }
    steps
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let text = gen.complete(
                &prompt::thought_prompt(&steps[..i], &pair[0], &pair[1]),
                temperature,
            )?;
            let text = text.trim();
            if text.is_empty() {
                return Err(GeneratorError::new("generator returned an empty thought"));
            }
            Ok(text.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub instruction: String,
    pub success_criteria: Vec<String>,
}

/// Parses the first JSON object in `text` as an [`Intent`].
pub fn parse_intent(text: &str) -> Result<Intent, GeneratorError> {
    let (Some(a), Some(b)) = (text.find('{'), text.rfind('}')) else {
        return Err(GeneratorError::new("generator output has no JSON object"));
    };
    if b < a {
        return Err(GeneratorError::new("generator output has no JSON object"));
    }
    let intent: Intent = serde_json::from_str(&text[a..=b]).map_err(|e| {
        GeneratorError::new(format!("generator output is not an intent object: {e}"))
    })?;
    if intent.instruction.trim().is_empty() {
        return Err(GeneratorError::new(
            "generator returned an empty instruction",
        ));
    }
    Ok(intent)
}

/// Single instruction covering all of `steps`; every value in `required`
/// must appear verbatim in it.
pub fn compose_high_level_intent(
    steps: &[PromptStep],
    thoughts: &[String],
    required: &[(String, Value)],
    gen: &dyn Generator,
    temperature: f64,
) -> Result<Intent, GeneratorError> {
    if thoughts.len() + 1 != steps.len() {
        return Err(GeneratorError::new(format!(
            "{} thoughts for {} steps",
            thoughts.len(),
            steps.len()
        )));
    }
    let domain: Vec<&str> = steps
        .iter()
        .map(|s| s.app.as_str())
        .filter(|a| !a.is_empty())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let text = gen.complete(
        &prompt::intent_prompt(&domain, steps, thoughts, required),
        temperature,
    )?;
    let intent = parse_intent(&text)?;
    for (k, v) in required {
        let shown = display_value(v);
        if !intent.instruction.contains(&shown) {
            return Err(GeneratorError::new(format!(
                "instruction omits {k} = {shown}"
            )));
        }
    }
    Ok(intent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisFailure {
    pub task_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthesisOutput {
    pub candidates: Vec<TaskCandidate>,
    pub failures: Vec<SynthesisFailure>,
}

/// Builds one candidate per trajectory span of length `[2, max_len]`.
/// Generation failures skip that candidate only.
pub fn synthesize_tasks(
    trajectories: &[Trajectory],
    registry: &ToolRegistry,
    max_len: usize,
    gen: &dyn Generator,
    temperature: f64,
) -> SynthesisOutput {
    let mut out = SynthesisOutput::default();
    for traj in trajectories {
        for (start, len) in enumerate_subsequences(traj.steps.len(), MIN_SPAN, max_len) {
            let id = task_id(&traj.trajectory_id, start, len);
            let span = &traj.steps[start..start + len];
            match synthesize_one(span, registry, gen, temperature) {
                Ok((intent, thoughts)) => out.candidates.push(TaskCandidate {
                    task_id: id,
                    instruction: intent.instruction,
                    success_criteria: intent.success_criteria,
                    reference: Reference {
                        steps: span
                            .iter()
                            .map(|s| ReferenceStep {
                                tool: s.tool.clone(),
                                args: s.args.clone(),
                            })
                            .collect(),
                    },
                    provenance: TaskProvenance {
                        trajectory_id: traj.trajectory_id.clone(),
                        span: [start, len],
                        rng_seed: traj.rng_seed,
                    },
                    thoughts,
                }),
                Err(e) => {
                    log::warn!("skipping {id}: {e}");
                    out.failures.push(SynthesisFailure {
                        task_id: id,
                        message: e.to_string(),
                    });
                }
            }
        }
    }
    out
}

fn synthesize_one(
    span: &[TrajectoryStep],
    registry: &ToolRegistry,
    gen: &dyn Generator,
    temperature: f64,
) -> Result<(Intent, Vec<String>), GeneratorError> {
    let steps = prompt_steps(registry, span);
    let thoughts = generate_low_level_thoughts(&steps, gen, temperature)?;
    let required = required_data(registry, span);
    let intent = compose_high_level_intent(&steps, &thoughts, &required, gen, temperature)?;
    Ok((intent, thoughts))
}
