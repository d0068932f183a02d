//! Rollout rewards, group-relative advantages and trajectory matching.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::{Environment, Episode, Operation};
use crate::react::{RolloutTranscript, Terminal};
use crate::registry::Args;
use crate::seed::SeedData;
use crate::synth::{display_value, Reference, TaskCandidate};
use crate::text::levenshtein_similarity;

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const FLEXIBLE_PARAM_THRESHOLD: f64 = 0.6;
pub const FLEXIBLE_ORDER_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("a group needs at least two rewards, got {0}")]
    DegenerateGroup(usize),
    #[error("epsilon must be a non-negative finite number, got {0}")]
    Epsilon(f64),
}

/// Weights for tool selection, execution success, answer correctness and
/// format compliance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct RewardWeights([f64; 4]);

impl RewardWeights {
    pub fn new(w: [f64; 4]) -> Result<Self, RewardError> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(RewardError::Weights(format!(
                "{w:?} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RewardError::Weights(format!("{w:?} sums to {sum}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn get(&self) -> [f64; 4] {
        self.0
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self([0.25; 4])
    }
}

impl TryFrom<[f64; 4]> for RewardWeights {
    type Error = RewardError;
    fn try_from(w: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(w)
    }
}

impl From<RewardWeights> for [f64; 4] {
    fn from(w: RewardWeights) -> Self {
        w.0
    }
}

impl std::str::FromStr for RewardWeights {
    type Err = RewardError;

    /// Parses `w1,w2,w3,w4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| RewardError::Weights(format!("{s:?}: {e}")))?;
        let arr: [f64; 4] = parts
            .try_into()
            .map_err(|_| RewardError::Weights(format!("{s:?} needs exactly four values")))?;
        Self::new(arr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
}

impl RewardComponents {
    pub fn as_array(&self) -> [f64; 4] {
        [self.r1, self.r2, self.r3, self.r4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReward {
    pub components: RewardComponents,
    pub total: f64,
    pub zeroed: bool,
}

// ---------------------------------------------------------------------------
// Final-state checks
// ---------------------------------------------------------------------------

/// An entity in some app store, with the record fields expected on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRef {
    pub app: String,
    pub entity: String,
    pub id: String,
    #[serde(default)]
    pub fields: Args,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Predicate {
    EntityExists(EntityRef),
    AnswerContains { substrings: Vec<String> },
}

/// Conjunction of predicates over the final answer and the episode end
/// state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalCheck {
    pub predicates: Vec<Predicate>,
}

impl FinalCheck {
    /// Entity checks read through tools on a copy of `ep`, so the episode
    /// itself is untouched. With no predicates, any final answer passes.
    pub fn evaluate(&self, final_answer: Option<&str>, ep: &Episode) -> bool {
        if self.predicates.is_empty() {
            return final_answer.is_some();
        }
        let mut probe = ep.clone();
        self.predicates.iter().all(|p| match p {
            Predicate::EntityExists(r) => verify_creation(&mut probe, std::slice::from_ref(r)),
            Predicate::AnswerContains { substrings } => {
                final_answer.is_some_and(|a| substrings.iter().all(|s| a.contains(s.as_str())))
            }
        })
    }
}

/// Reads each ref with its app's READ tool and compares the returned record
/// against `fields`. Entities without a READ tool are looked up through a
/// parameterless LIST tool instead. Fails when neither exists, the read
/// errors, or any field differs.
pub fn verify_creation(ep: &mut Episode, refs: &[EntityRef]) -> bool {
    let env = Arc::clone(ep.env());
    refs.iter().all(|r| {
        let Some(schema) = env.world().entity(&r.app, &r.entity) else {
            return false;
        };
        let record = if let Some(read) = env.read_tool_for(&r.app, &r.entity) {
            let mut args = Args::new();
            args.insert(schema.id_field.clone(), Value::String(r.id.clone()));
            let result = ep.call(&read.qualified_name, &args);
            if !result.is_success() {
                return false;
            }
            let mut record = result.details.clone();
            record.extend(result.payload.clone().unwrap_or_default());
            record
        } else {
            let Some(list) = env.world().bindings.iter().find(|b| {
                b.app == r.app
                    && b.entity == r.entity
                    && b.op == Operation::List
                    && env
                        .registry()
                        .get(&b.tool)
                        .is_some_and(|t| t.required_params().next().is_none())
            }) else {
                return false;
            };
            let result = ep.call(&list.tool, &Args::new());
            let found = result
                .payload_value(&schema.plural)
                .and_then(Value::as_array)
                .and_then(|items| {
                    items
                        .iter()
                        .filter_map(Value::as_object)
                        .find(|o| {
                            o.get(&schema.id_field).and_then(Value::as_str) == Some(r.id.as_str())
                        })
                        .cloned()
                });
            match found {
                Some(rec) => rec,
                None => return false,
            }
        };
        r.fields.iter().all(|(k, v)| record.get(k) == Some(v))
    })
}

/// Replays the task's reference in a fresh episode and derives the checks
/// its end state must satisfy: every entity created or updated by the
/// reference and still present, with the record values the reference
/// supplied. Spans that leave no such entity fall back to requiring the last
/// step's string arguments in the answer. `Err` means the reference itself
/// failed.
pub fn compile_final_check(
    task: &TaskCandidate,
    env: &Arc<Environment>,
    seed: &SeedData,
) -> Result<FinalCheck, String> {
    let mut ep = env
        .create_episode(seed, task.provenance.rng_seed)
        .map_err(|e| e.to_string())?;
    let mut touched: BTreeMap<(String, String, String), Vec<String>> = BTreeMap::new();
    for (i, step) in task.reference.steps.iter().enumerate() {
        let result = ep.call(&step.tool, &step.args);
        if !result.is_success() {
            return Err(format!(
                "reference step {i} ({}) failed: {}",
                step.tool,
                result.error_message.unwrap_or_default()
            ));
        }
        let Some(binding) = env.world().binding(&step.tool) else {
            continue;
        };
        let Some(schema) = env.world().entity(&binding.app, &binding.entity) else {
            continue;
        };
        let id = match binding.op {
            Operation::Create => result
                .payload_value(&schema.id_field)
                .or_else(|| result.details.get(&schema.id_field))
                .and_then(Value::as_str),
            Operation::Update => step.args.get(&schema.id_field).and_then(Value::as_str),
            _ => None,
        };
        let Some(id) = id else { continue };
        let fields = touched
            .entry((binding.app.clone(), binding.entity.clone(), id.to_string()))
            .or_default();
        for k in step.args.keys() {
            let f = binding.field_for_param(k);
            if f != schema.id_field && schema.field(f).is_some() && !fields.iter().any(|x| x == f) {
                fields.push(f.to_string());
            }
        }
    }

    let mut predicates = Vec::new();
    for ((app, entity, id), names) in touched {
        let Some(rec) = ep.record(&app, &entity, &id) else {
            continue;
        };
        let fields: Args = names
            .iter()
            .filter_map(|n| rec.get(n).map(|v| (n.clone(), v.clone())))
            .collect();
        predicates.push(Predicate::EntityExists(EntityRef {
            app,
            entity,
            id,
            fields,
        }));
    }
    if predicates.is_empty() {
        if let Some(last) = task.reference.steps.last() {
            let substrings: Vec<String> = last
                .args
                .values()
                .filter(|v| v.is_string())
                .map(display_value)
                .collect();
            predicates.push(Predicate::AnswerContains { substrings });
        }
    }
    Ok(FinalCheck { predicates })
}

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// Share of the gold tool multiset covered by the predicted calls.
pub fn tool_selection_score(predicted: &[&str], gold: &[&str]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let mut remaining: BTreeMap<&str, usize> = BTreeMap::new();
    for g in gold {
        *remaining.entry(g).or_default() += 1;
    }
    let mut hit = 0usize;
    for p in predicted {
        if let Some(n) = remaining.get_mut(p) {
            if *n > 0 {
                *n -= 1;
                hit += 1;
            }
        }
    }
    (hit as f64 / gold.len() as f64).min(1.0)
}

/// Scores one rollout. `final_check` is `None` when the gold reference
/// failed to re-execute, which zeroes the reward. `end_state` is the
/// episode the rollout ran in.
///
/// # Panics
///
/// If `gold` has no steps.
pub fn score_trajectory(
    t: &RolloutTranscript,
    gold: &Reference,
    final_check: Option<&FinalCheck>,
    end_state: &Episode,
    w: &RewardWeights,
) -> TrajectoryReward {
    assert!(!gold.steps.is_empty(), "gold reference must not be empty");
    let predicted: Vec<&str> = t.calls.iter().map(|c| c.tool.as_str()).collect();
    let gold_tools: Vec<&str> = gold.steps.iter().map(|s| s.tool.as_str()).collect();
    let r1 = tool_selection_score(&predicted, &gold_tools);
    let r2 = if t.calls.is_empty() {
        0.0
    } else {
        t.calls
            .iter()
            .filter(|c| c.status == crate::env::ToolStatus::Success)
            .count() as f64
            / t.calls.len() as f64
    };
    let r3 = match final_check {
        Some(c) if c.evaluate(t.final_answer.as_deref(), end_state) => 1.0,
        _ => 0.0,
    };
    let r4 = if t.terminal == Terminal::FinalAnswer && t.parse_failures == 0 {
        1.0
    } else {
        0.0
    };
    let components = RewardComponents { r1, r2, r3, r4 };
    let zeroed = final_check.is_none();
    let total = if zeroed {
        0.0
    } else {
        let w = w.get();
        components
            .as_array()
            .iter()
            .zip(w)
            .map(|(r, w)| r * w)
            .sum::<f64>()
            .clamp(0.0, 1.0)
    };
    TrajectoryReward {
        components,
        total,
        zeroed,
    }
}

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub epsilon: f64,
}

/// Population mean and standard deviation.
pub fn population_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(r - mean) / (std + epsilon)` per reward, using population statistics.
/// A group with zero spread and zero epsilon gets all-zero advantages.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<GroupAdvantages, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::DegenerateGroup(rewards.len()));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(RewardError::Epsilon(epsilon));
    }
    let (mean, std) = population_stats(rewards);
    let denom = std + epsilon;
    let advantages = rewards
        .iter()
        .map(|r| {
            if denom == 0.0 {
                0.0
            } else {
                (r - mean) / denom
            }
        })
        .collect();
    Ok(GroupAdvantages {
        rewards: rewards.to_vec(),
        advantages,
        epsilon,
    })
}

// ---------------------------------------------------------------------------
// Trajectory matching
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Strict,
    Flexible,
}

impl std::str::FromStr for MatchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(Self::Strict),
            "flexible" => Ok(Self::Flexible),
            other => Err(format!("unknown match mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub mode: MatchMode,
    /// Aligned calls over `max(|pred|, |gold|)`.
    pub tool_name_match: f64,
    pub param_similarity: f64,
    pub order_similarity: f64,
    pub passed: bool,
}

pub type Call = (String, Args);

/// Pairs `(pred_index, gold_index)`: each gold call takes the first unused
/// predicted call with the same name after the previous match.
pub fn align_calls(pred: &[Call], gold: &[Call]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut next = 0;
    for (gi, (name, _)) in gold.iter().enumerate() {
        if let Some(off) = pred[next..].iter().position(|(p, _)| p == name) {
            out.push((next + off, gi));
            next += off + 1;
        }
    }
    out
}

fn value_similarity(a: &Value, b: &Value) -> f64 {
    match (a, b) {
        (Value::String(x), Value::String(y)) => levenshtein_similarity(x, y),
        _ if a == b => 1.0,
        _ => 0.0,
    }
}

/// Mean per-name similarity over the union of parameter names; a name on
/// one side only scores 0. Two empty argument sets score 1.
pub fn param_similarity(a: &Args, b: &Args) -> f64 {
    let names: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    if names.is_empty() {
        return 1.0;
    }
    let total: f64 = names
        .iter()
        .map(|n| match (a.get(*n), b.get(*n)) {
            (Some(x), Some(y)) => value_similarity(x, y),
            _ => 0.0,
        })
        .sum();
    total / names.len() as f64
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// # Panics
///
/// If `gold` is empty.
pub fn match_trajectories(pred: &[Call], gold: &[Call], mode: MatchMode) -> MatchReport {
    assert!(!gold.is_empty(), "gold trajectory must not be empty");
    let aligned = align_calls(pred, gold);
    let tool_name_match = aligned.len() as f64 / pred.len().max(gold.len()) as f64;
    let param = if aligned.is_empty() {
        0.0
    } else {
        aligned
            .iter()
            .map(|&(p, g)| param_similarity(&pred[p].1, &gold[g].1))
            .sum::<f64>()
            / aligned.len() as f64
    };
    let pn: Vec<&str> = pred.iter().map(|c| c.0.as_str()).collect();
    let gn: Vec<&str> = gold.iter().map(|c| c.0.as_str()).collect();
    let order = lcs_len(&pn, &gn) as f64 / gold.len() as f64;
    let passed = match mode {
        MatchMode::Strict => tool_name_match == 1.0 && param == 1.0 && order == 1.0,
        MatchMode::Flexible => {
            aligned.len() == gold.len()
                && param >= FLEXIBLE_PARAM_THRESHOLD
                && order >= FLEXIBLE_ORDER_THRESHOLD
        }
    };
    MatchReport {
        mode,
        tool_name_match,
        param_similarity: param,
        order_similarity: order,
        passed,
    }
}

/// One line of the score report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub task_id: String,
    #[serde(default)]
    pub rollout: usize,
    pub components: RewardComponents,
    pub total: f64,
    pub zeroed: bool,
    #[serde(rename = "match")]
    pub match_report: MatchReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<f64>,
}
