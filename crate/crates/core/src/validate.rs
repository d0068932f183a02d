//! Corpus validation: de-duplication, MMR diversity selection, grounding.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::env::{EnvError, Environment, ToolResult};
use crate::hash::fnv1a64;
use crate::registry::{validate_payload, Args, ToolRegistry};
use crate::rpc::RpcClient;
use crate::seed::SeedData;
use crate::synth::TaskCandidate;
use crate::text::{normalize_text, similar_at_least};

pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.9;
pub const DEFAULT_MMR_LAMBDA: f64 = 0.5;
pub const DEFAULT_MMR_FRACTION: f64 = 0.5;
pub const DEFAULT_EMBED_DIM: usize = 256;

// ---------------------------------------------------------------------------
// Dedup
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupOutcome {
    /// Surviving input indices, in input order.
    pub kept: Vec<usize>,
    /// `(removed, kept index it duplicates)`.
    pub removed_exact: Vec<(usize, usize)>,
    pub removed_fuzzy: Vec<(usize, usize)>,
}

/// Bag-distance lower bound on edit distance over folded char histograms.
fn histogram(chars: &[char]) -> [u16; 64] {
    let mut h = [0u16; 64];
    for &c in chars {
        let slot = &mut h[(c as u32 % 64) as usize];
        *slot = slot.saturating_add(1);
    }
    h
}

fn bag_lower_bound(a: &[u16; 64], b: &[u16; 64]) -> usize {
    let (mut pos, mut neg) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        if x > y {
            pos += usize::from(x - y);
        } else {
            neg += usize::from(y - x);
        }
    }
    pos.max(neg)
}

/// Removes exact duplicates (after lowercasing and whitespace collapse), then
/// scans in input order removing any text whose normalized-Levenshtein
/// similarity to an earlier kept text reaches `threshold`.
///
/// # Panics
///
/// If `threshold` is not in `(0, 1]`.
pub fn dedup(texts: &[&str], threshold: f64) -> DedupOutcome {
    assert!(
        threshold > 0.0 && threshold <= 1.0,
        "dedup threshold must be in (0, 1]"
    );
    let normalized: Vec<String> = texts.iter().map(|t| normalize_text(t)).collect();
    let mut out = DedupOutcome::default();

    let mut first_seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut survivors = Vec::new();
    for (i, n) in normalized.iter().enumerate() {
        match first_seen.get(n.as_str()) {
            Some(&j) => out.removed_exact.push((i, j)),
            None => {
                first_seen.insert(n, i);
                survivors.push(i);
            }
        }
    }

    struct Kept {
        index: usize,
        chars: Vec<char>,
        hist: [u16; 64],
    }
    let mut kept: Vec<Kept> = Vec::new();
    for i in survivors {
        let chars: Vec<char> = normalized[i].chars().collect();
        let hist = histogram(&chars);
        let dup = kept.iter().find(|k| {
            let longest = k.chars.len().max(chars.len());
            let bound = ((1.0 - threshold) * longest as f64).ceil() as usize + 1;
            k.chars.len().abs_diff(chars.len()) <= bound
                && bag_lower_bound(&k.hist, &hist) <= bound
                && similar_at_least(&k.chars, &chars, threshold)
        });
        match dup {
            Some(k) => out.removed_fuzzy.push((i, k.index)),
            None => kept.push(Kept {
                index: i,
                chars,
                hist,
            }),
        }
    }
    out.kept = kept.into_iter().map(|k| k.index).collect();
    out
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("embedding provider error: {0}")]
pub struct ProviderError(pub String);

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

/// Feature hashing of word unigrams and bigrams, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBED_DIM,
        }
    }
}

/// Lowercased alphanumeric words (underscores kept).
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl HashEmbedder {
    /// Unigram and bigram features of `text`, before hashing.
    pub fn features(text: &str) -> Vec<String> {
        let w = words(text);
        let mut f: Vec<String> = w.iter().map(|u| format!("u:{u}")).collect();
        f.extend(w.windows(2).map(|p| format!("b:{} {}", p[0], p[1])));
        f
    }

    pub fn bucket(&self, feature: &str) -> usize {
        (fnv1a64(feature.as_bytes()) % self.dim as u64) as usize
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        assert!(self.dim > 0, "embedding dimension must be positive");
        let mut v = vec![0.0; self.dim];
        for f in Self::features(text) {
            v[self.bucket(&f)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(self.embed_text(text))
    }
}

/// Embedder behind a JSON-RPC endpoint answering `embedder/embed` with
/// `{"vector": [...]}`.
pub struct ExternalEmbedder {
    endpoint: String,
    client: Mutex<Option<RpcClient>>,
}

impl ExternalEmbedder {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            client: Mutex::new(None),
        }
    }
}

impl Embedder for ExternalEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let mut guard = self.client.lock().expect("embedder client lock");
        if guard.is_none() {
            *guard =
                Some(RpcClient::connect(&self.endpoint).map_err(|e| ProviderError(e.to_string()))?);
        }
        let client = guard.as_mut().expect("client just set");
        let result = match client.call("embedder/embed", json!({"text": text})) {
            Ok(r) => r,
            Err(e) => {
                *guard = None;
                return Err(ProviderError(e.to_string()));
            }
        };
        result
            .get("vector")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| ProviderError("embedder/embed returned no numeric vector".into()))
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

pub fn centroid(vectors: &[Vec<f64>]) -> Vec<f64> {
    let dim = vectors.first().map_or(0, Vec::len);
    let mut c = vec![0.0; dim];
    for v in vectors {
        for (s, x) in c.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = vectors.len().max(1) as f64;
    for s in &mut c {
        *s /= n;
    }
    c
}

// ---------------------------------------------------------------------------
// MMR
// ---------------------------------------------------------------------------

/// Greedy maximal-marginal-relevance selection with relevance = cosine to
/// the centroid of `vectors`. Returns indices in pick order; ties go to the
/// lower index.
///
/// # Panics
///
/// If `lambda` is outside `[0, 1]` or `k == 0`.
pub fn mmr_select(vectors: &[Vec<f64>], k: usize, lambda: f64) -> Vec<usize> {
    assert!((0.0..=1.0).contains(&lambda), "lambda must be in [0, 1]");
    assert!(k >= 1, "k must be at least 1");
    let n = vectors.len();
    let c = centroid(vectors);
    let relevance: Vec<f64> = vectors.iter().map(|v| cosine(v, &c)).collect();
    let mut max_sim = vec![f64::NEG_INFINITY; n];
    let mut chosen = vec![false; n];
    let mut picks = Vec::with_capacity(k.min(n));
    while picks.len() < k.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !chosen[i]) {
            let score = if picks.is_empty() {
                relevance[i]
            } else {
                lambda * relevance[i] - (1.0 - lambda) * max_sim[i]
            };
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((i, score));
            }
        }
        let (p, _) = best.expect("an unchosen item remains");
        chosen[p] = true;
        picks.push(p);
        for i in (0..n).filter(|&i| !chosen[i]) {
            max_sim[i] = max_sim[i].max(cosine(&vectors[i], &vectors[p]));
        }
    }
    picks
}

/// Default MMR target: half the items, rounded up, at least one.
pub fn default_mmr_k(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).max(1)
}

// ---------------------------------------------------------------------------
// Grounding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingOutcome {
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failing_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl GroundingOutcome {
    fn fail(step: usize, detail: String) -> Self {
        Self {
            passed: false,
            failing_step: Some(step),
            detail: Some(detail),
        }
    }
}

/// Runs the reference steps through `exec` and checks status and return
/// schema of every call.
pub fn ground_with(
    task: &TaskCandidate,
    registry: &ToolRegistry,
    exec: &mut dyn FnMut(&str, &Args) -> Result<ToolResult, EnvError>,
) -> GroundingOutcome {
    for (i, step) in task.reference.steps.iter().enumerate() {
        let Some(spec) = registry.get(&step.tool) else {
            return GroundingOutcome::fail(i, format!("unknown tool {}", step.tool));
        };
        let result = match exec(&step.tool, &step.args) {
            Ok(r) => r,
            Err(e) => return GroundingOutcome::fail(i, e.to_string()),
        };
        if !result.is_success() {
            return GroundingOutcome::fail(
                i,
                result
                    .error_message
                    .unwrap_or_else(|| "tool call failed".into()),
            );
        }
        let check = validate_payload(spec, result.payload.as_ref().unwrap_or(&Args::new()));
        if !check.is_ok() {
            return GroundingOutcome::fail(i, format!("schema violation: {}", check.describe()));
        }
    }
    GroundingOutcome {
        passed: true,
        failing_step: None,
        detail: None,
    }
}

/// Re-executes the task's reference in a fresh episode seeded with `seed`
/// and the task's recorded rng seed.
pub fn ground(task: &TaskCandidate, env: &Arc<Environment>, seed: &SeedData) -> GroundingOutcome {
    let mut ep = match env.create_episode(seed, task.provenance.rng_seed) {
        Ok(ep) => ep,
        Err(e) => return GroundingOutcome::fail(0, e.to_string()),
    };
    ground_with(task, env.registry(), &mut |tool, args| {
        ep.execute_tool(tool, args)
    })
}

// ---------------------------------------------------------------------------
// Three-stage pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub dedup_threshold: f64,
    pub mmr_lambda: f64,
    /// Explicit MMR target; `None` means `mmr_fraction` of the post-dedup
    /// count.
    pub mmr_k: Option<usize>,
    pub mmr_fraction: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            mmr_lambda: DEFAULT_MMR_LAMBDA,
            mmr_k: None,
            mmr_fraction: DEFAULT_MMR_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    ExactDuplicate,
    FuzzyDuplicate,
    MmrDropped,
    GroundingFailed,
    Retained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disposition {
    pub task_id: String,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub input_count: usize,
    pub removed_exact: usize,
    pub removed_fuzzy: usize,
    pub mmr_selected: usize,
    pub mmr_dropped: usize,
    pub grounding_failed: usize,
    pub retained_count: usize,
    pub dispositions: Vec<Disposition>,
    /// Written separately as corpus JSONL.
    #[serde(skip)]
    pub retained: Vec<TaskCandidate>,
}

impl ValidationReport {
    /// Every input is accounted for exactly once.
    pub fn balances(&self) -> bool {
        self.input_count
            == self.removed_exact
                + self.removed_fuzzy
                + self.mmr_dropped
                + self.grounding_failed
                + self.retained_count
            && self.dispositions.len() == self.input_count
            && self.retained.len() == self.retained_count
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Applies dedup, then MMR, then grounding. `retained` keeps input order.
pub fn validate_corpus(
    tasks: &[TaskCandidate],
    cfg: &ValidationConfig,
    embedder: &dyn Embedder,
    grounder: &mut dyn FnMut(&TaskCandidate) -> GroundingOutcome,
) -> Result<ValidationReport, ProviderError> {
    let mut stage: Vec<Option<(Stage, Option<String>)>> = vec![None; tasks.len()];
    let texts: Vec<&str> = tasks.iter().map(|t| t.instruction.as_str()).collect();
    let d = dedup(&texts, cfg.dedup_threshold);
    for &(i, j) in &d.removed_exact {
        stage[i] = Some((
            Stage::ExactDuplicate,
            Some(format!("same as {}", tasks[j].task_id)),
        ));
    }
    for &(i, j) in &d.removed_fuzzy {
        stage[i] = Some((
            Stage::FuzzyDuplicate,
            Some(format!("near {}", tasks[j].task_id)),
        ));
    }

    let mut selected: Vec<usize> = Vec::new();
    if !d.kept.is_empty() {
        let vectors = d
            .kept
            .iter()
            .map(|&i| embedder.embed(&tasks[i].instruction))
            .collect::<Result<Vec<_>, _>>()?;
        let k = cfg
            .mmr_k
            .unwrap_or_else(|| default_mmr_k(d.kept.len(), cfg.mmr_fraction));
        selected = mmr_select(&vectors, k, cfg.mmr_lambda)
            .into_iter()
            .map(|p| d.kept[p])
            .collect();
    }
    let mut is_selected = vec![false; tasks.len()];
    for &i in &selected {
        is_selected[i] = true;
    }
    for &i in &d.kept {
        if !is_selected[i] {
            stage[i] = Some((Stage::MmrDropped, None));
        }
    }
    selected.sort_unstable();
    for &i in &selected {
        let g = grounder(&tasks[i]);
        stage[i] = Some(if g.passed {
            (Stage::Retained, None)
        } else {
            let detail = format!(
                "step {}: {}",
                g.failing_step.unwrap_or(0),
                g.detail.unwrap_or_default()
            );
            (Stage::GroundingFailed, Some(detail))
        });
    }

    let mut report = ValidationReport {
        input_count: tasks.len(),
        mmr_selected: selected.len(),
        ..ValidationReport::default()
    };
    for (t, s) in tasks.iter().zip(stage) {
        let (stage, detail) = s.expect("every task reaches a stage");
        match stage {
            Stage::ExactDuplicate => report.removed_exact += 1,
            Stage::FuzzyDuplicate => report.removed_fuzzy += 1,
            Stage::MmrDropped => report.mmr_dropped += 1,
            Stage::GroundingFailed => report.grounding_failed += 1,
            Stage::Retained => {
                report.retained_count += 1;
                report.retained.push(t.clone());
            }
        }
        report.dispositions.push(Disposition {
            task_id: t.task_id.clone(),
            stage,
            detail,
        });
    }
    Ok(report)
}
