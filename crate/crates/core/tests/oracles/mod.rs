//! Independent reference implementations used to cross-check the library.
//! Deliberately naive: full matrices, recomputation from scratch, no
//! pruning.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;
use trajforge::registry::{Manifest, ManifestField};
use trajforge::sampler::{ArgSource, Trajectory};
use trajforge::seed::SeedData;
use trajforge::{Args, ToolKind, ToolRegistry};

// ---------------------------------------------------------------------------
// Text
// ---------------------------------------------------------------------------

pub fn normalize(s: &str) -> String {
    let mut out = String::new();
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// Full-matrix edit distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1)
                .min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

pub fn similarity(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        1.0
    } else {
        1.0 - edit_distance(a, b) as f64 / n as f64
    }
}

pub struct DedupVerdict {
    pub kept: Vec<usize>,
    pub exact: BTreeSet<usize>,
    pub fuzzy: BTreeSet<usize>,
}

/// Exact pass over normalized text, then an in-order fuzzy pass comparing
/// each survivor against every earlier kept text.
pub fn dedup(texts: &[&str], threshold: f64) -> DedupVerdict {
    let norm: Vec<String> = texts.iter().map(|t| normalize(t)).collect();
    let mut exact = BTreeSet::new();
    for i in 0..norm.len() {
        if (0..i).any(|j| norm[j] == norm[i]) {
            exact.insert(i);
        }
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut fuzzy = BTreeSet::new();
    for i in (0..norm.len()).filter(|i| !exact.contains(i)) {
        if kept
            .iter()
            .any(|&k| similarity(&norm[k], &norm[i]) >= threshold)
        {
            fuzzy.insert(i);
        } else {
            kept.push(i);
        }
    }
    DedupVerdict { kept, exact, fuzzy }
}

// ---------------------------------------------------------------------------
// MMR
// ---------------------------------------------------------------------------

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy MMR recomputing every score from scratch each round.
pub fn mmr(vectors: &[Vec<f64>], k: usize, lambda: f64) -> Vec<usize> {
    let n = vectors.len();
    let dim = vectors.first().map_or(0, Vec::len);
    let centroid: Vec<f64> = (0..dim)
        .map(|d| vectors.iter().map(|v| v[d]).sum::<f64>() / n as f64)
        .collect();
    let mut picked: Vec<usize> = Vec::new();
    while picked.len() < k.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if picked.contains(&i) {
                continue;
            }
            let rel = cos(&vectors[i], &centroid);
            let score = if picked.is_empty() {
                rel
            } else {
                let red = picked
                    .iter()
                    .map(|&s| cos(&vectors[i], &vectors[s]))
                    .fold(f64::NEG_INFINITY, f64::max);
                lambda * rel - (1.0 - lambda) * red
            };
            match best {
                Some((_, b)) if score <= b => {}
                _ => best = Some((i, score)),
            }
        }
        picked.push(best.unwrap().0);
    }
    picked
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

pub type Call = (String, Args);

/// Recursive LCS length.
pub fn lcs(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return 0;
        }
        let key = (a.len(), b.len());
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let v = if a[0] == b[0] {
            1 + go(&a[1..], &b[1..], memo)
        } else {
            go(&a[1..], b, memo).max(go(a, &b[1..], memo))
        };
        memo.insert(key, v);
        v
    }
    go(a, b, &mut BTreeMap::new())
}

fn value_sim(a: &Value, b: &Value) -> f64 {
    match (a, b) {
        (Value::String(x), Value::String(y)) => similarity(x, y),
        _ => {
            if a == b {
                1.0
            } else {
                0.0
            }
        }
    }
}

pub fn params_sim(a: &Args, b: &Args) -> f64 {
    let mut names: Vec<&String> = a.keys().collect();
    for k in b.keys() {
        if !names.contains(&k) {
            names.push(k);
        }
    }
    if names.is_empty() {
        return 1.0;
    }
    let mut total = 0.0;
    for n in &names {
        if let (Some(x), Some(y)) = (a.get(*n), b.get(*n)) {
            total += value_sim(x, y);
        }
    }
    total / names.len() as f64
}

pub struct MatchVerdict {
    pub tool_name_match: f64,
    pub param_similarity: f64,
    pub order_similarity: f64,
    pub strict: bool,
    pub flexible: bool,
}

pub fn matching(pred: &[Call], gold: &[Call]) -> MatchVerdict {
    // in-order greedy name alignment, written as an explicit cursor walk
    let mut pairs = Vec::new();
    let mut cursor = 0usize;
    for (gi, g) in gold.iter().enumerate() {
        let mut p = cursor;
        while p < pred.len() && pred[p].0 != g.0 {
            p += 1;
        }
        if p < pred.len() {
            pairs.push((p, gi));
            cursor = p + 1;
        }
    }
    let tool = pairs.len() as f64 / pred.len().max(gold.len()) as f64;
    let param = if pairs.is_empty() {
        0.0
    } else {
        pairs
            .iter()
            .map(|&(p, g)| params_sim(&pred[p].1, &gold[g].1))
            .sum::<f64>()
            / pairs.len() as f64
    };
    let pn: Vec<&str> = pred.iter().map(|c| c.0.as_str()).collect();
    let gn: Vec<&str> = gold.iter().map(|c| c.0.as_str()).collect();
    let order = lcs(&pn, &gn) as f64 / gold.len() as f64;
    MatchVerdict {
        tool_name_match: tool,
        param_similarity: param,
        order_similarity: order,
        strict: pred == gold,
        flexible: pairs.len() == gold.len() && param >= 0.6 && order >= 0.5,
    }
}

// ---------------------------------------------------------------------------
// Registry and graph
// ---------------------------------------------------------------------------

/// Lower snake case for ASCII identifiers made of letters, digits, `_`, `-`
/// and camel humps.
pub fn snake(s: &str) -> String {
    let mut out = String::new();
    let chars: Vec<char> = s.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c == '-' || c == '_' || c == ' ' {
            if !out.is_empty() && !out.ends_with('_') {
                out.push('_');
            }
        } else if c.is_ascii_uppercase() {
            let prev_lower =
                i > 0 && (chars[i - 1].is_ascii_lowercase() || chars[i - 1].is_ascii_digit());
            if prev_lower && !out.ends_with('_') {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push(c);
        }
    }
    out.trim_end_matches('_').to_string()
}

fn canonical(m: &Manifest, server: &str, field: &str) -> String {
    let s = snake(field);
    m.aliases
        .iter()
        .find(|a| a.server == server && snake(&a.field) == s)
        .map(|a| snake(&a.canonical))
        .unwrap_or(s)
}

fn fields_meet(m: &Manifest, rs: &str, r: &ManifestField, ps: &str, p: &ManifestField) -> bool {
    r.semantic_type == p.semantic_type
        && match (&r.ref_entity, &p.ref_entity) {
            (Some(a), Some(b)) => a == b,
            _ => true,
        }
        && canonical(m, rs, &r.name) == canonical(m, ps, &p.name)
}

/// Every `(from, to, return field, param)` over all tool pairs, with field
/// names in canonical form.
pub fn edges(m: &Manifest) -> BTreeSet<(String, String, String, String)> {
    let mut out = BTreeSet::new();
    for a in &m.tools {
        for b in &m.tools {
            let (an, bn) = (
                format!("{}.{}", a.server, a.name),
                format!("{}.{}", b.server, b.name),
            );
            if an == bn {
                continue;
            }
            for r in &a.returns {
                for p in b.params.iter().filter(|p| p.required) {
                    if fields_meet(m, &a.server, r, &b.server, p) {
                        out.insert((
                            an.clone(),
                            bn.clone(),
                            canonical(m, &a.server, &r.name),
                            canonical(m, &b.server, &p.name),
                        ));
                    }
                }
            }
        }
    }
    out
}

fn type_ok(ty: &str, v: &Value) -> bool {
    match ty {
        "string" => v.is_string(),
        "integer" => v.as_i64().is_some() || v.as_u64().is_some(),
        "number" => v.is_number(),
        "boolean" => v.is_boolean(),
        "array" => v.is_array(),
        "object" => v.is_object(),
        _ => false,
    }
}

/// Schema check written rule by rule against the raw manifest fields.
pub fn arguments_ok(params: &[ManifestField], args: &Args) -> bool {
    let required_present = params
        .iter()
        .filter(|p| p.required)
        .all(|p| args.contains_key(&p.name));
    let known = args.keys().all(|k| params.iter().any(|p| &p.name == k));
    let typed = args.iter().all(|(k, v)| {
        params
            .iter()
            .find(|p| &p.name == k)
            .is_none_or(|p| type_ok(p.semantic_type.as_deref().unwrap_or(""), v))
    });
    required_present && known && typed
}

// ---------------------------------------------------------------------------
// Sampler audit
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
pub struct AuditOutcome {
    pub trajectories: usize,
    pub required_args: usize,
    pub provenance_violations: Vec<String>,
    pub generated_on_non_create: Vec<String>,
}

/// Checks every required argument's provenance claim against the recorded
/// trajectories, which must be in emission order.
pub fn audit(registry: &ToolRegistry, seed: &SeedData, trajs: &[Trajectory]) -> AuditOutcome {
    let mut out = AuditOutcome {
        trajectories: trajs.len(),
        ..Default::default()
    };
    for (ti, t) in trajs.iter().enumerate() {
        for (si, step) in t.steps.iter().enumerate() {
            let Some(spec) = registry.get(&step.tool) else {
                out.provenance_violations
                    .push(format!("{}: unknown tool {}", t.trajectory_id, step.tool));
                continue;
            };
            for p in spec.required_params() {
                out.required_args += 1;
                let here = format!("{} step {si} {}.{}", t.trajectory_id, step.tool, p.name);
                let (Some(value), Some(prov)) =
                    (step.args.get(&p.name), step.provenance.get(&p.name))
                else {
                    out.provenance_violations
                        .push(format!("{here}: no value or provenance"));
                    continue;
                };
                let produced = |traj: &Trajectory, at: usize, tool: &str, field: &str| {
                    traj.steps
                        .get(at)
                        .is_some_and(|s| s.tool == tool && s.payload.get(field) == Some(value))
                };
                let ok = match (prov.source, &prov.origin) {
                    (ArgSource::ParentOutput, Some(o)) => {
                        o.trajectory.is_none()
                            && o.step + 1 == si
                            && produced(t, o.step, &o.tool, &o.field)
                    }
                    (ArgSource::LocalMemory, Some(o)) => {
                        o.trajectory.is_none()
                            && o.step < si
                            && produced(t, o.step, &o.tool, &o.field)
                    }
                    (ArgSource::GlobalMemory, Some(o)) => o
                        .trajectory
                        .is_some_and(|g| g < ti && produced(&trajs[g], o.step, &o.tool, &o.field)),
                    (ArgSource::Seed, None) => {
                        let canon = trajforge::registry::normalize_field(
                            spec.namespace(),
                            &p.name,
                            registry.aliases(),
                        );
                        seed.values(&canon).contains(value) || seed.values(&p.name).contains(value)
                    }
                    (ArgSource::Generated, None) => {
                        if spec.kind != ToolKind::Create {
                            out.generated_on_non_create.push(here.clone());
                        }
                        true
                    }
                    _ => false,
                };
                if !ok {
                    out.provenance_violations
                        .push(format!("{here}: claim {prov:?} not supported"));
                }
            }
        }
    }
    out
}
