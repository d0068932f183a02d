//! Constraint-aware depth-first trajectory sampling.
//!
//! Arguments are resolved from, in order: the previous step's output, the
//! current trajectory's memory, the run-wide memory, the seed data, and (for
//! CREATE tools only) a value generator. Every resolved value carries an
//! [`ArgProvenance`] so the data flow can be audited afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::env::{EnvError, Environment, Episode, ToolStatus};
use crate::graph::{compatible, ToolGraph};
use crate::registry::{
    normalize_field, validate_arguments, AliasTable, Args, ParamSpec, SemanticType, ToolKind,
    ToolRegistry, ToolSpec,
};
use crate::seed::SeedData;
use crate::synth::GeneratorError;

pub const DEFAULT_DEPTH: usize = 6;
pub const DEFAULT_PER_ENTRY: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    Config(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArgSource {
    ParentOutput,
    LocalMemory,
    GlobalMemory,
    Seed,
    Generated,
}

/// Where a memory value was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    /// Emission index of the producing trajectory within the run; `None`
    /// for the trajectory currently being built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<usize>,
    pub step: usize,
    pub tool: String,
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgProvenance {
    pub source: ArgSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub value: Value,
    pub tool: String,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<usize>,
    /// Field name as declared by the producing tool.
    pub field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_entity: Option<String>,
}

/// Append-only store of produced values keyed by canonical field name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    entries: BTreeMap<String, Vec<MemoryEntry>>,
}

impl MemoryBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, canonical: &str, entry: MemoryEntry) {
        self.entries
            .entry(canonical.to_string())
            .or_default()
            .push(entry);
    }

    pub fn latest(&self, canonical: &str) -> Option<&MemoryEntry> {
        self.entries.get(canonical).and_then(|v| v.last())
    }

    /// Most recent entry for `canonical` whose value has type `ty` and whose
    /// entity annotation does not conflict with `ref_entity`.
    pub fn lookup(
        &self,
        canonical: &str,
        ty: SemanticType,
        ref_entity: Option<&str>,
    ) -> Option<&MemoryEntry> {
        self.entries.get(canonical)?.iter().rev().find(|e| {
            ty.accepts(&e.value)
                && match (ref_entity, e.ref_entity.as_deref()) {
                    (Some(a), Some(b)) => a == b,
                    _ => true,
                }
        })
    }

    pub fn entries(&self, canonical: &str) -> &[MemoryEntry] {
        self.entries
            .get(canonical)
            .map(Vec::as_slice)
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records every declared return field of `tool` found in `payload`.
    fn record_outputs(
        &mut self,
        tool: &ToolSpec,
        payload: &Args,
        step: usize,
        trajectory: Option<usize>,
        aliases: &AliasTable,
    ) {
        for r in &tool.returns {
            if let Some(v) = payload.get(&r.name) {
                self.push(
                    &normalize_field(tool.namespace(), &r.name, aliases),
                    MemoryEntry {
                        value: v.clone(),
                        tool: tool.qualified_name.clone(),
                        step,
                        trajectory,
                        field: r.name.clone(),
                        ref_entity: r.ref_entity.clone(),
                    },
                );
            }
        }
    }
}

/// Produces values for CREATE-tool inputs nothing else can supply.
pub trait ArgumentGenerator {
    fn generate(&mut self, tool: &ToolSpec, param: &ParamSpec) -> Result<Value, GeneratorError>;
}

/// Schema-derived values: `<param>_<counter>` strings, counter integers and
/// numbers, `false`, `[]`, `{}`. Counters are kept per param name.
#[derive(Debug, Clone, Default)]
pub struct DefaultArgumentGenerator {
    counters: BTreeMap<String, u64>,
}

impl DefaultArgumentGenerator {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ArgumentGenerator for DefaultArgumentGenerator {
    fn generate(&mut self, _tool: &ToolSpec, param: &ParamSpec) -> Result<Value, GeneratorError> {
        let n = self.counters.entry(param.name.clone()).or_insert(0);
        *n += 1;
        Ok(match param.semantic_type {
            SemanticType::String => json!(format!("{}_{:04}", param.name, n)),
            SemanticType::Integer => json!(*n),
            SemanticType::Number => json!(*n as f64),
            SemanticType::Boolean => json!(false),
            SemanticType::Array => json!([]),
            SemanticType::Object => json!({}),
        })
    }
}

/// Generates every required param of a CREATE tool.
pub fn generate_create_arguments(
    tool: &ToolSpec,
    gen: &mut dyn ArgumentGenerator,
) -> Result<Args, GeneratorError> {
    if tool.kind != ToolKind::Create {
        return Err(GeneratorError::new(format!(
            "{} is not a CREATE tool",
            tool.qualified_name
        )));
    }
    let mut args = Args::new();
    for p in tool.required_params() {
        args.insert(p.name.clone(), gen.generate(tool, p)?);
    }
    let outcome = validate_arguments(tool, &args);
    if !outcome.is_ok() {
        return Err(GeneratorError::new(format!(
            "generated arguments for {} are invalid: {}",
            tool.qualified_name,
            outcome.describe()
        )));
    }
    Ok(args)
}

/// Output of the step an argument may be taken from directly.
#[derive(Debug, Clone, Copy)]
pub struct ParentOutput<'a> {
    pub tool: &'a ToolSpec,
    pub payload: &'a Args,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    Resolved {
        args: Args,
        provenance: BTreeMap<String, ArgProvenance>,
    },
    Unsatisfiable {
        param: String,
    },
}

pub struct ResolveContext<'a> {
    pub aliases: &'a AliasTable,
    pub local: &'a MemoryBuffer,
    pub global: &'a MemoryBuffer,
    pub seed: &'a SeedData,
}

fn from_parent(
    p: &ParamSpec,
    tool: &ToolSpec,
    parent: &ParentOutput<'_>,
    aliases: &AliasTable,
) -> Option<(Value, Origin)> {
    parent.tool.returns.iter().find_map(|r| {
        if !compatible(parent.tool.namespace(), r, tool.namespace(), p, aliases) {
            return None;
        }
        let v = parent.payload.get(&r.name)?;
        p.semantic_type.accepts(v).then(|| {
            (
                v.clone(),
                Origin {
                    trajectory: None,
                    step: parent.step,
                    tool: parent.tool.qualified_name.clone(),
                    field: r.name.clone(),
                },
            )
        })
    })
}

fn from_memory(p: &ParamSpec, canonical: &str, mem: &MemoryBuffer) -> Option<(Value, Origin)> {
    mem.lookup(canonical, p.semantic_type, p.ref_entity.as_deref())
        .map(|e| {
            (
                e.value.clone(),
                Origin {
                    trajectory: e.trajectory,
                    step: e.step,
                    tool: e.tool.clone(),
                    field: e.field.clone(),
                },
            )
        })
}

/// Fills `tool`'s params from the available sources in priority order.
pub fn resolve_arguments(
    tool: &ToolSpec,
    parent: Option<ParentOutput<'_>>,
    ctx: &ResolveContext<'_>,
    gen: &mut dyn ArgumentGenerator,
) -> Result<Resolution, GeneratorError> {
    let mut args = Args::new();
    let mut provenance = BTreeMap::new();
    for p in &tool.params {
        let canonical = normalize_field(tool.namespace(), &p.name, ctx.aliases);
        let found = parent
            .as_ref()
            .and_then(|par| from_parent(p, tool, par, ctx.aliases))
            .map(|(v, o)| (v, ArgSource::ParentOutput, Some(o)))
            .or_else(|| {
                from_memory(p, &canonical, ctx.local)
                    .map(|(v, o)| (v, ArgSource::LocalMemory, Some(o)))
            })
            .or_else(|| {
                from_memory(p, &canonical, ctx.global)
                    .map(|(v, o)| (v, ArgSource::GlobalMemory, Some(o)))
            });
        let found = match found {
            Some(f) => Some(f),
            None if !p.required => None,
            None => ctx
                .seed
                .first_of_type(&canonical, p.semantic_type)
                .or_else(|| ctx.seed.first_of_type(&p.name, p.semantic_type))
                .map(|v| (v.clone(), ArgSource::Seed, None)),
        };
        let found = match found {
            Some(f) => Some(f),
            None if p.required && tool.kind == ToolKind::Create => {
                let v = gen.generate(tool, p)?;
                if !p.semantic_type.accepts(&v) {
                    return Err(GeneratorError::new(format!(
                        "generated {v} for {}.{} is not of type {}",
                        tool.qualified_name, p.name, p.semantic_type
                    )));
                }
                Some((v, ArgSource::Generated, None))
            }
            None => None,
        };
        match found {
            Some((v, source, origin)) => {
                args.insert(p.name.clone(), v);
                provenance.insert(p.name.clone(), ArgProvenance { source, origin });
            }
            None if p.required => {
                return Ok(Resolution::Unsatisfiable {
                    param: p.name.clone(),
                })
            }
            None => {}
        }
    }
    Ok(Resolution::Resolved { args, provenance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub tool: String,
    pub args: Args,
    pub provenance: BTreeMap<String, ArgProvenance>,
    pub result_status: ToolStatus,
    pub payload: Args,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trajectory_id: String,
    pub start_node: String,
    pub rng_seed: u64,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn tools(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.tool.as_str())
    }
}

pub fn trajectory_id(index: usize) -> String {
    format!("traj_{index:04}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Maximum trajectory length.
    pub depth: usize,
    /// Maximum trajectories per entry node.
    pub per_entry: usize,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            depth: DEFAULT_DEPTH,
            per_entry: DEFAULT_PER_ENTRY,
            rng_seed: 0,
        }
    }
}

#[derive(Clone)]
struct Branch {
    episode: Episode,
    local: MemoryBuffer,
    steps: Vec<TrajectoryStep>,
    visited: BTreeSet<String>,
}

struct Run<'a> {
    graph: &'a ToolGraph,
    registry: &'a ToolRegistry,
    seed: &'a SeedData,
    cfg: SamplerConfig,
    rng: ChaCha8Rng,
    global: MemoryBuffer,
    out: Vec<Trajectory>,
    gen: &'a mut dyn ArgumentGenerator,
}

impl Run<'_> {
    /// Resolves and executes `tool` on a copy of `branch`; `None` when the
    /// inputs are unsatisfiable or the call fails.
    fn extend(&mut self, branch: &Branch, tool: &str) -> Result<Option<Branch>, SamplerError> {
        let Some(spec) = self.registry.get(tool) else {
            return Ok(None);
        };
        let parent = branch.steps.last().map(|s| ParentOutput {
            tool: self
                .registry
                .get(&s.tool)
                .expect("executed tool is registered"),
            payload: &s.payload,
            step: branch.steps.len() - 1,
        });
        let ctx = ResolveContext {
            aliases: self.registry.aliases(),
            local: &branch.local,
            global: &self.global,
            seed: self.seed,
        };
        let (args, provenance) = match resolve_arguments(spec, parent, &ctx, &mut *self.gen)? {
            Resolution::Resolved { args, provenance } => (args, provenance),
            Resolution::Unsatisfiable { .. } => return Ok(None),
        };
        let mut next = branch.clone();
        let result = next.episode.execute_tool(tool, &args)?;
        if !result.is_success() {
            return Ok(None);
        }
        let payload = result.payload.unwrap_or_default();
        let step = next.steps.len();
        next.local
            .record_outputs(spec, &payload, step, None, self.registry.aliases());
        next.visited.insert(tool.to_string());
        next.steps.push(TrajectoryStep {
            tool: tool.to_string(),
            args,
            provenance,
            result_status: ToolStatus::Success,
            payload,
        });
        Ok(Some(next))
    }

    fn dfs(
        &mut self,
        branch: Branch,
        start: &str,
        emitted: &mut usize,
    ) -> Result<(), SamplerError> {
        if *emitted >= self.cfg.per_entry {
            return Ok(());
        }
        if branch.steps.len() < self.cfg.depth {
            let last = &branch.steps.last().expect("branch has a step").tool;
            let mut succ: Vec<String> = self
                .graph
                .successors(last)
                .map_err(|e| SamplerError::Config(e.to_string()))?
                .into_iter()
                .map(|(t, _)| t.to_string())
                .filter(|t| !branch.visited.contains(t))
                .collect();
            succ.shuffle(&mut self.rng);
            let mut extended = false;
            for s in succ {
                if *emitted >= self.cfg.per_entry {
                    break;
                }
                if let Some(next) = self.extend(&branch, &s)? {
                    extended = true;
                    self.dfs(next, start, emitted)?;
                }
            }
            if extended {
                return Ok(());
            }
        }
        self.emit(branch, start);
        *emitted += 1;
        Ok(())
    }

    fn emit(&mut self, branch: Branch, start: &str) {
        let index = self.out.len();
        for (i, s) in branch.steps.iter().enumerate() {
            let spec = self
                .registry
                .get(&s.tool)
                .expect("executed tool is registered");
            self.global
                .record_outputs(spec, &s.payload, i, Some(index), self.registry.aliases());
        }
        self.out.push(Trajectory {
            trajectory_id: trajectory_id(index),
            start_node: start.to_string(),
            rng_seed: self.cfg.rng_seed,
            steps: branch.steps,
        });
    }
}

/// Samples up to `per_entry` maximal trajectories from every entry node, in
/// sorted entry order. Each trajectory runs in its own fresh episode created
/// from `(seed, rng_seed)`.
pub fn sample_trajectories(
    graph: &ToolGraph,
    env: &Arc<Environment>,
    seed: &SeedData,
    cfg: SamplerConfig,
    gen: &mut dyn ArgumentGenerator,
) -> Result<Vec<Trajectory>, SamplerError> {
    if cfg.depth < 1 {
        return Err(SamplerError::Config("depth must be at least 1".into()));
    }
    if cfg.per_entry < 1 {
        return Err(SamplerError::Config(
            "per-entry cap must be at least 1".into(),
        ));
    }
    let mut entries: Vec<&String> = graph.entry_nodes().iter().collect();
    entries.sort();
    let mut run = Run {
        graph,
        registry: env.registry(),
        seed,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
        global: MemoryBuffer::new(),
        out: Vec::new(),
        gen,
    };
    for entry in entries {
        let root = Branch {
            episode: env.create_episode(seed, cfg.rng_seed)?,
            local: MemoryBuffer::new(),
            steps: Vec::new(),
            visited: BTreeSet::new(),
        };
        let Some(first) = run.extend(&root, entry)? else {
            log::debug!("entry {entry} could not be executed");
            continue;
        };
        let mut emitted = 0;
        run.dfs(first, entry, &mut emitted)?;
    }
    Ok(run.out)
}

/// Serializes trajectories as JSONL.
pub fn trajectories_to_jsonl(trajectories: &[Trajectory]) -> String {
    let mut s = String::new();
    for t in trajectories {
        s.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
        s.push('\n');
    }
    s
}

pub fn trajectories_from_jsonl(text: &str) -> serde_json::Result<Vec<Trajectory>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{desk_registry, desk_seed, WorldModel};
    use crate::registry::RegistrySource;

    fn spec(registry: &ToolRegistry, name: &str) -> ToolSpec {
        registry.get(name).unwrap().clone()
    }

    #[test]
    fn default_generator_counts_per_param() {
        let reg = desk_registry();
        let create = spec(&reg, "crm.create_customer");
        let mut gen = DefaultArgumentGenerator::new();
        let a = generate_create_arguments(&create, &mut gen).unwrap();
        assert_eq!(
            Value::Object(a),
            json!({"customer_name": "customer_name_0001"})
        );
        let b = generate_create_arguments(&create, &mut gen).unwrap();
        assert_eq!(b["customer_name"], json!("customer_name_0002"));
        assert!(generate_create_arguments(&spec(&reg, "crm.get_customer"), &mut gen).is_err());
    }

    struct Wrong;
    impl ArgumentGenerator for Wrong {
        fn generate(&mut self, _: &ToolSpec, _: &ParamSpec) -> Result<Value, GeneratorError> {
            Ok(json!(42))
        }
    }

    #[test]
    fn wrong_typed_generator_is_rejected() {
        let reg = desk_registry();
        assert!(generate_create_arguments(&spec(&reg, "crm.create_customer"), &mut Wrong).is_err());
    }

    #[test]
    fn zero_required_create_gives_empty_args() {
        let reg = ToolRegistry::from_manifest_str(
            r#"{"tools":[{"name":"create_note","server":"x","params":[{"name":"body","type":"string"}]}]}"#,
            RegistrySource::ConfigFile,
        )
        .unwrap();
        let a = generate_create_arguments(
            reg.get("x.create_note").unwrap(),
            &mut DefaultArgumentGenerator::new(),
        )
        .unwrap();
        assert!(a.is_empty());
    }

    fn mem_with(tool: &str, field: &str, v: Value, step: usize) -> MemoryBuffer {
        let mut m = MemoryBuffer::new();
        m.push(
            field,
            MemoryEntry {
                value: v,
                tool: tool.into(),
                step,
                trajectory: None,
                field: field.into(),
                ref_entity: None,
            },
        );
        m
    }

    #[test]
    fn resolution_priority() {
        let reg = desk_registry();
        let get = spec(&reg, "crm.get_customer");
        let create = spec(&reg, "crm.create_customer");
        let payload: Args = json!({"customer_id": "cust_0007"})
            .as_object()
            .unwrap()
            .clone();
        let local = mem_with("crm.create_customer", "customer_id", json!("cust_0003"), 0);
        let global = mem_with("crm.create_customer", "customer_id", json!("cust_0004"), 1);
        let seed = desk_seed();
        let ctx = ResolveContext {
            aliases: reg.aliases(),
            local: &local,
            global: &global,
            seed: &seed,
        };
        let mut gen = DefaultArgumentGenerator::new();
        let parent = ParentOutput {
            tool: &create,
            payload: &payload,
            step: 0,
        };
        let Resolution::Resolved { args, provenance } =
            resolve_arguments(&get, Some(parent), &ctx, &mut gen).unwrap()
        else {
            panic!()
        };
        assert_eq!(args["customer_id"], json!("cust_0007"));
        assert_eq!(provenance["customer_id"].source, ArgSource::ParentOutput);

        let Resolution::Resolved { args, provenance } =
            resolve_arguments(&get, None, &ctx, &mut gen).unwrap()
        else {
            panic!()
        };
        assert_eq!(args["customer_id"], json!("cust_0003"));
        assert_eq!(provenance["customer_id"].source, ArgSource::LocalMemory);

        let empty = MemoryBuffer::new();
        let ctx2 = ResolveContext {
            local: &empty,
            ..ctx
        };
        let Resolution::Resolved { provenance, .. } =
            resolve_arguments(&get, None, &ctx2, &mut gen).unwrap()
        else {
            panic!()
        };
        assert_eq!(provenance["customer_id"].source, ArgSource::GlobalMemory);

        let none = SeedData::default();
        let ctx3 = ResolveContext {
            aliases: reg.aliases(),
            local: &empty,
            global: &empty,
            seed: &none,
        };
        assert_eq!(
            resolve_arguments(&get, None, &ctx3, &mut gen).unwrap(),
            Resolution::Unsatisfiable {
                param: "customer_id".into()
            }
        );
    }

    fn chain_registry() -> ToolRegistry {
        ToolRegistry::from_manifest_str(
            &json!({"tools": [
                {"name": "create_customer", "server": "crm",
                 "params": [{"name": "customer_name", "type": "string", "required": true}],
                 "returns": [{"name": "customer_id", "type": "string", "ref_entity": "draft"}]},
                {"name": "get_customer", "server": "crm",
                 "params": [{"name": "customer_id", "type": "string", "required": true}],
                 "returns": [{"name": "customer_id", "type": "string", "ref_entity": "customer"}, {"name": "customer_name", "type": "string"}, {"name": "tier", "type": "string"}]},
                {"name": "update_customer", "server": "crm",
                 "params": [{"name": "customer_id", "type": "string", "required": true, "ref_entity": "customer"},
                            {"name": "tier", "type": "string"}],
                 "returns": [{"name": "tier", "type": "string"}]}
            ]})
            .to_string(),
            RegistrySource::ConfigFile,
        )
        .unwrap()
    }

    #[test]
    fn linear_chain_gives_one_full_trajectory() {
        let reg = chain_registry();
        let env = Arc::new(Environment::new(reg.clone(), WorldModel::desk()).unwrap());
        let g = ToolGraph::build(&reg, &SeedData::default());
        let cfg = SamplerConfig {
            depth: 3,
            per_entry: 1,
            rng_seed: 9,
        };
        let out = sample_trajectories(
            &g,
            &env,
            &SeedData::default(),
            cfg,
            &mut DefaultArgumentGenerator::new(),
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(
            out[0].tools().collect::<Vec<_>>(),
            [
                "crm.create_customer",
                "crm.get_customer",
                "crm.update_customer"
            ]
        );
    }

    #[test]
    fn depth_one_starts_at_entries() {
        let reg = desk_registry();
        let env = Arc::new(Environment::desk(reg.clone()).unwrap());
        let seed = desk_seed();
        let g = ToolGraph::build(&reg, &seed);
        let cfg = SamplerConfig {
            depth: 1,
            per_entry: 3,
            rng_seed: 1,
        };
        let out = sample_trajectories(&g, &env, &seed, cfg, &mut DefaultArgumentGenerator::new())
            .unwrap();
        assert!(!out.is_empty());
        for t in &out {
            assert_eq!(t.len(), 1);
            assert!(g.entry_nodes().contains(&t.start_node));
        }
    }

    #[test]
    fn desk_sampling_is_deterministic_and_bounded() {
        let reg = desk_registry();
        let env = Arc::new(Environment::desk(reg.clone()).unwrap());
        let seed = desk_seed();
        let g = ToolGraph::build(&reg, &seed);
        let cfg = SamplerConfig {
            depth: 6,
            per_entry: 5,
            rng_seed: 42,
        };
        let a = sample_trajectories(&g, &env, &seed, cfg, &mut DefaultArgumentGenerator::new())
            .unwrap();
        let b = sample_trajectories(&g, &env, &seed, cfg, &mut DefaultArgumentGenerator::new())
            .unwrap();
        assert_eq!(trajectories_to_jsonl(&a), trajectories_to_jsonl(&b));
        let mut per_entry: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &a {
            *per_entry.entry(&t.start_node).or_default() += 1;
            assert!(t.len() <= 6);
            let distinct: BTreeSet<&str> = t.tools().collect();
            assert_eq!(distinct.len(), t.len());
        }
        assert!(per_entry.values().all(|&n| n <= 5));
        assert_eq!(
            trajectories_from_jsonl(&trajectories_to_jsonl(&a)).unwrap(),
            a
        );
    }

    #[test]
    fn bad_config() {
        let reg = desk_registry();
        let env = Arc::new(Environment::desk(reg.clone()).unwrap());
        let g = ToolGraph::build(&reg, &SeedData::default());
        let cfg = SamplerConfig {
            depth: 0,
            ..SamplerConfig::default()
        };
        assert!(matches!(
            sample_trajectories(
                &g,
                &env,
                &SeedData::default(),
                cfg,
                &mut DefaultArgumentGenerator::new()
            ),
            Err(SamplerError::Config(_))
        ));
    }
}
