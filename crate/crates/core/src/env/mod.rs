//! Stateful multi-app environment.
//!
//! An [`Environment`] pairs a tool registry with a [`WorldModel`] (entity
//! stores, per-tool behaviour, cross-app propagation rules). Each
//! [`Episode`] owns an isolated copy of the world state. Execution is
//! deterministic in `(seed, rng_seed, call sequence)`.

pub mod observation;
pub mod world;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::hash::fnv1a64;
use crate::registry::{
    validate_arguments, Args, RegistrySource, SemanticType, ToolRegistry, ToolSpec,
};
use crate::seed::SeedData;

pub use observation::{
    normalize_observation, Observation, DEFAULT_OBSERVATION_BUDGET, MIN_OBSERVATION_BUDGET,
};
pub use world::{
    Effect, EntityEvent, EntitySchema, FieldDef, Operation, PropagationRule, Reference,
    ToolBinding, WorldModel,
};

/// Format version embedded in every [`StateDigest`].
pub const STATE_FORMAT_VERSION: u32 = 1;

const DESK_MANIFEST: &str = include_str!("../../assets/desk_manifest.json");
const DESK_SEED: &str = include_str!("../../assets/desk_seed.json");

/// Manifest document for the built-in desk apps.
pub fn desk_manifest_json() -> &'static str {
    DESK_MANIFEST
}

pub fn desk_registry() -> ToolRegistry {
    ToolRegistry::from_manifest_str(DESK_MANIFEST, RegistrySource::ConfigFile)
        .expect("bundled manifest is valid")
}

/// Seed data shipped with the desk apps: one customer, one employee, one
/// channel.
pub fn desk_seed() -> SeedData {
    serde_json::from_str(DESK_SEED).expect("bundled seed is valid")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("unknown app `{0}`")]
    UnknownApp(String),
    #[error("unknown entity `{app}.{entity}`")]
    UnknownEntity { app: String, entity: String },
    #[error("no behaviour bound to tool `{0}`")]
    NoHandler(String),
    #[error("seed error: {0}")]
    Seed(String),
    #[error("state digest mismatch: {0}")]
    VersionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolStatus {
    Success,
    Error,
}

/// Outcome of one tool call.
///
/// `payload` holds exactly the tool's declared return fields; `details`
/// holds any other record fields the app exposes, and `logs` free-text
/// diagnostics. The observation normalizer ranks them in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub status: ToolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Args>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    #[serde(default, skip_serializing_if = "Args::is_empty")]
    pub details: Args,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub logs: Vec<String>,
    pub raw_size: usize,
}

impl ToolResult {
    pub fn success(payload: Args, details: Args, logs: Vec<String>) -> Self {
        Self {
            status: ToolStatus::Success,
            payload: Some(payload),
            error_message: None,
            details,
            logs,
            raw_size: 0,
        }
        .with_raw_size()
    }

    pub fn error(message: impl Into<String>, logs: Vec<String>) -> Self {
        Self {
            status: ToolStatus::Error,
            payload: None,
            error_message: Some(message.into()),
            details: Args::new(),
            logs,
            raw_size: 0,
        }
        .with_raw_size()
    }

    fn with_raw_size(mut self) -> Self {
        let text = serde_json::to_string(&self).expect("tool result serializes");
        self.raw_size = text.chars().count();
        self
    }

    pub fn is_success(&self) -> bool {
        self.status == ToolStatus::Success
    }

    pub fn payload_value(&self, field: &str) -> Option<&Value> {
        self.payload.as_ref().and_then(|p| p.get(field))
    }
}

/// Keyed entity stores of one app: entity type -> id -> record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppState {
    pub app_name: String,
    pub entities: BTreeMap<String, BTreeMap<String, Args>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub apps: BTreeMap<String, AppState>,
    /// Last id counter handed out per `app.entity`.
    pub counters: BTreeMap<String, u64>,
}

impl WorldState {
    fn store(&self, app: &str, entity: &str) -> Option<&BTreeMap<String, Args>> {
        self.apps.get(app).and_then(|a| a.entities.get(entity))
    }

    fn store_mut(&mut self, app: &str, entity: &str) -> &mut BTreeMap<String, Args> {
        let a = self
            .apps
            .entry(app.to_string())
            .or_insert_with(|| AppState {
                app_name: app.to_string(),
                entities: BTreeMap::new(),
            });
        a.entities.entry(entity.to_string()).or_default()
    }

    pub fn record(&self, app: &str, entity: &str, id: &str) -> Option<&Args> {
        self.store(app, entity).and_then(|s| s.get(id))
    }

    pub fn count(&self, app: &str, entity: &str) -> usize {
        self.store(app, entity).map_or(0, BTreeMap::len)
    }

    fn next_id(&mut self, schema: &EntitySchema) -> String {
        let key = format!("{}.{}", schema.app, schema.entity);
        let mut counter = self.counters.get(&key).copied().unwrap_or(0);
        loop {
            counter += 1;
            let id = schema.format_id(counter);
            if self.record(&schema.app, &schema.entity, &id).is_none() {
                self.counters.insert(key, counter);
                return id;
            }
        }
    }
}

/// Versioned, serializable copy of an episode's mutable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDigest {
    pub format_version: u32,
    pub env_fingerprint: String,
    pub rng_seed: u64,
    pub step_count: u64,
    pub state: WorldState,
}

pub struct Environment {
    registry: ToolRegistry,
    world: WorldModel,
    fingerprint: String,
    next_episode: AtomicU64,
}

impl std::fmt::Debug for Environment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Environment")
            .field("tools", &self.registry.len())
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

impl Environment {
    /// Binds every registry tool to its behaviour in `world`. Rules already
    /// present in `world` are validated like [`Environment::register_propagation`].
    pub fn new(registry: ToolRegistry, mut world: WorldModel) -> Result<Self, EnvError> {
        let rules = std::mem::take(&mut world.rules);
        for tool in registry.tools() {
            let binding = world
                .binding(&tool.qualified_name)
                .ok_or_else(|| EnvError::NoHandler(tool.qualified_name.clone()))?;
            if world.entity(&binding.app, &binding.entity).is_none() {
                return Err(EnvError::UnknownEntity {
                    app: binding.app.clone(),
                    entity: binding.entity.clone(),
                });
            }
        }
        let mut env = Self {
            registry,
            world,
            fingerprint: String::new(),
            next_episode: AtomicU64::new(0),
        };
        for rule in rules {
            env.register_propagation(rule)?;
        }
        env.refresh_fingerprint();
        Ok(env)
    }

    /// Desk apps with the standard propagation rules.
    pub fn desk(registry: ToolRegistry) -> Result<Self, EnvError> {
        Self::new(registry, WorldModel::desk())
    }

    fn refresh_fingerprint(&mut self) {
        let doc = json!({
            "manifest": self.registry.to_manifest(),
            "world": self.world,
        });
        let bytes = serde_json::to_vec(&doc).expect("environment serializes");
        self.fingerprint = format!("{STATE_FORMAT_VERSION}-{:016x}", fnv1a64(&bytes));
    }

    /// Adds a cross-app rule applied atomically with every matching mutation.
    pub fn register_propagation(&mut self, rule: PropagationRule) -> Result<(), EnvError> {
        let apps = self.world.apps();
        for app in [&rule.source_app, &rule.target_app] {
            if !apps.contains(&app.as_str()) {
                return Err(EnvError::UnknownApp(app.clone()));
            }
        }
        for (app, entity) in [
            (&rule.source_app, rule.entity.as_str()),
            (&rule.target_app, rule.effect.target_entity()),
        ] {
            if self.world.entity(app, entity).is_none() {
                return Err(EnvError::UnknownEntity {
                    app: app.clone(),
                    entity: entity.to_string(),
                });
            }
        }
        self.world.rules.push(rule);
        self.refresh_fingerprint();
        Ok(())
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// The READ-kind tool that fetches one `app.entity` record by id, if the
    /// registry has one.
    pub fn read_tool_for(&self, app: &str, entity: &str) -> Option<&ToolSpec> {
        self.world
            .bindings
            .iter()
            .filter(|b| b.app == app && b.entity == entity && b.op == Operation::Get)
            .find_map(|b| self.registry.get(&b.tool))
    }

    /// Entity type created by a CREATE-bound tool.
    pub fn created_entity(&self, tool: &str) -> Option<&EntitySchema> {
        let b = self.world.binding(tool)?;
        (b.op == Operation::Create)
            .then(|| self.world.entity(&b.app, &b.entity))
            .flatten()
    }

    fn empty_state(&self) -> WorldState {
        let mut state = WorldState::default();
        for e in &self.world.entities {
            state.store_mut(&e.app, &e.entity);
        }
        state
    }

    pub fn create_episode(
        self: &Arc<Self>,
        seed: &SeedData,
        rng_seed: u64,
    ) -> Result<Episode, EnvError> {
        let mut state = self.empty_state();
        self.check_seed_types(seed)?;
        for schema in self.world.entities.iter().filter(|e| !e.mirror) {
            for (i, id) in seed.values(&schema.id_field).iter().enumerate() {
                let id = id.as_str().ok_or_else(|| {
                    EnvError::Seed(format!("`{}` values must be strings", schema.id_field))
                })?;
                let mut record = Args::new();
                record.insert(schema.id_field.clone(), Value::String(id.to_string()));
                for f in &schema.fields {
                    let v = seed
                        .values(&f.name)
                        .get(i)
                        .cloned()
                        .or_else(|| f.default.clone())
                        .unwrap_or_else(|| placeholder(f.semantic_type, &f.name, id));
                    record.insert(f.name.clone(), v);
                }
                state
                    .store_mut(&schema.app, &schema.entity)
                    .insert(id.to_string(), record.clone());
                self.propagate(&mut state, schema, EntityEvent::Created, id, &record);
            }
        }
        let n = self.next_episode.fetch_add(1, Ordering::Relaxed);
        Ok(Episode {
            env: Arc::clone(self),
            episode_id: format!("ep_{n:06}"),
            seed: seed.clone(),
            rng_seed,
            step_count: 0,
            state,
        })
    }

    fn check_seed_types(&self, seed: &SeedData) -> Result<(), EnvError> {
        for (field, values) in &seed.entries {
            let mut expected: Vec<SemanticType> = self
                .world
                .entities
                .iter()
                .filter_map(|e| e.type_of(field))
                .collect();
            for t in self.registry.tools() {
                expected.extend(
                    t.params
                        .iter()
                        .filter(|p| &p.name == field)
                        .map(|p| p.semantic_type),
                );
                expected.extend(
                    t.returns
                        .iter()
                        .filter(|r| &r.name == field)
                        .map(|r| r.semantic_type),
                );
            }
            for v in values {
                if let Some(ty) = expected.iter().find(|ty| !ty.accepts(v)) {
                    return Err(EnvError::Seed(format!(
                        "value {v} for `{field}` is not of type {ty}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn propagate(
        &self,
        state: &mut WorldState,
        source: &EntitySchema,
        event: EntityEvent,
        id: &str,
        record: &Args,
    ) {
        for rule in &self.world.rules {
            if rule.source_app != source.app || rule.entity != source.entity || rule.event != event
            {
                continue;
            }
            let Some(target) = self
                .world
                .entity(&rule.target_app, rule.effect.target_entity())
            else {
                continue;
            };
            match &rule.effect {
                Effect::Mirror { fields, .. } => {
                    let store = state.store_mut(&target.app, &target.entity);
                    let entry = store.entry(id.to_string()).or_insert_with(|| {
                        let mut r = Args::new();
                        r.insert(target.id_field.clone(), Value::String(id.to_string()));
                        for f in &target.fields {
                            let v = f
                                .default
                                .clone()
                                .unwrap_or_else(|| placeholder(f.semantic_type, &f.name, id));
                            r.insert(f.name.clone(), v);
                        }
                        r
                    });
                    for (from, to) in fields {
                        if let Some(v) = record.get(from) {
                            entry.insert(to.clone(), v.clone());
                        }
                    }
                }
                Effect::Remove { .. } => {
                    state.store_mut(&target.app, &target.entity).remove(id);
                }
            }
        }
    }
}

fn placeholder(ty: SemanticType, field: &str, id: &str) -> Value {
    match ty {
        SemanticType::String => Value::String(format!("{field} of {id}")),
        SemanticType::Integer => json!(0),
        SemanticType::Number => json!(0.0),
        SemanticType::Boolean => json!(false),
        SemanticType::Array => json!([]),
        SemanticType::Object => json!({}),
    }
}

/// One isolated run of the environment. Mutation requires `&mut self`, so a
/// single episode always has a single writer.
#[derive(Debug, Clone)]
pub struct Episode {
    env: Arc<Environment>,
    episode_id: String,
    seed: SeedData,
    rng_seed: u64,
    step_count: u64,
    state: WorldState,
}

impl Episode {
    pub fn id(&self) -> &str {
        &self.episode_id
    }

    pub fn env(&self) -> &Arc<Environment> {
        &self.env
    }

    pub fn seed(&self) -> &SeedData {
        &self.seed
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn record(&self, app: &str, entity: &str, id: &str) -> Option<&Args> {
        self.state.record(app, entity, id)
    }

    /// Runs one tool call. Unknown tools are a fault and are not counted;
    /// everything else, including invalid arguments, yields a [`ToolResult`]
    /// and advances `step_count`.
    pub fn execute_tool(&mut self, tool: &str, args: &Args) -> Result<ToolResult, EnvError> {
        let env = Arc::clone(&self.env);
        let spec = env
            .registry
            .get(tool)
            .ok_or_else(|| EnvError::UnknownTool(tool.to_string()))?;
        let binding = env
            .world
            .binding(tool)
            .ok_or_else(|| EnvError::NoHandler(tool.to_string()))?;
        self.step_count += 1;

        let validation = validate_arguments(spec, args);
        let outcome = if validation.is_ok() {
            let mut next = self.state.clone();
            match env.apply(&mut next, spec, binding, args) {
                Ok(ok) => {
                    self.state = next;
                    Ok(ok)
                }
                Err(e) => Err(e),
            }
        } else {
            Err(format!(
                "invalid arguments for {tool}: {}",
                validation.describe()
            ))
        };

        let logs = self.logs(tool, outcome.is_ok());
        Ok(match outcome {
            Ok((payload, details)) => ToolResult::success(payload, details, logs),
            Err(message) => ToolResult::error(message, logs),
        })
    }

    /// Like [`Episode::execute_tool`], but an unknown tool becomes an error
    /// result (and is counted) instead of a fault. Agents go through this.
    pub fn call(&mut self, tool: &str, args: &Args) -> ToolResult {
        match self.execute_tool(tool, args) {
            Ok(r) => r,
            Err(e) => {
                self.step_count += 1;
                let logs = self.logs(tool, false);
                ToolResult::error(e.to_string(), logs)
            }
        }
    }

    fn logs(&self, tool: &str, ok: bool) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.rng_seed ^ self.step_count.wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let latency: u32 = rng.random_range(3..120);
        let trace: u64 = rng.random();
        vec![
            format!(
                "{tool} {} in {latency}ms (step {})",
                if ok { "completed" } else { "failed" },
                self.step_count
            ),
            format!("trace_id={trace:016x}"),
        ]
    }

    pub fn snapshot(&self) -> StateDigest {
        StateDigest {
            format_version: STATE_FORMAT_VERSION,
            env_fingerprint: self.env.fingerprint.clone(),
            rng_seed: self.rng_seed,
            step_count: self.step_count,
            state: self.state.clone(),
        }
    }

    pub fn restore(&mut self, digest: &StateDigest) -> Result<(), EnvError> {
        if digest.format_version != STATE_FORMAT_VERSION {
            return Err(EnvError::VersionMismatch(format!(
                "digest format {} but this environment reads {STATE_FORMAT_VERSION}",
                digest.format_version
            )));
        }
        if digest.env_fingerprint != self.env.fingerprint {
            return Err(EnvError::VersionMismatch(format!(
                "digest from environment {} but this is {}",
                digest.env_fingerprint, self.env.fingerprint
            )));
        }
        self.rng_seed = digest.rng_seed;
        self.step_count = digest.step_count;
        self.state = digest.state.clone();
        Ok(())
    }
}

type Applied = (Args, Args);

impl Environment {
    fn apply(
        &self,
        state: &mut WorldState,
        spec: &ToolSpec,
        binding: &ToolBinding,
        args: &Args,
    ) -> Result<Applied, String> {
        let schema = self
            .world
            .entity(&binding.app, &binding.entity)
            .ok_or_else(|| format!("no store for {}.{}", binding.app, binding.entity))?;

        for r in &binding.references {
            if let Some(v) = args.get(&r.param) {
                let id = v.as_str().unwrap_or_default();
                if state.record(&r.app, &r.entity, id).is_none() {
                    return Err(format!("{} {id} not found", r.entity.replace('_', " ")));
                }
            }
        }

        let source: Args = match binding.op {
            Operation::Create => {
                let id = state.next_id(schema);
                let mut record = Args::new();
                record.insert(schema.id_field.clone(), Value::String(id.clone()));
                for f in &schema.fields {
                    let from_args = args
                        .iter()
                        .find(|(k, _)| binding.field_for_param(k) == f.name)
                        .map(|(_, v)| v.clone());
                    let v = from_args
                        .or_else(|| spec.param(&f.name).and_then(|p| p.default.clone()))
                        .or_else(|| f.default.clone())
                        .ok_or_else(|| format!("no value for {}", f.name))?;
                    record.insert(f.name.clone(), v);
                }
                state
                    .store_mut(&schema.app, &schema.entity)
                    .insert(id.clone(), record.clone());
                self.propagate(state, schema, EntityEvent::Created, &id, &record);
                record
            }
            Operation::Get => {
                let id = id_arg(schema, args)?;
                state
                    .record(&schema.app, &schema.entity, id)
                    .cloned()
                    .ok_or_else(|| not_found(schema, id))?
            }
            Operation::List => {
                let items: Vec<Value> = state
                    .store(&schema.app, &schema.entity)
                    .into_iter()
                    .flat_map(|s| s.values())
                    .filter(|rec| {
                        args.iter()
                            .all(|(k, v)| rec.get(binding.field_for_param(k)) == Some(v))
                    })
                    .map(|rec| Value::Object(rec.clone()))
                    .collect();
                let mut out = Args::new();
                out.insert("count".into(), json!(items.len()));
                out.insert(schema.plural.clone(), Value::Array(items));
                out
            }
            Operation::Update => {
                let id = id_arg(schema, args)?.to_string();
                let mut record = state
                    .record(&schema.app, &schema.entity, &id)
                    .cloned()
                    .ok_or_else(|| not_found(schema, &id))?;
                for (k, v) in args {
                    let field = binding.field_for_param(k);
                    if field != schema.id_field && schema.field(field).is_some() {
                        record.insert(field.to_string(), v.clone());
                    }
                }
                state
                    .store_mut(&schema.app, &schema.entity)
                    .insert(id.clone(), record.clone());
                self.propagate(state, schema, EntityEvent::Updated, &id, &record);
                record
            }
            Operation::Delete => {
                let id = id_arg(schema, args)?.to_string();
                let record = state
                    .store_mut(&schema.app, &schema.entity)
                    .remove(&id)
                    .ok_or_else(|| not_found(schema, &id))?;
                self.propagate(state, schema, EntityEvent::Deleted, &id, &record);
                let mut out = Args::new();
                out.insert(schema.id_field.clone(), Value::String(id));
                out.insert("deleted".into(), json!(true));
                out
            }
        };

        let mut payload = Args::new();
        for r in &spec.returns {
            let v = source
                .get(&r.name)
                .ok_or_else(|| format!("{} produced no `{}`", spec.qualified_name, r.name))?;
            payload.insert(r.name.clone(), v.clone());
        }
        let details = if matches!(binding.op, Operation::List | Operation::Delete) {
            Args::new()
        } else {
            source
                .into_iter()
                .filter(|(k, _)| !payload.contains_key(k))
                .collect()
        };
        Ok((payload, details))
    }
}

fn id_arg<'a>(schema: &EntitySchema, args: &'a Args) -> Result<&'a str, String> {
    args.get(&schema.id_field)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing {}", schema.id_field))
}

fn not_found(schema: &EntitySchema, id: &str) -> String {
    format!("{} {id} not found", schema.entity.replace('_', " "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::validate_payload;

    fn args(v: Value) -> Args {
        v.as_object().unwrap().clone()
    }

    fn desk() -> Arc<Environment> {
        Arc::new(Environment::desk(desk_registry()).unwrap())
    }

    #[test]
    fn create_assigns_counter_ids() {
        let env = desk();
        let mut ep = env.create_episode(&SeedData::default(), 1).unwrap();
        let r = ep
            .execute_tool(
                "crm.create_customer",
                &args(json!({"customer_name": "TechCorp"})),
            )
            .unwrap();
        assert!(r.is_success(), "{r:?}");
        assert_eq!(r.payload, Some(args(json!({"customer_id": "cust_0001"}))));
        let r2 = ep
            .execute_tool(
                "crm.create_customer",
                &args(json!({"customer_name": "Initech"})),
            )
            .unwrap();
        assert_eq!(r2.payload_value("customer_id"), Some(&json!("cust_0002")));
        assert_eq!(ep.step_count(), 2);
    }

    #[test]
    fn missing_entity_is_error_and_state_unchanged() {
        let env = desk();
        let mut ep = env.create_episode(&SeedData::default(), 1).unwrap();
        let before = ep.state().clone();
        let r = ep
            .execute_tool(
                "crm.get_customer",
                &args(json!({"customer_id": "cust_9999"})),
            )
            .unwrap();
        assert_eq!(r.status, ToolStatus::Error);
        assert!(r.error_message.as_deref().unwrap().contains("not found"));
        assert_eq!(ep.state(), &before);
        assert_eq!(ep.step_count(), 1);
    }

    #[test]
    fn invalid_args_counted_but_no_mutation() {
        let env = desk();
        let mut ep = env.create_episode(&SeedData::default(), 1).unwrap();
        let r = ep
            .execute_tool("crm.create_customer", &args(json!({"customer_name": 5})))
            .unwrap();
        assert!(!r.is_success());
        assert_eq!(ep.state().count("crm", "customer"), 0);
        assert_eq!(ep.step_count(), 1);
        assert_eq!(
            ep.execute_tool("crm.nope", &Args::new()),
            Err(EnvError::UnknownTool("crm.nope".into()))
        );
        assert_eq!(ep.step_count(), 1);
    }

    #[test]
    fn seed_installs_entities() {
        let env = desk();
        let seed =
            SeedData::from_json(&json!({"customer_id": ["cust_0001", "cust_0002"]})).unwrap();
        let ep = env.create_episode(&seed, 0).unwrap();
        assert_eq!(ep.state().count("crm", "customer"), 2);
        let empty = env.create_episode(&SeedData::default(), 0).unwrap();
        assert!(empty
            .state()
            .apps
            .values()
            .all(|a| a.entities.values().all(BTreeMap::is_empty)));
    }

    #[test]
    fn seed_type_error() {
        let env = desk();
        let seed =
            SeedData::from_json(&json!({"customer_id": ["cust_0001"], "customer_name": [42]}))
                .unwrap();
        assert!(matches!(
            env.create_episode(&seed, 0),
            Err(EnvError::Seed(_))
        ));
    }

    #[test]
    fn seeded_ids_are_skipped_by_counter() {
        let env = desk();
        let mut ep = env.create_episode(&desk_seed(), 0).unwrap();
        let r = ep
            .execute_tool("crm.create_customer", &args(json!({"customer_name": "X"})))
            .unwrap();
        assert_eq!(r.payload_value("customer_id"), Some(&json!("cust_0002")));
    }

    #[test]
    fn hr_employee_propagates_to_crm_reps() {
        let env = desk();
        let mut ep = env.create_episode(&SeedData::default(), 3).unwrap();
        let created = ep
            .execute_tool(
                "hr.create_employee",
                &args(json!({"employee_name": "Ana", "department": "sales"})),
            )
            .unwrap();
        let emp = created.payload_value("employee_id").unwrap().clone();
        let reps = ep
            .execute_tool("crm.list_assignable_reps", &Args::new())
            .unwrap();
        let list = reps.payload_value("reps").unwrap().as_array().unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(list[0]["employee_id"], emp);
        assert_eq!(list[0]["department"], json!("sales"));

        let cust = ep
            .execute_tool(
                "crm.create_customer",
                &args(json!({"customer_name": "TechCorp"})),
            )
            .unwrap();
        let assign = ep
            .execute_tool(
                "crm.assign_rep",
                &args(json!({"customer_id": cust.payload_value("customer_id").unwrap(), "employee_id": emp})),
            )
            .unwrap();
        assert!(assign.is_success(), "{assign:?}");
        assert_eq!(assign.payload_value("assigned_rep_id"), Some(&emp));

        ep.execute_tool("hr.remove_employee", &args(json!({"employee_id": emp})))
            .unwrap();
        assert_eq!(ep.state().count("crm", "rep"), 0);
    }

    #[test]
    fn without_rules_no_cross_app_effect() {
        let env = Arc::new(
            Environment::new(desk_registry(), WorldModel::desk().without_rules()).unwrap(),
        );
        let mut ep = env.create_episode(&SeedData::default(), 3).unwrap();
        ep.execute_tool("hr.create_employee", &args(json!({"employee_name": "Ana"})))
            .unwrap();
        assert_eq!(ep.state().count("crm", "rep"), 0);
        assert_eq!(ep.state().count("hr", "employee"), 1);
    }

    #[test]
    fn register_propagation_unknown_app() {
        let mut env = Environment::desk(desk_registry()).unwrap();
        let rule = PropagationRule {
            source_app: "erp".into(),
            entity: "employee".into(),
            event: EntityEvent::Created,
            target_app: "crm".into(),
            effect: Effect::Remove {
                target_entity: "rep".into(),
            },
        };
        assert_eq!(
            env.register_propagation(rule),
            Err(EnvError::UnknownApp("erp".into()))
        );
    }

    #[test]
    fn snapshot_restore_replays_identically() {
        let env = desk();
        let mut ep = env.create_episode(&desk_seed(), 11).unwrap();
        let digest = ep.snapshot();
        let call = args(json!({"customer_name": "Globex"}));
        let first = ep.execute_tool("crm.create_customer", &call).unwrap();
        ep.restore(&digest).unwrap();
        let second = ep.execute_tool("crm.create_customer", &call).unwrap();
        assert_eq!(first, second);

        let other = env.create_episode(&desk_seed(), 11).unwrap();
        assert_eq!(
            other.snapshot(),
            env.create_episode(&desk_seed(), 11).unwrap().snapshot()
        );

        let mut foreign = digest.clone();
        foreign.format_version += 1;
        assert!(matches!(
            ep.restore(&foreign),
            Err(EnvError::VersionMismatch(_))
        ));
        let mut foreign = digest;
        foreign.env_fingerprint = "0-deadbeef".into();
        assert!(matches!(
            ep.restore(&foreign),
            Err(EnvError::VersionMismatch(_))
        ));
    }

    #[test]
    fn every_desk_tool_has_conforming_payload() {
        let env = desk();
        let mut ep = env.create_episode(&desk_seed(), 5).unwrap();
        let calls = [
            ("crm.create_customer", json!({"customer_name": "A"})),
            ("crm.get_customer", json!({"customer_id": "cust_0002"})),
            (
                "crm.update_customer",
                json!({"customer_id": "cust_0002", "tier": "gold"}),
            ),
            ("crm.list_customers", json!({"tier": "gold"})),
            (
                "crm.create_order",
                json!({"customer_id": "cust_0002", "amount": 40}),
            ),
            ("crm.get_order", json!({"order_id": "ord_0001"})),
            (
                "crm.update_order",
                json!({"order_id": "ord_0001", "status": "shipped"}),
            ),
            ("crm.list_assignable_reps", json!({})),
            (
                "crm.assign_rep",
                json!({"customer_id": "cust_0002", "employee_id": "emp_0001"}),
            ),
            ("crm.delete_order", json!({"order_id": "ord_0001"})),
            ("hr.create_employee", json!({"employee_name": "B"})),
            ("hr.get_employee", json!({"employee_id": "emp_0002"})),
            ("hr.search_employees", json!({"department": "general"})),
            (
                "hr.update_employee",
                json!({"employee_id": "emp_0002", "department": "ops"}),
            ),
            (
                "hr.create_leave_request",
                json!({"employee_id": "emp_0002", "days": 3}),
            ),
            ("hr.get_leave_request", json!({"leave_id": "leave_0001"})),
            (
                "hr.update_leave_request",
                json!({"leave_id": "leave_0001", "status": "approved"}),
            ),
            ("hr.remove_employee", json!({"employee_id": "emp_0002"})),
            ("chat.create_channel", json!({"channel_name": "ops"})),
            ("chat.list_channels", json!({})),
            (
                "chat.post_message",
                json!({"channel_id": "chan_0002", "text": "hi"}),
            ),
            ("chat.get_message", json!({"message_id": "msg_0001"})),
            ("chat.delete_message", json!({"message_id": "msg_0001"})),
        ];
        assert_eq!(calls.len(), env.registry().len());
        for (tool, a) in calls {
            let r = ep.execute_tool(tool, &args(a)).unwrap();
            assert!(r.is_success(), "{tool}: {r:?}");
            let spec = env.registry().get(tool).unwrap();
            let v = validate_payload(spec, r.payload.as_ref().unwrap());
            assert!(v.is_ok(), "{tool}: {}", v.describe());
        }
    }
}
