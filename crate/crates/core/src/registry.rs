//! Tool definitions and the unified tool registry.
//!
//! Tools arrive either from a manifest document on disk or from a server's
//! `tools/list` response. Both paths go through [`ToolRegistry::from_manifest`],
//! which normalizes field names (alias table first, then lower snake case),
//! infers tool kinds and enforces the registry invariants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use heck::ToSnakeCase;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Argument or payload map. Keys iterate in sorted order.
pub type Args = serde_json::Map<String, Value>;

/// Separator between a tool's namespace (server name) and its local name.
pub const NAMESPACE_SEPARATOR: char = '.';

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("failed to read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed tool manifest: {0}")]
    Parse(String),
    #[error("duplicate tool `{0}`")]
    DuplicateTool(String),
    #[error("schema error in {context}: {message}")]
    Schema { context: String, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl RegistryError {
    fn schema(context: impl Into<String>, message: impl Into<String>) -> Self {
        RegistryError::Schema {
            context: context.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl SemanticType {
    pub const ALL: [SemanticType; 6] = [
        SemanticType::String,
        SemanticType::Integer,
        SemanticType::Number,
        SemanticType::Boolean,
        SemanticType::Array,
        SemanticType::Object,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SemanticType::String => "string",
            SemanticType::Integer => "integer",
            SemanticType::Number => "number",
            SemanticType::Boolean => "boolean",
            SemanticType::Array => "array",
            SemanticType::Object => "object",
        }
    }

    /// Whether `value` is an instance of this type. `null` matches nothing.
    pub fn accepts(self, value: &Value) -> bool {
        match self {
            SemanticType::String => value.is_string(),
            SemanticType::Integer => value.is_i64() || value.is_u64(),
            SemanticType::Number => value.is_number(),
            SemanticType::Boolean => value.is_boolean(),
            SemanticType::Array => value.is_array(),
            SemanticType::Object => value.is_object(),
        }
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ToolKind {
    Create,
    Read,
    ListSearch,
    Update,
    Delete,
    Other,
}

impl ToolKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "CREATE" => Some(ToolKind::Create),
            "READ" => Some(ToolKind::Read),
            "LIST_SEARCH" => Some(ToolKind::ListSearch),
            "UPDATE" => Some(ToolKind::Update),
            "DELETE" => Some(ToolKind::Delete),
            "OTHER" => Some(ToolKind::Other),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ToolKind::Create => "CREATE",
            ToolKind::Read => "READ",
            ToolKind::ListSearch => "LIST_SEARCH",
            ToolKind::Update => "UPDATE",
            ToolKind::Delete => "DELETE",
            ToolKind::Other => "OTHER",
        }
    }

    /// Prefix heuristic used when a manifest entry carries no `kind`.
    pub fn infer_from_name(local_name: &str) -> Self {
        let verb = local_name.split('_').next().unwrap_or("");
        match verb {
            "create" | "add" => ToolKind::Create,
            "get" | "read" => ToolKind::Read,
            "list" | "search" => ToolKind::ListSearch,
            "update" | "set" => ToolKind::Update,
            "delete" | "remove" => ToolKind::Delete,
            _ => ToolKind::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub semantic_type: SemanticType,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_entity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnFieldSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub semantic_type: SemanticType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_entity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub qualified_name: String,
    pub kind: ToolKind,
    pub params: Vec<ParamSpec>,
    pub returns: Vec<ReturnFieldSpec>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

impl ToolSpec {
    pub fn namespace(&self) -> &str {
        split_qualified(&self.qualified_name).0
    }

    pub fn local_name(&self) -> &str {
        split_qualified(&self.qualified_name).1
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn return_field(&self, name: &str) -> Option<&ReturnFieldSpec> {
        self.returns.iter().find(|r| r.name == name)
    }

    pub fn required_params(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.iter().filter(|p| p.required)
    }
}

fn split_qualified(name: &str) -> (&str, &str) {
    name.split_once(NAMESPACE_SEPARATOR).unwrap_or(("", name))
}

/// Maps `(namespace, field)` pairs onto canonical field names.
///
/// Keys are stored with the field already snake-cased, so lookups are
/// insensitive to the casing a server happens to use.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable {
    entries: BTreeMap<(String, String), String>,
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an alias. Fails if the pair is already mapped to a different
    /// canonical name.
    pub fn insert(
        &mut self,
        namespace: &str,
        field: &str,
        canonical: &str,
    ) -> Result<(), RegistryError> {
        let key = (namespace.to_string(), field.to_snake_case());
        let canonical = canonical.to_snake_case();
        if canonical.is_empty() {
            return Err(RegistryError::schema(
                format!("alias {namespace}.{field}"),
                "canonical name is empty",
            ));
        }
        match self.entries.get(&key) {
            Some(existing) if *existing != canonical => Err(RegistryError::schema(
                format!("alias {namespace}.{field}"),
                format!("maps to both `{existing}` and `{canonical}`"),
            )),
            _ => {
                self.entries.insert(key, canonical);
                Ok(())
            }
        }
    }

    pub fn get(&self, namespace: &str, field: &str) -> Option<&str> {
        self.entries
            .get(&(namespace.to_string(), field.to_string()))
            .map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// `(namespace, field, canonical)` triples in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &str)> {
        self.entries
            .iter()
            .map(|((ns, f), c)| (ns.as_str(), f.as_str(), c.as_str()))
    }

    pub fn canonical_names(&self) -> BTreeSet<&str> {
        self.entries.values().map(String::as_str).collect()
    }

    /// Rejects chains such as `a -> b`, `b -> c` within one namespace, which
    /// would make normalization non-idempotent.
    fn check_chains(&self) -> Result<(), RegistryError> {
        for ((ns, field), canonical) in &self.entries {
            if let Some(next) = self.get(ns, canonical) {
                if next != canonical {
                    return Err(RegistryError::schema(
                        format!("alias {ns}.{field}"),
                        format!("canonical `{canonical}` is itself aliased to `{next}`"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Canonical name for a field: the alias target if `(namespace, field)` is
/// aliased, otherwise the field in lower snake case. Idempotent.
pub fn normalize_field(namespace: &str, field: &str, aliases: &AliasTable) -> String {
    let snake = field.to_snake_case();
    match aliases.get(namespace, &snake) {
        Some(canonical) => canonical.to_string(),
        None => snake,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegistrySource {
    ConfigFile,
    ProtocolDiscovery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolSpec>,
    aliases: AliasTable,
    source: RegistrySource,
}

impl ToolRegistry {
    pub fn empty(source: RegistrySource) -> Self {
        Self {
            tools: BTreeMap::new(),
            aliases: AliasTable::new(),
            source,
        }
    }

    /// Normalizes and validates a manifest document.
    pub fn from_manifest(
        manifest: &Manifest,
        source: RegistrySource,
    ) -> Result<Self, RegistryError> {
        let mut aliases = AliasTable::new();
        for a in &manifest.aliases {
            aliases.insert(&a.server, &a.field, &a.canonical)?;
        }
        aliases.check_chains()?;

        let mut tools = BTreeMap::new();
        for entry in &manifest.tools {
            let spec = normalize_tool(entry, &aliases)?;
            if tools.contains_key(&spec.qualified_name) {
                return Err(RegistryError::DuplicateTool(spec.qualified_name));
            }
            tools.insert(spec.qualified_name.clone(), spec);
        }

        let registry = Self {
            tools,
            aliases,
            source,
        };
        registry.check_alias_invariants()?;
        Ok(registry)
    }

    fn check_alias_invariants(&self) -> Result<(), RegistryError> {
        let mut types: BTreeMap<&str, BTreeSet<SemanticType>> = BTreeMap::new();
        for tool in self.tools.values() {
            for p in &tool.params {
                types.entry(&p.name).or_default().insert(p.semantic_type);
            }
            for r in &tool.returns {
                types.entry(&r.name).or_default().insert(r.semantic_type);
            }
        }
        for canonical in self.aliases.canonical_names() {
            match types.get(canonical) {
                None => {
                    return Err(RegistryError::schema(
                        format!("alias target `{canonical}`"),
                        "does not appear in any tool's params or returns",
                    ))
                }
                Some(set) if set.len() > 1 => {
                    let listed: Vec<_> = set.iter().map(|t| t.as_str()).collect();
                    return Err(RegistryError::schema(
                        format!("alias target `{canonical}`"),
                        format!(
                            "fields of conflicting types share this name: {}",
                            listed.join(", ")
                        ),
                    ));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn from_manifest_str(text: &str, source: RegistrySource) -> Result<Self, RegistryError> {
        let manifest: Manifest =
            serde_json::from_str(text).map_err(|e| RegistryError::Parse(e.to_string()))?;
        Self::from_manifest(&manifest, source)
    }

    /// Exports the registry in manifest form. Reloading the result yields an
    /// identical registry.
    pub fn to_manifest(&self) -> Manifest {
        let tools = self
            .tools
            .values()
            .map(|t| ManifestTool {
                name: t.local_name().to_string(),
                server: t.namespace().to_string(),
                kind: Some(t.kind.as_str().to_string()),
                params: t
                    .params
                    .iter()
                    .map(|p| ManifestField {
                        name: p.name.clone(),
                        semantic_type: Some(p.semantic_type.as_str().to_string()),
                        required: p.required,
                        default: p.default.clone(),
                        ref_entity: p.ref_entity.clone(),
                        description: p.description.clone(),
                    })
                    .collect(),
                returns: t
                    .returns
                    .iter()
                    .map(|r| ManifestField {
                        name: r.name.clone(),
                        semantic_type: Some(r.semantic_type.as_str().to_string()),
                        required: false,
                        default: None,
                        ref_entity: r.ref_entity.clone(),
                        description: String::new(),
                    })
                    .collect(),
                description: t.description.clone(),
            })
            .collect();
        let aliases = self
            .aliases
            .iter()
            .map(|(server, field, canonical)| AliasEntry {
                server: server.to_string(),
                field: field.to_string(),
                canonical: canonical.to_string(),
            })
            .collect();
        Manifest { tools, aliases }
    }

    pub fn get(&self, qualified_name: &str) -> Option<&ToolSpec> {
        self.tools.get(qualified_name)
    }

    pub fn contains(&self, qualified_name: &str) -> bool {
        self.tools.contains_key(qualified_name)
    }

    /// Tools in sorted `qualified_name` order.
    pub fn tools(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn namespaces(&self) -> BTreeSet<&str> {
        self.tools.values().map(|t| t.namespace()).collect()
    }

    pub fn aliases(&self) -> &AliasTable {
        &self.aliases
    }

    pub fn source(&self) -> RegistrySource {
        self.source
    }

    pub fn with_source(mut self, source: RegistrySource) -> Self {
        self.source = source;
        self
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Same tools and aliases, ignoring where the registry came from.
    pub fn same_tools(&self, other: &ToolRegistry) -> bool {
        self.tools == other.tools && self.aliases == other.aliases
    }
}

fn normalize_tool(entry: &ManifestTool, aliases: &AliasTable) -> Result<ToolSpec, RegistryError> {
    let context = format!("tool {}.{}", entry.server, entry.name);
    for part in [&entry.server, &entry.name] {
        if part.is_empty() || part.contains(NAMESPACE_SEPARATOR) {
            return Err(RegistryError::schema(
                &context,
                "server and name must be non-empty and must not contain '.'",
            ));
        }
    }
    let qualified_name = format!("{}{NAMESPACE_SEPARATOR}{}", entry.server, entry.name);
    let kind = match &entry.kind {
        Some(k) => ToolKind::parse(k)
            .ok_or_else(|| RegistryError::schema(&context, format!("unknown kind `{k}`")))?,
        None => ToolKind::infer_from_name(&entry.name),
    };

    let mut params = Vec::with_capacity(entry.params.len());
    let mut seen = BTreeSet::new();
    for field in &entry.params {
        let semantic_type = field_type(field, &context)?;
        let name = normalize_field(&entry.server, &field.name, aliases);
        if name.is_empty() {
            return Err(RegistryError::schema(&context, "param with empty name"));
        }
        if !seen.insert(name.clone()) {
            return Err(RegistryError::schema(
                &context,
                format!("param `{name}` declared twice"),
            ));
        }
        if field.required && field.default.is_some() {
            return Err(RegistryError::schema(
                &context,
                format!("required param `{name}` must not carry a default"),
            ));
        }
        params.push(ParamSpec {
            name,
            semantic_type,
            required: field.required,
            default: field.default.clone(),
            description: field.description.clone(),
            ref_entity: field.ref_entity.clone(),
        });
    }

    let mut returns = Vec::with_capacity(entry.returns.len());
    let mut seen = BTreeSet::new();
    for field in &entry.returns {
        let semantic_type = field_type(field, &context)?;
        let name = normalize_field(&entry.server, &field.name, aliases);
        if name.is_empty() {
            return Err(RegistryError::schema(
                &context,
                "return field with empty name",
            ));
        }
        if !seen.insert(name.clone()) {
            return Err(RegistryError::schema(
                &context,
                format!("return field `{name}` declared twice"),
            ));
        }
        returns.push(ReturnFieldSpec {
            name,
            semantic_type,
            ref_entity: field.ref_entity.clone(),
        });
    }

    Ok(ToolSpec {
        qualified_name,
        kind,
        params,
        returns,
        description: entry.description.clone(),
    })
}

fn field_type(field: &ManifestField, context: &str) -> Result<SemanticType, RegistryError> {
    let raw = field.semantic_type.as_deref().ok_or_else(|| {
        RegistryError::schema(context, format!("field `{}` has no type", field.name))
    })?;
    SemanticType::parse(raw).ok_or_else(|| {
        RegistryError::schema(
            context,
            format!("field `{}` has unknown type `{raw}`", field.name),
        )
    })
}

/// Loads a manifest document from disk.
pub fn load_registry_from_config(path: impl AsRef<Path>) -> Result<ToolRegistry, RegistryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| RegistryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    ToolRegistry::from_manifest_str(&text, RegistrySource::ConfigFile)
}

// ---------------------------------------------------------------------------
// Manifest wire format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub tools: Vec<ManifestTool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<AliasEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTool {
    pub name: String,
    pub server: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default)]
    pub params: Vec<ManifestField>,
    #[serde(default)]
    pub returns: Vec<ManifestField>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestField {
    pub name: String,
    #[serde(rename = "type", default)]
    pub semantic_type: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_entity: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub server: String,
    pub field: String,
    pub canonical: String,
}

// ---------------------------------------------------------------------------
// Argument validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    MissingRequired {
        param: String,
    },
    TypeMismatch {
        param: String,
        expected: SemanticType,
    },
    UnknownParam {
        param: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingRequired { param } => write!(f, "missing required field `{param}`"),
            Violation::TypeMismatch { param, expected } => {
                write!(f, "field `{param}` must be of type {expected}")
            }
            Violation::UnknownParam { param } => write!(f, "unknown field `{param}`"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub violations: Vec<Violation>,
}

impl ValidationOutcome {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn describe(&self) -> String {
        self.violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Checks an argument map against a tool's parameter schema.
///
/// Every required param must be present, every present param must match its
/// declared type, and names outside the schema are rejected.
pub fn validate_arguments(tool: &ToolSpec, args: &Args) -> ValidationOutcome {
    let mut violations = Vec::new();
    for p in &tool.params {
        match args.get(&p.name) {
            None if p.required => violations.push(Violation::MissingRequired {
                param: p.name.clone(),
            }),
            None => {}
            Some(v) if !p.semantic_type.accepts(v) => violations.push(Violation::TypeMismatch {
                param: p.name.clone(),
                expected: p.semantic_type,
            }),
            Some(_) => {}
        }
    }
    for name in args.keys() {
        if tool.param(name).is_none() {
            violations.push(Violation::UnknownParam {
                param: name.clone(),
            });
        }
    }
    ValidationOutcome { violations }
}

/// Checks a success payload against a tool's return schema: every declared
/// field present with the declared type, nothing else.
pub fn validate_payload(tool: &ToolSpec, payload: &Args) -> ValidationOutcome {
    let mut violations = Vec::new();
    for r in &tool.returns {
        match payload.get(&r.name) {
            None => violations.push(Violation::MissingRequired {
                param: r.name.clone(),
            }),
            Some(v) if !r.semantic_type.accepts(v) => violations.push(Violation::TypeMismatch {
                param: r.name.clone(),
                expected: r.semantic_type,
            }),
            Some(_) => {}
        }
    }
    for name in payload.keys() {
        if tool.return_field(name).is_none() {
            violations.push(Violation::UnknownParam {
                param: name.clone(),
            });
        }
    }
    ValidationOutcome { violations }
}
