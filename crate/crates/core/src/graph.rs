//! Directed tool dependency graph.
//!
//! An edge `a -> b` records that one of `a`'s return fields can feed one of
//! `b`'s required params. Several edges may connect the same pair of tools
//! when more than one field binding exists.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::registry::{
    normalize_field, AliasTable, ParamSpec, ReturnFieldSpec, ToolKind, ToolRegistry, ToolSpec,
};
use crate::seed::SeedData;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown tool `{0}`")]
    UnknownNode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DependencyEdge {
    #[serde(rename = "from")]
    pub from_tool: String,
    #[serde(rename = "to")]
    pub to_tool: String,
    pub return_field: String,
    pub input_param: String,
}

/// Whether a return field (from namespace `ret_ns`) can satisfy a param (of
/// namespace `param_ns`): equal canonical names, equal types, and equal
/// entity annotations when both sides carry one.
pub fn compatible(
    ret_ns: &str,
    ret: &ReturnFieldSpec,
    param_ns: &str,
    param: &ParamSpec,
    aliases: &AliasTable,
) -> bool {
    if ret.semantic_type != param.semantic_type {
        return false;
    }
    if let (Some(a), Some(b)) = (&ret.ref_entity, &param.ref_entity) {
        if a != b {
            return false;
        }
    }
    normalize_field(ret_ns, &ret.name, aliases) == normalize_field(param_ns, &param.name, aliases)
}

/// Entry-node rule for trajectory sampling: CREATE tools, LIST/SEARCH tools
/// without required inputs, and tools whose every required input is
/// available in the seed data with a matching type.
pub fn is_entry_node(tool: &ToolSpec, seed: &SeedData) -> bool {
    match tool.kind {
        ToolKind::Create => true,
        ToolKind::ListSearch if tool.required_params().next().is_none() => true,
        _ => tool
            .required_params()
            .all(|p| seed.first_of_type(&p.name, p.semantic_type).is_some()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolGraph {
    nodes: Vec<String>,
    edges: Vec<DependencyEdge>,
    entry_nodes: Vec<String>,
    #[serde(skip)]
    outgoing: BTreeMap<String, Vec<usize>>,
}

impl ToolGraph {
    /// Builds the graph with entry nodes computed against `seed`.
    pub fn build(registry: &ToolRegistry, seed: &SeedData) -> Self {
        let aliases = registry.aliases();
        let tools: Vec<&ToolSpec> = registry.tools().collect();
        let mut edges = BTreeSet::new();
        for from in &tools {
            for to in &tools {
                if from.qualified_name == to.qualified_name {
                    continue;
                }
                for ret in &from.returns {
                    for param in to.required_params() {
                        if compatible(from.namespace(), ret, to.namespace(), param, aliases) {
                            edges.insert(DependencyEdge {
                                from_tool: from.qualified_name.clone(),
                                to_tool: to.qualified_name.clone(),
                                return_field: ret.name.clone(),
                                input_param: param.name.clone(),
                            });
                        }
                    }
                }
            }
        }
        let entry_nodes = tools
            .iter()
            .filter(|t| is_entry_node(t, seed))
            .map(|t| t.qualified_name.clone())
            .collect();
        let nodes = tools.iter().map(|t| t.qualified_name.clone()).collect();
        Self::from_parts(nodes, edges.into_iter().collect(), entry_nodes)
    }

    fn from_parts(
        nodes: Vec<String>,
        edges: Vec<DependencyEdge>,
        entry_nodes: Vec<String>,
    ) -> Self {
        let mut outgoing: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in edges.iter().enumerate() {
            outgoing.entry(e.from_tool.clone()).or_default().push(i);
        }
        Self {
            nodes,
            edges,
            entry_nodes,
            outgoing,
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    /// Edges sorted by `(from, to, return_field, input_param)`.
    pub fn edges(&self) -> &[DependencyEdge] {
        &self.edges
    }

    pub fn entry_nodes(&self) -> &[String] {
        &self.entry_nodes
    }

    pub fn contains(&self, tool: &str) -> bool {
        self.nodes
            .binary_search_by(|n| n.as_str().cmp(tool))
            .is_ok()
    }

    /// Successor tools of `tool`, sorted by name, each with every edge that
    /// links `tool` to it.
    pub fn successors(&self, tool: &str) -> Result<Vec<(&str, Vec<&DependencyEdge>)>, GraphError> {
        if !self.contains(tool) {
            return Err(GraphError::UnknownNode(tool.to_string()));
        }
        let mut grouped: BTreeMap<&str, Vec<&DependencyEdge>> = BTreeMap::new();
        for &i in self
            .outgoing
            .get(tool)
            .map(Vec::as_slice)
            .unwrap_or_default()
        {
            let e = &self.edges[i];
            grouped.entry(e.to_tool.as_str()).or_default().push(e);
        }
        Ok(grouped.into_iter().collect())
    }

    /// Graph export document (pretty JSON, trailing newline).
    pub fn to_export_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_export_json(text: &str) -> serde_json::Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            nodes: Vec<String>,
            edges: Vec<DependencyEdge>,
            entry_nodes: Vec<String>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        Ok(Self::from_parts(raw.nodes, raw.edges, raw.entry_nodes))
    }
}

/// Graph with entry nodes computed against empty seed data.
pub fn build_graph(registry: &ToolRegistry) -> ToolGraph {
    ToolGraph::build(registry, &SeedData::default())
}
