use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::registry::SemanticType;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid seed data: {0}")]
pub struct SeedFormatError(pub String);

/// Values available to an episode before any tool has run, keyed by
/// canonical field name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedData {
    pub entries: BTreeMap<String, Vec<Value>>,
}

impl SeedData {
    /// Parses `{"field": [v1, v2, ...], ...}`.
    pub fn from_json(value: &Value) -> Result<Self, SeedFormatError> {
        let obj = value
            .as_object()
            .ok_or_else(|| SeedFormatError("seed must be a JSON object".into()))?;
        let mut entries = BTreeMap::new();
        for (k, v) in obj {
            let list = v
                .as_array()
                .ok_or_else(|| SeedFormatError(format!("seed field `{k}` must be a list")))?;
            entries.insert(k.clone(), list.clone());
        }
        Ok(Self { entries })
    }

    pub fn values(&self, field: &str) -> &[Value] {
        self.entries
            .get(field)
            .map(Vec::as_slice)
            .unwrap_or_default()
    }

    /// First seeded value for `field` that is an instance of `ty`.
    pub fn first_of_type(&self, field: &str, ty: SemanticType) -> Option<&Value> {
        self.values(field).iter().find(|v| ty.accepts(v))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.values().all(Vec::is_empty)
    }
}
