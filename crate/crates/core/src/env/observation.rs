//! Bounded rendering of tool results for the agent context.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ToolResult, ToolStatus};

pub const DEFAULT_OBSERVATION_BUDGET: usize = 2048;
/// Smallest budget that can hold the empty object `{}`.
pub const MIN_OBSERVATION_BUDGET: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub content: Value,
    pub truncated: bool,
    pub budget: usize,
}

impl Observation {
    /// Compact JSON text; its length in chars never exceeds `budget`.
    pub fn to_text(&self) -> String {
        serde_json::to_string(&self.content).expect("observation serializes")
    }
}

fn char_len(v: &Value) -> usize {
    serde_json::to_string(v)
        .expect("json serializes")
        .chars()
        .count()
}

struct Parts {
    status: Option<&'static str>,
    error: Option<String>,
    result: Vec<(String, Value)>,
    details: Vec<(String, Value)>,
    logs: Vec<String>,
    success: bool,
}

impl Parts {
    fn render(&self) -> Value {
        let mut m = Map::new();
        if let Some(s) = self.status {
            m.insert("status".into(), Value::String(s.into()));
        }
        if let Some(e) = &self.error {
            m.insert("error".into(), Value::String(e.clone()));
        }
        if self.success && !self.result.is_empty() {
            m.insert(
                "result".into(),
                Value::Object(self.result.iter().cloned().collect()),
            );
        }
        if !self.details.is_empty() {
            m.insert(
                "details".into(),
                Value::Object(self.details.iter().cloned().collect()),
            );
        }
        if !self.logs.is_empty() {
            m.insert(
                "logs".into(),
                Value::Array(self.logs.iter().cloned().map(Value::String).collect()),
            );
        }
        Value::Object(m)
    }

    /// Drops the lowest-priority whole unit; false when nothing droppable is
    /// left.
    fn drop_one(&mut self) -> bool {
        self.logs.pop().is_some() || self.details.pop().is_some() || self.result.pop().is_some()
    }
}

/// Renders `result` as a JSON object whose serialized length is at most
/// `budget` chars.
///
/// Whole fields are dropped, lowest priority first: log lines, then
/// non-schema record fields, then return-schema fields. The error message is
/// kept as long as possible and shortened only once nothing else is left.
///
/// # Panics
///
/// If `budget < MIN_OBSERVATION_BUDGET`.
pub fn normalize_observation(result: &ToolResult, budget: usize) -> Observation {
    assert!(
        budget >= MIN_OBSERVATION_BUDGET,
        "observation budget must be at least {MIN_OBSERVATION_BUDGET}"
    );
    let success = result.status == ToolStatus::Success;
    let mut parts = Parts {
        status: Some(if success { "success" } else { "error" }),
        error: result.error_message.clone(),
        result: result
            .payload
            .as_ref()
            .map(|p| p.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default(),
        details: result
            .details
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect(),
        logs: result.logs.clone(),
        success,
    };
    let mut truncated = false;
    let mut content = parts.render();
    while char_len(&content) > budget && parts.drop_one() {
        truncated = true;
        content = parts.render();
    }
    if char_len(&content) > budget {
        if let Some(msg) = parts.error.clone() {
            truncated = true;
            let chars: Vec<char> = msg.chars().collect();
            let fits = |n: usize, p: &mut Parts| {
                p.error = Some(chars[..n].iter().collect());
                char_len(&p.render()) <= budget
            };
            let (mut lo, mut hi) = (0usize, chars.len());
            if fits(0, &mut parts) {
                while lo < hi {
                    let mid = (lo + hi).div_ceil(2);
                    if fits(mid, &mut parts) {
                        lo = mid;
                    } else {
                        hi = mid - 1;
                    }
                }
                fits(lo, &mut parts);
            } else {
                parts.error = None;
            }
            content = parts.render();
        }
    }
    if char_len(&content) > budget {
        truncated = true;
        parts.status = None;
        content = parts.render();
    }
    Observation {
        content,
        truncated,
        budget,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Args;
    use proptest::prelude::*;
    use serde_json::json;

    fn obj(v: Value) -> Args {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn small_result_is_untouched() {
        let r = ToolResult::success(
            obj(json!({"customer_id": "cust_0001"})),
            Args::new(),
            vec![],
        );
        let o = normalize_observation(&r, DEFAULT_OBSERVATION_BUDGET);
        assert!(!o.truncated);
        assert_eq!(
            o.content,
            json!({"status": "success", "result": {"customer_id": "cust_0001"}})
        );
    }

    #[test]
    fn logs_go_before_details_before_payload() {
        let r = ToolResult::success(
            obj(json!({"customer_id": "cust_0001"})),
            obj(json!({"tier": "standard"})),
            vec!["x".repeat(40)],
        );
        let full = char_len(&normalize_observation(&r, 10_000).content);
        let no_logs = normalize_observation(&r, full - 1);
        assert!(no_logs.truncated);
        assert!(no_logs.content.get("logs").is_none());
        assert_eq!(no_logs.content["details"], json!({"tier": "standard"}));

        let no_details = normalize_observation(&r, char_len(&no_logs.content) - 1);
        assert!(no_details.content.get("details").is_none());
        assert_eq!(
            no_details.content["result"],
            json!({"customer_id": "cust_0001"})
        );
    }

    #[test]
    fn error_message_is_shortened_last() {
        let r = ToolResult::error("customer cust_9999 not found", vec!["trace".into()]);
        let o = normalize_observation(&r, 30);
        assert!(o.truncated);
        assert!(o.to_text().chars().count() <= 30);
        let msg = o.content["error"].as_str().unwrap();
        assert!(
            !msg.is_empty() && "customer cust_9999 not found".starts_with(msg),
            "{o:?}"
        );
    }

    #[test]
    fn tiny_budget_yields_empty_object() {
        let r = ToolResult::error("boom", vec![]);
        let o = normalize_observation(&r, MIN_OBSERVATION_BUDGET);
        assert_eq!(o.content, json!({}));
        assert!(o.truncated);
    }

    #[test]
    #[should_panic]
    fn budget_below_minimum_panics() {
        normalize_observation(&ToolResult::error("x", vec![]), 1);
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            "[a-zé ]{0,60}".prop_map(Value::String),
            any::<i64>().prop_map(|n| json!(n)),
            any::<bool>().prop_map(Value::Bool),
            prop::collection::vec("[a-z]{0,12}", 0..6).prop_map(|v| json!(v)),
        ]
    }

    fn arb_result() -> impl Strategy<Value = ToolResult> {
        let fields = || prop::collection::btree_map("[a-z_]{1,10}", arb_value(), 0..6);
        prop_oneof![
            (
                fields(),
                fields(),
                prop::collection::vec("[ -~]{0,40}", 0..4)
            )
                .prop_map(|(p, d, l)| {
                    ToolResult::success(p.into_iter().collect(), d.into_iter().collect(), l)
                }),
            ("[ -~]{0,120}", prop::collection::vec("[ -~]{0,40}", 0..4))
                .prop_map(|(m, l)| ToolResult::error(m, l)),
        ]
    }

    proptest! {
        #[test]
        fn prop_within_budget(r in arb_result(), budget in 2usize..400) {
            let o = normalize_observation(&r, budget);
            let len = o.to_text().chars().count();
            prop_assert!(len <= budget);
            let full = normalize_observation(&r, usize::MAX);
            prop_assert!(!full.truncated);
            prop_assert_eq!(o.truncated, o.content != full.content);
        }

        #[test]
        fn prop_kept_fields_are_verbatim(r in arb_result(), budget in 2usize..400) {
            let o = normalize_observation(&r, budget);
            if let (Some(kept), Some(payload)) = (o.content.get("result"), r.payload.as_ref()) {
                for (k, v) in kept.as_object().unwrap() {
                    prop_assert_eq!(payload.get(k), Some(v));
                }
                // result fields survive only once all details and logs are gone
                if kept.as_object().unwrap().len() < payload.len() {
                    prop_assert!(o.content.get("details").is_none());
                    prop_assert!(o.content.get("logs").is_none());
                }
            }
        }
    }
}
