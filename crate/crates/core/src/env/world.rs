//! Entity schemas, tool bindings and propagation rules that give tools their
//! behaviour inside an episode.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::registry::SemanticType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    #[serde(rename = "type")]
    pub semantic_type: SemanticType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

/// One keyed entity store inside an app.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySchema {
    pub app: String,
    pub entity: String,
    pub plural: String,
    pub id_field: String,
    pub id_prefix: String,
    pub fields: Vec<FieldDef>,
    /// Populated only through propagation; never installed from seed data.
    #[serde(default)]
    pub mirror: bool,
}

impl EntitySchema {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Type of `name` in a record of this entity, counting the id field.
    pub fn type_of(&self, name: &str) -> Option<SemanticType> {
        if name == self.id_field {
            Some(SemanticType::String)
        } else {
            self.field(name).map(|f| f.semantic_type)
        }
    }

    pub fn format_id(&self, counter: u64) -> String {
        format!("{}_{counter:04}", self.id_prefix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Create,
    Get,
    List,
    Update,
    Delete,
}

/// A param whose value must name an existing entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub param: String,
    pub app: String,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolBinding {
    pub tool: String,
    pub app: String,
    pub entity: String,
    pub op: Operation,
    /// `(param, record field)` pairs where the names differ.
    #[serde(default)]
    pub renames: Vec<(String, String)>,
    #[serde(default)]
    pub references: Vec<Reference>,
}

impl ToolBinding {
    pub fn field_for_param<'a>(&'a self, param: &'a str) -> &'a str {
        self.renames
            .iter()
            .find(|(p, _)| p == param)
            .map(|(_, f)| f.as_str())
            .unwrap_or(param)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityEvent {
    Created,
    Updated,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    /// Upsert a record with the same id into the target store, copying the
    /// listed `(source field, target field)` pairs.
    Mirror {
        target_entity: String,
        fields: Vec<(String, String)>,
    },
    /// Remove the record with the same id from the target store.
    Remove { target_entity: String },
}

impl Effect {
    pub fn target_entity(&self) -> &str {
        match self {
            Effect::Mirror { target_entity, .. } | Effect::Remove { target_entity } => {
                target_entity
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationRule {
    pub source_app: String,
    pub entity: String,
    pub event: EntityEvent,
    pub target_app: String,
    pub effect: Effect,
}

/// Everything the simulator needs beyond the tool registry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub entities: Vec<EntitySchema>,
    pub bindings: Vec<ToolBinding>,
    pub rules: Vec<PropagationRule>,
}

impl WorldModel {
    pub fn entity(&self, app: &str, entity: &str) -> Option<&EntitySchema> {
        self.entities
            .iter()
            .find(|e| e.app == app && e.entity == entity)
    }

    pub fn binding(&self, tool: &str) -> Option<&ToolBinding> {
        self.bindings.iter().find(|b| b.tool == tool)
    }

    pub fn apps(&self) -> Vec<&str> {
        let mut apps: Vec<&str> = self.entities.iter().map(|e| e.app.as_str()).collect();
        apps.sort_unstable();
        apps.dedup();
        apps
    }

    pub fn without_rules(mut self) -> Self {
        self.rules.clear();
        self
    }

    /// Three-app desk world: `crm`, `hr` and `chat`, with HR employees
    /// mirrored into the CRM's assignable-rep store.
    pub fn desk() -> Self {
        fn f(name: &str, ty: SemanticType, default: Option<Value>) -> FieldDef {
            FieldDef {
                name: name.into(),
                semantic_type: ty,
                default,
            }
        }
        fn ent(
            app: &str,
            entity: &str,
            plural: &str,
            id_field: &str,
            prefix: &str,
            fields: Vec<FieldDef>,
        ) -> EntitySchema {
            EntitySchema {
                app: app.into(),
                entity: entity.into(),
                plural: plural.into(),
                id_field: id_field.into(),
                id_prefix: prefix.into(),
                fields,
                mirror: false,
            }
        }
        use SemanticType::{Integer, String as Str};
        let mut rep = ent(
            "crm",
            "rep",
            "reps",
            "employee_id",
            "emp",
            vec![
                f("employee_name", Str, None),
                f("department", Str, Some(json!("general"))),
            ],
        );
        rep.mirror = true;
        let entities = vec![
            ent(
                "crm",
                "customer",
                "customers",
                "customer_id",
                "cust",
                vec![
                    f("customer_name", Str, None),
                    f("email", Str, Some(json!(""))),
                    f("tier", Str, Some(json!("standard"))),
                    f("assigned_rep_id", Str, Some(json!(""))),
                ],
            ),
            ent(
                "crm",
                "order",
                "orders",
                "order_id",
                "ord",
                vec![
                    f("customer_id", Str, None),
                    f("amount", Integer, None),
                    f("status", Str, Some(json!("pending"))),
                ],
            ),
            rep,
            ent(
                "hr",
                "employee",
                "employees",
                "employee_id",
                "emp",
                vec![
                    f("employee_name", Str, None),
                    f("department", Str, Some(json!("general"))),
                    f("status", Str, Some(json!("active"))),
                ],
            ),
            ent(
                "hr",
                "leave_request",
                "leave_requests",
                "leave_id",
                "leave",
                vec![
                    f("employee_id", Str, None),
                    f("days", Integer, None),
                    f("status", Str, Some(json!("pending"))),
                ],
            ),
            ent(
                "chat",
                "channel",
                "channels",
                "channel_id",
                "chan",
                vec![f("channel_name", Str, None)],
            ),
            ent(
                "chat",
                "message",
                "messages",
                "message_id",
                "msg",
                vec![f("channel_id", Str, None), f("text", Str, None)],
            ),
        ];

        fn bind(tool: &str, entity: &str, op: Operation) -> ToolBinding {
            let (app, _) = tool.split_once('.').expect("qualified tool name");
            ToolBinding {
                tool: tool.into(),
                app: app.into(),
                entity: entity.into(),
                op,
                renames: Vec::new(),
                references: Vec::new(),
            }
        }
        fn reference(param: &str, app: &str, entity: &str) -> Reference {
            Reference {
                param: param.into(),
                app: app.into(),
                entity: entity.into(),
            }
        }
        use Operation::*;
        let mut create_order = bind("crm.create_order", "order", Create);
        create_order
            .references
            .push(reference("customer_id", "crm", "customer"));
        let mut assign_rep = bind("crm.assign_rep", "customer", Update);
        assign_rep
            .renames
            .push(("employee_id".into(), "assigned_rep_id".into()));
        assign_rep
            .references
            .push(reference("employee_id", "crm", "rep"));
        let mut create_leave = bind("hr.create_leave_request", "leave_request", Create);
        create_leave
            .references
            .push(reference("employee_id", "hr", "employee"));
        let mut post_message = bind("chat.post_message", "message", Create);
        post_message
            .references
            .push(reference("channel_id", "chat", "channel"));

        let bindings = vec![
            bind("crm.create_customer", "customer", Create),
            bind("crm.get_customer", "customer", Get),
            bind("crm.update_customer", "customer", Update),
            bind("crm.list_customers", "customer", List),
            create_order,
            bind("crm.get_order", "order", Get),
            bind("crm.update_order", "order", Update),
            bind("crm.delete_order", "order", Delete),
            bind("crm.list_assignable_reps", "rep", List),
            assign_rep,
            bind("hr.create_employee", "employee", Create),
            bind("hr.get_employee", "employee", Get),
            bind("hr.search_employees", "employee", List),
            bind("hr.update_employee", "employee", Update),
            bind("hr.remove_employee", "employee", Delete),
            create_leave,
            bind("hr.get_leave_request", "leave_request", Get),
            bind("hr.update_leave_request", "leave_request", Update),
            bind("chat.create_channel", "channel", Create),
            bind("chat.list_channels", "channel", List),
            post_message,
            bind("chat.get_message", "message", Get),
            bind("chat.delete_message", "message", Delete),
        ];

        let mirrored = vec![
            ("employee_name".to_string(), "employee_name".to_string()),
            ("department".to_string(), "department".to_string()),
        ];
        let rules = vec![
            PropagationRule {
                source_app: "hr".into(),
                entity: "employee".into(),
                event: EntityEvent::Created,
                target_app: "crm".into(),
                effect: Effect::Mirror {
                    target_entity: "rep".into(),
                    fields: mirrored.clone(),
                },
            },
            PropagationRule {
                source_app: "hr".into(),
                entity: "employee".into(),
                event: EntityEvent::Updated,
                target_app: "crm".into(),
                effect: Effect::Mirror {
                    target_entity: "rep".into(),
                    fields: mirrored,
                },
            },
            PropagationRule {
                source_app: "hr".into(),
                entity: "employee".into(),
                event: EntityEvent::Deleted,
                target_app: "crm".into(),
                effect: Effect::Remove {
                    target_entity: "rep".into(),
                },
            },
        ];

        Self {
            entities,
            bindings,
            rules,
        }
    }
}
