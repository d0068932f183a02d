mod oracles;

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::{json, Value};
use trajforge::env::{desk_manifest_json, desk_registry, desk_seed, Environment};
use trajforge::registry::{
    normalize_field, validate_arguments, AliasEntry, Manifest, ManifestField, ManifestTool,
    RegistrySource,
};
use trajforge::rpc::{discover_tools, spawn_local, EnvService};
use trajforge::{Args, ToolGraph, ToolRegistry};

const TYPES: [&str; 4] = ["string", "integer", "number", "boolean"];
const NAMES: [&str; 6] = [
    "customer_id",
    "order_id",
    "cid",
    "amount",
    "label",
    "owner_id",
];

fn field(name: &str, ty: &str, required: bool, ref_entity: Option<&str>) -> ManifestField {
    ManifestField {
        name: name.into(),
        semantic_type: Some(ty.into()),
        required,
        default: None,
        ref_entity: ref_entity.map(Into::into),
        description: String::new(),
    }
}

fn arb_field(required: bool) -> impl Strategy<Value = ManifestField> {
    (
        0..NAMES.len(),
        0..TYPES.len(),
        prop::option::of(prop_oneof![Just("customer"), Just("order")]),
    )
        .prop_map(move |(n, t, r)| field(NAMES[n], TYPES[t], required, r))
}

fn dedup_names(fields: Vec<ManifestField>) -> Vec<ManifestField> {
    let mut seen = BTreeSet::new();
    fields
        .into_iter()
        .filter(|f| seen.insert(f.name.clone()))
        .collect()
}

prop_compose! {
    fn arb_tool(i: usize)(
        server in prop_oneof![Just("alpha"), Just("beta")],
        verb in prop_oneof![Just("create"), Just("get"), Just("list"), Just("update")],
        required in prop::collection::vec(arb_field(true), 0..3),
        optional in prop::collection::vec(arb_field(false), 0..2),
        returns in prop::collection::vec(arb_field(false), 0..3),
    ) -> ManifestTool {
        let mut params = dedup_names(required);
        for o in dedup_names(optional) {
            if !params.iter().any(|p| p.name == o.name) {
                params.push(o);
            }
        }
        ManifestTool {
            name: format!("{verb}_thing_{i}"),
            server: server.into(),
            kind: None,
            params,
            returns: dedup_names(returns),
            description: String::new(),
        }
    }
}

fn arb_manifest() -> impl Strategy<Value = Manifest> {
    (
        (
            arb_tool(0),
            arb_tool(1),
            arb_tool(2),
            arb_tool(3),
            arb_tool(4),
            arb_tool(5),
        ),
        any::<bool>(),
    )
        .prop_map(|((a, b, c, d, e, f), alias)| Manifest {
            tools: vec![a, b, c, d, e, f],
            aliases: if alias {
                vec![AliasEntry {
                    server: "beta".into(),
                    field: "cid".into(),
                    canonical: "customer_id".into(),
                }]
            } else {
                Vec::new()
            },
        })
}

fn library_edges(g: &ToolGraph) -> BTreeSet<(String, String, String, String)> {
    g.edges()
        .iter()
        .map(|e| {
            (
                e.from_tool.clone(),
                e.to_tool.clone(),
                e.return_field.clone(),
                e.input_param.clone(),
            )
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn graph_matches_all_pairs_oracle(m in arb_manifest()) {
        let Ok(reg) = ToolRegistry::from_manifest(&m, RegistrySource::ConfigFile) else {
            // alias targets with conflicting types are rejected by design
            return Ok(());
        };
        let g = ToolGraph::build(&reg, &Default::default());
        prop_assert_eq!(library_edges(&g), oracles::edges(&m));
        for e in g.edges() {
            prop_assert_ne!(&e.from_tool, &e.to_tool);
            let to = reg.get(&e.to_tool).unwrap();
            prop_assert!(to.param(&e.input_param).unwrap().required);
        }
        let again = ToolGraph::build(&reg, &Default::default());
        prop_assert_eq!(g.to_export_json(), again.to_export_json());
    }

    #[test]
    fn manifest_round_trip_is_identity(m in arb_manifest()) {
        let Ok(reg) = ToolRegistry::from_manifest(&m, RegistrySource::ConfigFile) else {
            return Ok(());
        };
        let back = ToolRegistry::from_manifest(&reg.to_manifest(), RegistrySource::ConfigFile).unwrap();
        prop_assert_eq!(back, reg);
    }

    #[test]
    fn argument_validation_matches_rule_checker(
        args in prop::collection::btree_map(
            prop_oneof![Just("customer_name"), Just("email"), Just("tier"), Just("bogus")],
            prop_oneof![
                Just(json!("x")), Just(json!(3)), Just(json!(2.5)), Just(json!(true)),
                Just(json!(null)), Just(json!([1])), Just(json!({"a": 1}))
            ],
            0..4,
        )
    ) {
        let m: Manifest = serde_json::from_str(desk_manifest_json()).unwrap();
        let reg = desk_registry();
        let args: Args = args.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for tool in &m.tools {
            let spec = reg.get(&format!("{}.{}", tool.server, tool.name)).unwrap();
            prop_assert_eq!(
                validate_arguments(spec, &args).is_ok(),
                oracles::arguments_ok(&tool.params, &args),
                "{}", spec.qualified_name
            );
        }
    }

    #[test]
    fn normalize_is_idempotent(name in "[A-Za-z][A-Za-z0-9_]{0,12}") {
        let reg = desk_registry();
        let once = normalize_field("crm", &name, reg.aliases());
        prop_assert_eq!(normalize_field("crm", &once, reg.aliases()), once.clone());
    }
}

#[test]
fn snake_case_oracle_agrees_on_identifiers() {
    let reg = desk_registry();
    for name in [
        "customerId",
        "CustomerName",
        "order_id",
        "assignedRepId",
        "leave-request",
    ] {
        assert_eq!(
            normalize_field("zz", name, reg.aliases()),
            oracles::snake(name),
            "{name}"
        );
    }
}

#[test]
fn desk_graph_matches_oracle_and_is_stable() {
    let m: Manifest = serde_json::from_str(desk_manifest_json()).unwrap();
    let reg = desk_registry();
    let g = ToolGraph::build(&reg, &desk_seed());
    assert_eq!(library_edges(&g), oracles::edges(&m));
    assert!(!g.entry_nodes().is_empty());
    let json = g.to_export_json();
    assert_eq!(
        ToolGraph::from_export_json(&json).unwrap().to_export_json(),
        json
    );
}

#[test]
fn camel_case_fields_meet_snake_case_params() {
    let m = Manifest {
        tools: vec![
            ManifestTool {
                name: "create_customer".into(),
                server: "crm".into(),
                kind: None,
                params: vec![field("name", "string", true, None)],
                returns: vec![field("customerId", "string", false, Some("customer"))],
                description: String::new(),
            },
            ManifestTool {
                name: "get_customer".into(),
                server: "crm".into(),
                kind: None,
                params: vec![field("customer_id", "string", true, Some("customer"))],
                returns: vec![],
                description: String::new(),
            },
        ],
        aliases: vec![],
    };
    let reg = ToolRegistry::from_manifest(&m, RegistrySource::ConfigFile).unwrap();
    let g = ToolGraph::build(&reg, &Default::default());
    assert_eq!(library_edges(&g), oracles::edges(&m));
    assert_eq!(g.edges().len(), 1);
}

#[test]
fn empty_manifest_gives_empty_graph() {
    let reg = ToolRegistry::from_manifest_str("{}", RegistrySource::ConfigFile).unwrap();
    let g = ToolGraph::build(&reg, &Default::default());
    assert_eq!(
        (g.nodes().len(), g.edges().len(), g.entry_nodes().len()),
        (0, 0, 0)
    );
}

#[test]
fn discovery_equals_config_load() {
    let reg = desk_registry();
    let env = Arc::new(Environment::desk(reg.clone()).unwrap());
    let service = Arc::new(EnvService::new(env, desk_seed(), 1).unwrap());
    let addr = spawn_local(service).unwrap();
    let discovered = discover_tools(&addr).unwrap();
    assert!(discovered.same_tools(&reg));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(
        &path,
        serde_json::to_string(&discovered.to_manifest()).unwrap(),
    )
    .unwrap();
    let from_file = trajforge::registry::load_registry_from_config(&path).unwrap();
    assert!(from_file.same_tools(&discovered));
}

#[test]
fn discovery_of_unreachable_endpoint_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    let err = discover_tools(&addr).unwrap_err();
    assert!(
        matches!(err, trajforge::RegistryError::Transport(_)),
        "{err:?}"
    );
}

#[test]
fn schema_check_examples() {
    let reg = desk_registry();
    let spec = reg.get("crm.create_customer").unwrap();
    let ok: Args = json!({"customer_name": "TechCorp"})
        .as_object()
        .unwrap()
        .clone();
    assert!(validate_arguments(spec, &ok).is_ok());
    let bad: Args = json!({"customer_name": 5}).as_object().unwrap().clone();
    assert!(!validate_arguments(spec, &bad).is_ok());
    let missing: Args = serde_json::Map::<String, Value>::new();
    assert!(!validate_arguments(spec, &missing).is_ok());
}
