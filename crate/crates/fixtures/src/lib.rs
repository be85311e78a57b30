//! Deterministic fixtures for pkiscope: seeded PKI graphs, OCSP responses,
//! and local TLS, HTTP and DNS servers driven by scenario files.

use std::path::PathBuf;

pub mod dns_server;
pub mod harness;
pub mod ocsp;
pub mod pki;
pub mod scenario;
pub mod server;

pub use harness::{start_scenario, EndpointDescriptor, RunningScenario};
pub use pki::{generate_pki, random_spec, MaterializedPki, PkiSpec};
pub use scenario::FixtureScenario;
pub use server::ConnectionRecord;

/// Date of the bundled public suffix list snapshot.
pub const PSL_SNAPSHOT: &str = "2026-10-10";

/// Directory holding scenario and PKI documents.
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn public_suffix_list_path() -> PathBuf {
    fixtures_dir().join("public_suffix_list.dat")
}

/// The bundled public suffix list, parsed.
pub fn public_suffixes() -> pkiscope_core::targets::PublicSuffixTable {
    let raw = std::fs::read_to_string(public_suffix_list_path()).expect("bundled public suffix list");
    let date = PSL_SNAPSHOT.parse().ok();
    pkiscope_core::targets::load_public_suffixes(&raw, date).expect("bundled public suffix list parses")
}

/// Loads `fixtures/<name>.json` as a scenario.
pub fn load_scenario(name: &str) -> Result<FixtureScenario, scenario::ScenarioError> {
    FixtureScenario::load(&fixtures_dir().join(format!("{name}.json")))
}

/// Loads `fixtures/<name>.json`, materializes its PKI at the clock's
/// current time and starts it.
pub fn start_named(
    name: &str,
    seed: u64,
    clock: std::sync::Arc<dyn pkiscope_core::Clock>,
) -> Result<RunningScenario, scenario::ScenarioError> {
    let scenario = load_scenario(name)?;
    let pki = match &scenario.pki {
        Some(spec) => {
            Some(generate_pki(spec, seed, clock.now()).map_err(|e| scenario::ScenarioError::Startup(e.to_string()))?)
        }
        None => None,
    };
    start_scenario(&scenario, pki.as_ref(), clock)
}

/// `n` TLS-only hosts `b<i>.fixture.test`, each serving its own leaf under
/// a shared intermediate.
pub fn bulk_scenario(n: usize) -> FixtureScenario {
    let mut nodes = vec![
        serde_json::json!({"name": "root", "role": "root", "organization": "Bulk Root"}),
        serde_json::json!({"name": "int", "role": "intermediate", "organization": "Bulk CA"}),
    ];
    let mut edges = vec![serde_json::json!({"issuer": "root", "subject": "int"})];
    let mut listeners = Vec::new();
    for i in 0..n {
        let host = bulk_host(i);
        nodes.push(serde_json::json!({"name": format!("b{i}"), "role": "leaf", "sans": [host]}));
        edges.push(serde_json::json!({"issuer": "int", "subject": format!("b{i}")}));
        listeners.push(serde_json::json!({
            "hosts": [host], "port": 443, "kind": "tls",
            "tls_rules": [{"action": "serve-chain", "chain": [format!("b{i}"), "int@root"]}],
        }));
    }
    serde_json::from_value(serde_json::json!({
        "scenario_id": format!("bulk-{n}"),
        "pki": {"nodes": nodes, "edges": edges},
        "listeners": listeners,
    }))
    .expect("bulk scenario is well formed")
}

pub fn bulk_host(i: usize) -> String {
    format!("b{i}.fixture.test")
}

/// Materializes and starts [`bulk_scenario`].
pub fn start_bulk(
    n: usize,
    seed: u64,
    clock: std::sync::Arc<dyn pkiscope_core::Clock>,
) -> Result<RunningScenario, scenario::ScenarioError> {
    let scenario = bulk_scenario(n);
    let spec = scenario.pki.as_ref().expect("bulk scenario has a PKI");
    let pki = generate_pki(spec, seed, clock.now()).map_err(|e| scenario::ScenarioError::Startup(e.to_string()))?;
    start_scenario(&scenario, Some(&pki), clock)
}
