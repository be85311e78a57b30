use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use pkiscope_core::clock::SystemClock;

fn pkiscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pkiscope"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_reports_skipped_lines_as_partial() {
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("top.csv");
    std::fs::write(&list, "1,Example.COM\n2,www.example.com\nnot a line\n3,other.org.\n").unwrap();
    let out = dir.path().join("targets.jsonl");
    let psl = pkiscope_fixtures::public_suffix_list_path();
    let o = pkiscope(&["ingest", s(&list), "--out", s(&out), "--psl", s(&psl)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let names: Vec<String> = text
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["name"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(names, ["example.com", "www.example.com", "other.org"]);

    let o = pkiscope(&["ingest", s(&list), "--format", "name-only"]);
    assert_eq!(code(&o), 2);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 0);
}

#[test]
fn configuration_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = pkiscope(&["run", "--plan", "/nonexistent/plan.json", "--out", s(dir.path())]);
    assert_eq!(code(&o), 3);

    let plan = dir.path().join("plan.json");
    std::fs::write(&plan, r#"{"plan_id": "p"}"#).unwrap();
    let o = pkiscope(&["run", "--plan", s(&plan), "--out", s(&dir.path().join("store"))]);
    assert_eq!(code(&o), 3);

    std::fs::write(dir.path().join("t.jsonl"), "").unwrap();
    std::fs::write(
        &plan,
        r#"{"plan_id": "p", "targets": "t.jsonl", "concurrency_width": 0}"#,
    )
    .unwrap();
    let o = pkiscope(&["run", "--plan", s(&plan), "--out", s(&dir.path().join("store"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    let o = pkiscope(&["report", "--store", s(dir.path()), "--kind", "no-such-report"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn run_resume_and_report() {
    let scenario = pkiscope_fixtures::start_named("campaign", 3, Arc::new(SystemClock)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let write_plan = |name: &str, targets: &str| {
        std::fs::write(dir.path().join(format!("{name}.jsonl")), targets).unwrap();
        let plan = serde_json::json!({
            "plan_id": name,
            "targets": format!("{name}.jsonl"),
            "resolver": scenario.dns_addr.to_string(),
            "retry_budget": 2,
            "concurrency_width": 2,
            "probe": {"timeout_ms": 2000},
            "dns": {"timeout_ms": 2000},
        });
        let p = dir.path().join(format!("{name}.json"));
        std::fs::write(&p, plan.to_string()).unwrap();
        p
    };

    let ok = write_plan(
        "ok",
        "{\"name\":\"missing.fixture.test\",\"rank\":1,\"source\":\"manual\"}\n",
    );
    let store = dir.path().join("ok-store");
    let o = pkiscope(&["run", "--plan", s(&ok), "--out", s(&store)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = pkiscope(&["run", "--plan", s(&ok), "--out", s(&store)]);
    assert_eq!(code(&o), 3, "a second run into the same store is refused");
    let o = pkiscope(&["resume", "--plan", s(&ok), "--out", s(&store)]);
    assert_eq!(code(&o), 0);

    let partial = write_plan(
        "partial",
        "{\"name\":\"missing.fixture.test\",\"rank\":1,\"source\":\"manual\"}\n{\"name\":\"refuse.fixture.test\",\"rank\":2,\"source\":\"manual\"}\n",
    );
    let store = dir.path().join("partial-store");
    let o = pkiscope(&["run", "--plan", s(&partial), "--out", s(&store)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = pkiscope(&["resume", "--plan", s(&partial), "--out", s(&store)]);
    assert_eq!(code(&o), 2);
    let o = pkiscope(&["resume", "--plan", s(&ok), "--out", s(&store)]);
    assert_eq!(code(&o), 3, "plan mismatch is a configuration error");

    let o = pkiscope(&["analyze", "--store", s(&store)]);
    assert_eq!(code(&o), 3, "no trust store configured");

    let reports = dir.path().join("reports");
    let o = pkiscope(&["report", "--store", s(&store), "--kind", "all", "--out", s(&reports)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let written = String::from_utf8(o.stdout).unwrap();
    assert_eq!(written.lines().count(), 10);
    for line in written.lines() {
        assert!(Path::new(line).is_file(), "{line}");
    }
    let caa: serde_json::Value =
        serde_json::from_slice(&std::fs::read(reports.join("report-caa-summary.json")).unwrap()).unwrap();
    assert_eq!(caa["targets"], 1);
}

#[test]
fn documented_plan_compiles() {
    use pkiscope_core::orchestrator::{compile_plan, PlanConfig};
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/plan.example.json");
    let cfg: PlanConfig = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let targets = pkiscope_core::targets::TargetList {
        entries: Vec::new(),
        provenance: pkiscope_core::targets::Provenance {
            source: "doc".into(),
            retrieved_at: chrono::Utc::now(),
        },
    };
    let plan = compile_plan(&cfg, targets).unwrap();
    assert_eq!(plan.frequency.epochs(), 4);
    assert_eq!(plan.retry_budget, 3);
}
