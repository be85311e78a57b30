mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{fq, Lab};
use pkiscope_core::analysis::CertAnalysis;
use pkiscope_core::dns::RecordType;
use pkiscope_core::orchestrator::{
    committed_units, execute, resume, ArtifactKind, Checkpoint, ExecError, ExecuteOptions, FrequencySpec,
    RedirectRecord, TargetStatus, UnitKey, X509Aspect,
};
use pkiscope_core::report::{write_report, ReportInputs, ReportKind, ReportOptions};
use pkiscope_core::storage::RecordKind;
use pkiscope_core::x509::Verdict;

fn kill_at(target: &'static str, at: Checkpoint) -> ExecuteOptions {
    ExecuteOptions {
        kill: Some(Arc::new(move |t: &str, c| !(t == target && c == at))),
    }
}

fn records_by_unit(store: &pkiscope_core::storage::Store) -> BTreeMap<UnitKey, Vec<RecordKind>> {
    let mut out: BTreeMap<UnitKey, Vec<RecordKind>> = BTreeMap::new();
    for env in store.read_records().unwrap() {
        out.entry(UnitKey::of(&env)).or_default().push(env.kind);
    }
    out
}

#[test]
fn five_targets_collect_and_analyse() {
    let lab = Lab::campaign(false);
    let names = fq(&["t1", "t2", "t3", "t4", "t5"]);
    let plan = lab.plan("happy", &names, |c| {
        c.concurrency_width = 2;
        c.features.x509_aspects.insert(X509Aspect::X5);
    });
    let rt = lab.runtime(true);
    let store = lab.new_store("happy", &plan, &rt);
    let report = execute(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    assert!(!report.aborted);
    assert_eq!(report.executed.len(), 5);
    for n in &names {
        let s = report.ledger.state(0, n).unwrap();
        assert_eq!(s.status, TargetStatus::Succeeded, "{n}");
        assert_eq!(s.attempts, 1);
        assert!(s.unit.as_ref().unwrap().within_window);
    }
    let units = records_by_unit(&store);
    assert_eq!(units.len(), 5);
    for kinds in units.values() {
        assert_eq!(kinds[0], RecordKind::DnsSnapshot);
        assert!(kinds.contains(&RecordKind::RedirectChain));
        assert!(kinds.contains(&RecordKind::TlsObservation));
        assert!(kinds.contains(&RecordKind::ChainEvaluation));
    }
    // 5 leaves, the intermediate and the root
    assert_eq!(store.cert_fingerprints().unwrap().len(), 7);
    assert!(store.manifest().finished_at.is_some());
    assert_eq!(store.manifest().trust_store.unwrap().name, "fixture-store");

    let inputs = ReportInputs::load(&store).unwrap();
    let analyses: Vec<&CertAnalysis> = inputs.analyses.iter().map(|(_, a)| a).collect();
    assert_eq!(analyses.len(), 5);
    for a in &analyses {
        let e = a.evaluation.as_ref().unwrap();
        assert_eq!(e.verdict, Verdict::Valid);
        assert_eq!(e.length_diff, Some(0));
        assert_eq!(e.name_matches, Some(true));
    }
    let caa: BTreeMap<&str, _> = analyses
        .iter()
        .map(|a| (a.target.as_str(), a.caa.as_ref().map(|v| v.result)))
        .collect();
    use pkiscope_core::x509::CaaResult;
    assert_eq!(caa["t1.fixture.test"], Some(CaaResult::Match));
    assert_eq!(caa["t2.fixture.test"], Some(CaaResult::Mismatch));
    assert_eq!(caa["t4.fixture.test"], Some(CaaResult::NoCaa));

    let out = lab.dir.path().join("reports");
    let (_, json) = write_report(&store, ReportKind::CaaSummary, &out, &ReportOptions::default()).unwrap();
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
    assert_eq!(s["with_caa"]["numerator"], 3);
    assert_eq!(s["conform"]["numerator"], 2);
    assert_eq!(s["conform"]["denominator"], 5);
    assert_eq!(s["mismatch"]["numerator"], 1);
    assert_eq!(s["mismatch"]["denominator"], 2);
    assert_eq!(s["unparsable_count"], 1);

    let (_, json) = write_report(&store, ReportKind::MarketShare, &out, &ReportOptions::default()).unwrap();
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
    assert_eq!(m["unique_leaves"], 5);
    assert_eq!(m["anchors"].as_array().unwrap().len(), 1);
    assert_eq!(m["anchors"][0]["intermediates"][0]["label"], "Fixture CA / int");

    let (_, json) = write_report(&store, ReportKind::RedirectDist, &out, &ReportOptions::default()).unwrap();
    let d: serde_json::Value = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
    assert_eq!(d["cells"], serde_json::json!([{"key": [1, 1], "count": 5}]));
}

#[test]
fn slow_target_is_flagged_temporal_on_a_manual_clock() {
    let lab = Lab::campaign(true);
    let plan = lab.plan("temporal", &fq(&["t1", "slow"]), |_| {});
    let rt = lab.runtime(false);
    let store = lab.new_store("temporal", &plan, &rt);
    let report = execute(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    let fast = report.ledger.state(0, "t1.fixture.test").unwrap();
    assert_eq!(fast.status, TargetStatus::Succeeded);
    let slow = report.ledger.state(0, "slow.fixture.test").unwrap();
    assert_eq!(
        slow.status,
        TargetStatus::ArtifactFlagged {
            kind: ArtifactKind::Temporal
        }
    );
    let unit = slow.unit.as_ref().unwrap();
    assert!(!unit.within_window);
    assert!(unit.skew_ms >= 60_000, "{}", unit.skew_ms);
    assert_eq!(unit.artifacts[0], ArtifactKind::Temporal);
    // flagged units are complete; resume leaves them alone
    let again = resume(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    assert!(again.executed.is_empty());
}

#[test]
fn refusing_target_fails_after_the_budget() {
    let lab = Lab::campaign(false);
    let plan = lab.plan("refuse", &fq(&["refuse"]), |c| c.retry_budget = 3);
    let rt = lab.runtime(false);
    let store = lab.new_store("refuse", &plan, &rt);
    let report = execute(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    let s = report.ledger.state(0, "refuse.fixture.test").unwrap();
    assert_eq!(
        s.status,
        TargetStatus::Failed {
            class: "connect".into()
        }
    );
    assert_eq!(s.attempts, 3);
    assert_eq!(report.executed.len(), 3);
    assert_eq!(report.failures().len(), 1);
    // budget exhausted: resume executes nothing
    let again = resume(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    assert!(again.executed.is_empty());
    assert_eq!(again.ledger.state(0, "refuse.fixture.test").unwrap().status, s.status);
}

#[test]
fn unresolved_names_are_results() {
    let lab = Lab::campaign(false);
    let plan = lab.plan("nx", &fq(&["missing"]), |_| {});
    let rt = lab.runtime(false);
    let store = lab.new_store("nx", &plan, &rt);
    let report = execute(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    assert_eq!(
        report.ledger.state(0, "missing.fixture.test").unwrap().status,
        TargetStatus::Succeeded
    );
    let kinds: Vec<RecordKind> = store.read_records().unwrap().iter().map(|e| e.kind).collect();
    assert_eq!(kinds, vec![RecordKind::DnsSnapshot]);
}

#[test]
fn caa_follows_the_redirect_to_its_final_host() {
    let lab = Lab::campaign(false);
    let plan = lab.plan("moved", &fq(&["move", "t1"]), |c| {
        c.features.x509_aspects.insert(X509Aspect::X5);
    });
    let rt = lab.runtime(false);
    let store = lab.new_store("moved", &plan, &rt);
    execute(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    let redirects: BTreeMap<String, RedirectRecord> = store
        .read_records()
        .unwrap()
        .into_iter()
        .filter(|e| e.kind == RecordKind::RedirectChain)
        .map(|e| (e.target.clone(), e.payload_as().unwrap()))
        .collect();
    let moved = redirects["move.fixture.test"]
        .final_host_dns
        .as_ref()
        .expect("final host queried");
    assert_eq!(moved.target, "t1.fixture.test");
    let caa = &moved.records[&RecordType::Caa];
    assert_eq!(caa.len(), 1);
    assert!(caa[0].text.contains("fixture-ca.test"), "{caa:?}");
    // same-host redirects need no second lookup
    assert!(redirects["t1.fixture.test"].final_host_dns.is_none());
}

#[test]
fn kill_then_resume_at_every_checkpoint() {
    for at in [
        Checkpoint::Started,
        Checkpoint::Collected,
        Checkpoint::Stored,
        Checkpoint::Committed,
    ] {
        let lab = Lab::campaign(false);
        let names = fq(&["t1", "t2", "t3", "t4", "t5"]);
        let plan = lab.plan("kill", &names, |_| {});
        let rt = lab.runtime(true);
        let store = lab.new_store("kill", &plan, &rt);
        let first = execute(&plan, &store, &rt, &kill_at("t3.fixture.test", at)).unwrap();
        assert!(first.aborted);
        assert!(store.manifest().finished_at.is_none());
        let done: Vec<String> = first.executed.iter().map(|k| k.target.clone()).collect();
        assert_eq!(done, names[..3].to_vec(), "{at:?}");
        drop(store);

        let store = lab.reopen("kill");
        let second = resume(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
        let rerun: Vec<String> = second.executed.iter().map(|k| k.target.clone()).collect();
        let expected: Vec<String> = if at == Checkpoint::Committed {
            names[3..].to_vec()
        } else {
            names[2..].to_vec()
        };
        assert_eq!(rerun, expected, "{at:?}");
        let committed = committed_units(&second.ledger);
        assert_eq!(committed.len(), 5);
        for k in &committed {
            let expected_attempt = if k.target == "t3.fixture.test" && at != Checkpoint::Committed {
                2
            } else {
                1
            };
            assert_eq!(k.attempt, expected_attempt, "{at:?} {}", k.target);
        }
        // orphaned records of the interrupted attempt stay out of reports
        let inputs = ReportInputs::load(&store).unwrap();
        assert_eq!(inputs.dns.len(), 5);
        assert_eq!(inputs.analyses.len(), 5);
        assert_eq!(store.manifest().resumed_at.len(), 1);
        assert!(store.manifest().finished_at.is_some());
    }
}

#[test]
fn resume_of_a_finished_run_is_a_no_op() {
    let lab = Lab::campaign(false);
    let plan = lab.plan("noop", &fq(&["t1", "t2"]), |_| {});
    let rt = lab.runtime(false);
    let store = lab.new_store("noop", &plan, &rt);
    execute(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    let before = store.read_records().unwrap().len();
    let again = resume(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    assert!(again.executed.is_empty());
    assert_eq!(store.read_records().unwrap().len(), before);
}

#[test]
fn resume_rejects_another_plan() {
    let lab = Lab::campaign(false);
    let plan = lab.plan("mine", &fq(&["t1"]), |_| {});
    let other = lab.plan("theirs", &fq(&["t1"]), |_| {});
    let rt = lab.runtime(false);
    let store = lab.new_store("mine", &plan, &rt);
    match resume(&other, &store, &rt, &ExecuteOptions::default()) {
        Err(ExecError::PlanMismatch { expected, found }) => {
            assert_eq!(expected, "theirs");
            assert_eq!(found, "mine");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn longitudinal_epochs_follow_the_schedule() {
    let lab = Lab::campaign(true);
    let plan = lab.plan("long", &fq(&["t1", "t2"]), |c| {
        c.frequency = FrequencySpec::Longitudinal {
            interval: Duration::from_secs(3600),
            repetitions: 3,
        }
    });
    let rt = lab.runtime(false);
    let store = lab.new_store("long", &plan, &rt);
    let start = store.manifest().started_at;
    let report = execute(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    assert_eq!(report.executed.len(), 6);
    for epoch in 0..3u32 {
        for t in ["t1.fixture.test", "t2.fixture.test"] {
            let s = report.ledger.state(epoch, t).unwrap();
            assert_eq!(s.status, TargetStatus::Succeeded);
            let u = s.unit.as_ref().unwrap();
            assert_eq!(u.epoch_scheduled_at, start + chrono::TimeDelta::hours(epoch as i64));
            assert!(u.unit_start >= u.epoch_scheduled_at);
        }
    }
}

#[test]
fn kill_in_the_second_epoch_resumes_there() {
    let lab = Lab::campaign(true);
    let plan = lab.plan("long-kill", &fq(&["t1", "t2"]), |c| {
        c.frequency = FrequencySpec::Longitudinal {
            interval: Duration::from_secs(600),
            repetitions: 2,
        }
    });
    let rt = lab.runtime(false);
    let store = lab.new_store("long-kill", &plan, &rt);
    let seen = Arc::new(AtomicUsize::new(0));
    let s2 = seen.clone();
    let opts = ExecuteOptions {
        kill: Some(Arc::new(move |_: &str, c| {
            c != Checkpoint::Started || s2.fetch_add(1, Ordering::SeqCst) != 3
        })),
    };
    let first = execute(&plan, &store, &rt, &opts).unwrap();
    assert!(first.aborted);
    let second = resume(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    let rerun: Vec<(u32, String)> = second.executed.iter().map(|k| (k.epoch, k.target.clone())).collect();
    assert_eq!(rerun, vec![(1, "t2.fixture.test".to_string())]);
    assert_eq!(committed_units(&second.ledger).len(), 4);
}

#[test]
fn reports_are_byte_identical_across_renders() {
    let lab = Lab::campaign(false);
    let plan = lab.plan("det", &fq(&["t1", "t2", "t3"]), |c| {
        c.concurrency_width = 3;
        c.features.x509_aspects.insert(X509Aspect::X5);
    });
    let rt = lab.runtime(true);
    let store = lab.new_store("det", &plan, &rt);
    execute(&plan, &store, &rt, &ExecuteOptions::default()).unwrap();
    for kind in ReportKind::ALL {
        let a = write_report(&store, kind, &lab.dir.path().join("a"), &ReportOptions::default()).unwrap();
        let b = write_report(&store, kind, &lab.dir.path().join("b"), &ReportOptions::default()).unwrap();
        assert_eq!(std::fs::read(&a.0).unwrap(), std::fs::read(&b.0).unwrap(), "{kind}");
        assert_eq!(std::fs::read(&a.1).unwrap(), std::fs::read(&b.1).unwrap(), "{kind}");
    }
}
