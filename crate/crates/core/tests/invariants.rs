use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;

use pkiscope_core::dns::{encode_caa_rdata, parse_caa_wire, CaaParseStatus};
use pkiscope_core::encoding::Fingerprint;
use pkiscope_core::orchestrator::{LedgerTransition, MeasurementLedger, TargetStatus};
use pkiscope_core::report::{ca_market_share, chain_diff_table, default_rank_buckets, Fraction};
use pkiscope_core::storage::{Manifest, RecordEnvelope, RecordKind, Store, StoreOptions};
use pkiscope_core::targets::{esld_trim, normalize_name};
use pkiscope_core::x509::{ChainEvaluation, Verdict};

fn fp(n: u8) -> Fingerprint {
    Fingerprint::of(&[n])
}

fn eval(leaf: u8, path: Vec<u8>, presented: usize, valid: bool) -> ChainEvaluation {
    let chosen: Vec<Fingerprint> = path.iter().map(|n| fp(*n)).collect();
    let needed = chosen.len() as i64 - 1;
    ChainEvaluation {
        leaf: fp(leaf),
        presented: (0..presented).map(|i| fp(200 + i as u8)).collect(),
        paths_found: if valid { vec![chosen.clone()] } else { Vec::new() },
        shortest_length: valid.then_some(chosen.len()),
        length_diff: valid.then_some(presented as i64 - needed),
        chosen_path: valid.then_some(chosen),
        presented_length: presented,
        verdict: if valid { Verdict::Valid } else { Verdict::Incomplete },
        verdict_reasons: Vec::new(),
        evaluated_at: Utc.timestamp_opt(0, 0).unwrap(),
        name_matches: None,
    }
}

fn arb_eval() -> impl Strategy<Value = (String, ChainEvaluation)> {
    (
        0u8..8,
        0u8..30,
        10u8..14,
        prop::option::of(20u8..23),
        1usize..5,
        any::<bool>(),
    )
        .prop_map(|(target, leaf, anchor, int, presented, valid)| {
            let mut path = vec![leaf];
            path.extend(int);
            path.push(anchor);
            (
                format!("t{target}.test"),
                eval(leaf, path, presented, valid || leaf % 5 != 0),
            )
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Model {
    Pending,
    Running,
    Failed,
    Done,
}

fn status(code: u8) -> TargetStatus {
    match code % 4 {
        0 => TargetStatus::Pending,
        1 => TargetStatus::InProgress,
        2 => TargetStatus::Failed {
            class: "timeout".into(),
        },
        _ => TargetStatus::Succeeded,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ledger_accepts_exactly_the_legal_transitions(steps in prop::collection::vec((0u8..4, 0u32..4), 1..30)) {
        let mut ledger = MeasurementLedger::new("p");
        let mut model: Option<(Model, u32)> = None;
        for (code, attempt) in steps {
            let to = status(code);
            let t = LedgerTransition {
                target: "t".into(),
                epoch: 0,
                to: to.clone(),
                attempt,
                at: Utc.timestamp_opt(0, 0).unwrap(),
                unit: None,
            };
            let next = match (model, &to) {
                (None, TargetStatus::Pending) => Some((Model::Pending, 0)),
                (Some((Model::Pending, a)), TargetStatus::InProgress) if attempt == a + 1 => Some((Model::Running, attempt)),
                (Some((Model::Running, a)), TargetStatus::Failed { .. }) if attempt == a => Some((Model::Failed, a)),
                (Some((Model::Running, a)), TargetStatus::Succeeded) if attempt == a => Some((Model::Done, a)),
                (Some((Model::Failed, a)), TargetStatus::Pending) => Some((Model::Pending, a)),
                _ => None,
            };
            let applied = ledger.apply(&t).is_ok();
            prop_assert_eq!(applied, next.is_some(), "{:?} -> {:?}", model, to);
            if let Some(n) = next {
                model = Some(n);
            }
            let st = ledger.state(0, "t");
            prop_assert_eq!(st.map(|s| s.attempts), model.map(|m| m.1));
            prop_assert_eq!(st.is_some_and(|s| s.status.is_completed()), model.map(|m| m.0) == Some(Model::Done));
        }
    }

    #[test]
    fn chain_diff_rows_sum_to_one_hundred(
        evals in prop::collection::vec(arb_eval(), 0..60),
        ranks in prop::collection::vec(prop::option::of(1u64..2_000_000), 8),
    ) {
        let ranks: BTreeMap<String, u64> = ranks
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.map(|r| (format!("t{i}.test"), r)))
            .collect();
        let table = chain_diff_table(&evals, &ranks, &default_rank_buckets());
        let valid = evals.iter().filter(|(_, e)| e.length_diff.is_some()).count() as u64;
        prop_assert_eq!(table.rows.iter().map(|r| r.total).sum::<u64>(), valid);
        for row in &table.rows {
            let counted: u64 = row.cells.iter().map(|c| c.frequency.numerator).sum();
            prop_assert_eq!(counted, row.total);
            if row.total > 0 {
                let pct: f64 = row.cells.iter().filter_map(|c| c.frequency.percent()).sum();
                prop_assert!((pct - 100.0).abs() < 1e-9, "{} sums to {}", row.bucket, pct);
            }
        }
    }

    #[test]
    fn market_share_partitions_the_leaves(evals in prop::collection::vec(arb_eval(), 0..60), misc in 0.0f64..0.5) {
        let tree = ca_market_share(&evals, &BTreeMap::new(), misc);
        let leaves: BTreeSet<Fingerprint> = evals
            .iter()
            .filter(|(_, e)| e.verdict == Verdict::Valid)
            .map(|(_, e)| e.leaf)
            .collect();
        let pairs: BTreeSet<(String, Fingerprint)> = evals
            .iter()
            .filter(|(_, e)| e.verdict == Verdict::Valid)
            .map(|(t, e)| (t.clone(), e.leaf))
            .collect();
        prop_assert_eq!(tree.unique_leaves, leaves.len() as u64);
        prop_assert_eq!(tree.target_leaves, pairs.len() as u64);
        prop_assert_eq!(tree.anchors.iter().map(|a| a.unique_leaves.numerator).sum::<u64>(), tree.unique_leaves);
        prop_assert_eq!(tree.anchors.iter().map(|a| a.target_leaves.numerator).sum::<u64>(), tree.target_leaves);
        for a in &tree.anchors {
            prop_assert_eq!(a.intermediates.iter().map(|i| i.unique_leaves.numerator).sum::<u64>(), a.unique_leaves.numerator);
            prop_assert_eq!(a.intermediates.iter().map(|i| i.target_leaves.numerator).sum::<u64>(), a.target_leaves.numerator);
        }
    }

    #[test]
    fn fraction_value_is_the_ratio(n in 0u64..1000, d in 0u64..1000) {
        let f = Fraction::new(n, d);
        match d {
            0 => prop_assert_eq!(f.value, None),
            _ => prop_assert!((f.value.unwrap() - n as f64 / d as f64).abs() < 1e-12),
        }
    }

    #[test]
    fn caa_wire_round_trip(flags: u8, tag in "(issue|issuewild|iodef)", host in "[a-z]{1,10}\\.[a-z]{2,5}") {
        let value = if tag == "iodef" { format!("mailto:x@{host}") } else { host.clone() };
        let r = parse_caa_wire(&encode_caa_rdata(flags, &tag, value.as_bytes()));
        prop_assert_eq!(&r.tag, &tag);
        prop_assert_eq!(&r.value, &value);
        prop_assert_eq!(r.flags, flags);
        let want = if flags == 0 { CaaParseStatus::Ok } else { CaaParseStatus::ReservedBit };
        prop_assert_eq!(r.parse_status, want);
        if tag != "iodef" && flags == 0 {
            prop_assert_eq!(r.issuer_domain.as_deref(), Some(host.as_str()));
        }
    }

    #[test]
    fn name_normalization_is_idempotent(raw in "[A-Za-z0-9-]{1,12}(\\.[A-Za-z0-9-]{1,12}){0,3}\\.?") {
        if let Ok(n) = normalize_name(&raw) {
            prop_assert_eq!(normalize_name(&n).ok(), Some(n.clone()));
            prop_assert_eq!(n.to_ascii_lowercase(), n.clone());
            prop_assert!(!n.ends_with('.'));
        }
    }

    #[test]
    fn esld_is_a_suffix_of_the_name(labels in prop::collection::vec("[a-z]{1,6}", 1..5), tld in "(com|co\\.uk|test|org)") {
        let psl = pkiscope_fixtures::public_suffixes();
        let name = format!("{}.{tld}", labels.join("."));
        let t = esld_trim(&name, &psl);
        prop_assert!(name.ends_with(&t.name));
        prop_assert!(t.name.matches('.').count() > tld.matches('.').count());
        prop_assert_eq!(&esld_trim(&t.name, &psl).name, &t.name);
    }
}

#[test]
fn concurrent_appends_keep_every_record_whole() {
    let dir = tempfile::tempdir().unwrap();
    let now = Utc::now();
    let store = Arc::new(
        Store::create(
            dir.path(),
            Manifest::new("p", serde_json::json!({}), now),
            StoreOptions { fsync: false },
        )
        .unwrap(),
    );
    let threads: Vec<_> = (0..4)
        .map(|w| {
            let store = store.clone();
            std::thread::spawn(move || {
                for i in 0..250 {
                    let env = RecordEnvelope::new(
                        RecordKind::DnsSnapshot,
                        "p",
                        &format!("w{w}"),
                        0,
                        1,
                        now,
                        &serde_json::json!({ "i": i, "pad": "x".repeat(i % 97) }),
                    )
                    .unwrap();
                    store.append(&env).unwrap();
                }
            })
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    drop(store);
    let store = Store::open(dir.path(), StoreOptions::default(), now).unwrap();
    assert!(store.quarantined().is_empty());
    let records = store.read_records().unwrap();
    assert_eq!(records.len(), 1000);
    for w in 0..4 {
        let seq: Vec<u64> = records
            .iter()
            .filter(|r| r.target == format!("w{w}"))
            .map(|r| r.payload["i"].as_u64().unwrap())
            .collect();
        assert_eq!(seq, (0..250).collect::<Vec<_>>(), "writer {w} order");
    }
}
