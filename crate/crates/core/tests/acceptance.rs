//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeDelta, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fq, Lab};
use pkiscope_core::clock::{Clock, ManualClock, SystemClock};
use pkiscope_core::dns::{encode_caa_rdata, parse_caa_text, parse_caa_wire, CaaParseStatus, CaaRecord, TlsaRecord};
use pkiscope_core::encoding::Fingerprint;
use pkiscope_core::orchestrator::{
    committed_units, execute, resume, ArtifactKind, Checkpoint, ExecuteOptions, SniMode, TargetStatus, TlsProbe,
};
use pkiscope_core::redirect::{chain_stats, resolve_chain, Mechanism, RedirectConfig, Termination};
use pkiscope_core::report::{chain_diff_table, default_rank_buckets, render, ReportInputs, ReportKind, ReportOptions};
use pkiscope_core::storage::RecordKind;
use pkiscope_core::targets::load_public_suffixes;
use pkiscope_core::tls::{run_stateful_plan, Outcome, PlanMode, ProbeConfig, StatefulPlan, TlsVersion};
use pkiscope_core::x509::{
    association_data, build_chains, match_caa, match_tlsa, parse_certificate, san_statistics, san_statistics_of,
    CaaResult, CertificateRecord, ChainEvaluation, IdentifierMap, MatchedAgainst, StoreLabel, TrustStore, Verdict,
    SAN_CAP,
};
use pkiscope_fixtures::pki::{generate_pki, random_spec, simple_chain_spec, Edge, NodeSpec, Role};
use pkiscope_fixtures::{load_scenario, start_named, start_scenario, MaterializedPki, RunningScenario};

type Outcome_ = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome_);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const T: Duration = Duration::from_secs(5);

fn now() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2026-03-01T00:00:00Z")
        .unwrap()
        .with_timezone(&Utc)
}

fn record(pki: &MaterializedPki, id: &str) -> CertificateRecord {
    parse_certificate(&pki.der(id).unwrap()).unwrap()
}

fn trust(pki: &MaterializedPki, pool: bool) -> TrustStore {
    let parse = |c: &&pkiscope_fixtures::pki::MaterializedCert| parse_certificate(&c.der).unwrap();
    TrustStore::new(
        pki.anchors().iter().map(parse).collect(),
        if pool {
            pki.intermediates().iter().map(parse).collect()
        } else {
            Vec::new()
        },
        StoreLabel {
            name: "acceptance".into(),
            snapshot_date: None,
        },
    )
    .unwrap()
}

fn fps(pki: &MaterializedPki, ids: &[String]) -> Vec<Fingerprint> {
    ids.iter().map(|id| Fingerprint::of(&pki.der(id).unwrap())).collect()
}

// 1
fn shortest_path_oracle() -> Outcome_ {
    let started = Instant::now();
    let (mut graphs, mut leaves, mut with_paths) = (0, 0, 0);
    for seed in 0..60u64 {
        let pki = generate_pki(&random_spec(seed), seed, now()).map_err(|e| e.to_string())?;
        let store = trust(&pki, true);
        graphs += 1;
        for leaf in pki.leaves() {
            leaves += 1;
            let l = record(&pki, &leaf.id);
            let e = build_chains(&l, std::slice::from_ref(&l), &store, now() + TimeDelta::hours(1));
            let oracle = &pki.oracle[&leaf.id];
            let want = oracle.shortest.as_ref().map(|s| fps(&pki, s));
            ensure(e.chosen_path == want, || {
                format!("seed {seed} leaf {}: chosen path differs", leaf.id)
            })?;
            with_paths += usize::from(want.is_some());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{graphs} graphs, {leaves} leaves ({with_paths} anchored), {secs:.1}s"
    ))
}

// 2
fn chain_diff_metric() -> Outcome_ {
    let at = now() + TimeDelta::hours(1);
    let mut spec = simple_chain_spec(&["a.fixture.test"]);
    spec.nodes.push(NodeSpec::new("old", Role::Root));
    spec.nodes[0].role = Role::CrossSignedRoot;
    spec.edges.push(Edge {
        issuer: "old".into(),
        subject: "root".into(),
    });
    let pki = generate_pki(&spec, 21, now()).map_err(|e| e.to_string())?;
    let leaf = record(&pki, "leaf");
    let int = record(&pki, "int@root");
    let root = record(&pki, "root@root");
    let cross = record(&pki, "root@old");
    let pooled = trust(&pki, true);
    let bare = trust(&pki, false);
    let variants: BTreeMap<i64, ChainEvaluation> = [
        (-1, build_chains(&leaf, std::slice::from_ref(&leaf), &pooled, at)),
        (0, build_chains(&leaf, &[leaf.clone(), int.clone()], &bare, at)),
        (
            1,
            build_chains(&leaf, &[leaf.clone(), int.clone(), root.clone()], &bare, at),
        ),
        (
            2,
            build_chains(&leaf, &[leaf.clone(), int.clone(), cross, root], &bare, at),
        ),
    ]
    .into_iter()
    .collect();
    for (d, e) in &variants {
        ensure(e.length_diff == Some(*d) && e.verdict == Verdict::Valid, || {
            format!("engineered diff {d} evaluated to {:?}", e.length_diff)
        })?;
    }
    // per bucket: counts of diffs -1, 0, +1, +2
    let design: [(u64, [u64; 4]); 4] = [
        (5, [1, 6, 2, 1]),
        (150, [0, 7, 0, 3]),
        (5_000, [3, 3, 3, 3]),
        (700_000, [2, 0, 1, 0]),
    ];
    let mut evals = Vec::new();
    let mut ranks = BTreeMap::new();
    for (rank, counts) in design {
        for (i, n) in counts.iter().enumerate() {
            for k in 0..*n {
                let t = format!("r{rank}-d{i}-{k}.test");
                ranks.insert(t.clone(), rank);
                evals.push((t, variants[&(i as i64 - 1)].clone()));
            }
        }
    }
    evals.push(("unranked.test".into(), variants[&0].clone()));
    let table = chain_diff_table(&evals, &ranks, &default_rank_buckets());
    let buckets = default_rank_buckets();
    for (rank, counts) in design {
        let label = buckets.iter().find(|b| b.contains(rank)).unwrap().label();
        let row = table
            .rows
            .iter()
            .find(|r| r.bucket == label)
            .ok_or(format!("row {label} missing"))?;
        let total: u64 = counts.iter().sum();
        let mut sum = 0.0;
        for (i, n) in counts.iter().enumerate() {
            let want = *n as f64 * 100.0 / total as f64;
            let got = row
                .cells
                .iter()
                .find(|c| c.diff == i as i64 - 1)
                .and_then(|c| c.frequency.percent())
                .unwrap_or(0.0);
            ensure((want - got).abs() <= 0.1, || {
                format!("{label} diff {}: {got} vs {want}", i as i64 - 1)
            })?;
            sum += got;
        }
        ensure((sum - 100.0).abs() <= 0.1, || format!("{label} sums to {sum}"))?;
    }
    let unranked = table.rows.last().unwrap();
    ensure(unranked.bucket == "unranked" && unranked.total == 1, || {
        "unranked row".into()
    })?;
    let empty: Vec<_> = table
        .rows
        .iter()
        .filter(|r| r.total == 0)
        .map(|r| r.bucket.clone())
        .collect();
    ensure(empty.len() == 2, || format!("empty rows {empty:?}"))?;
    Ok(format!("{} rows, diffs {:?}", table.rows.len(), table.diffs))
}

fn stateful(clock: Arc<dyn Clock>) -> RunningScenario {
    start_named("stateful", 17, clock).unwrap()
}

// 3
fn alert_40_capture() -> Outcome_ {
    for run in 0..20 {
        let s = stateful(Arc::new(SystemClock));
        let lab = Lab::with(s, Arc::new(SystemClock));
        let plan = lab.plan("reject", &fq(&["reject"]), |c| {
            c.probe.sni = SniMode::Both;
            c.redirect.enabled = false;
        });
        let rt = lab.runtime(false);
        let store = lab.new_store("reject", &plan, &rt);
        let report = execute(&plan, &store, &rt, &ExecuteOptions::default()).map_err(|e| e.to_string())?;
        let status = &report.ledger.state(0, "reject.fixture.test").unwrap().status;
        ensure(
            *status
                == TargetStatus::ArtifactFlagged {
                    kind: ArtifactKind::NoSniTermination,
                },
            || format!("run {run}: status {status:?}"),
        )?;
        let probes: Vec<TlsProbe> = store
            .read_records()
            .unwrap()
            .into_iter()
            .filter(|e| e.kind == RecordKind::TlsObservation)
            .map(|e| e.payload_as().unwrap())
            .collect();
        let outcomes: Vec<(&str, &Outcome)> = probes
            .iter()
            .map(|p| (p.label.as_str(), &p.observation.outcome))
            .collect();
        ensure(
            outcomes == vec![("sni", &Outcome::Established), ("no-sni", &Outcome::Alert { code: 40 })],
            || format!("run {run}: {outcomes:?}"),
        )?;
    }
    Ok("20/20 runs flagged no-sni-termination with alert(40)".into())
}

// 4
fn stateful_ocsp_caching() -> Outcome_ {
    for run in 0..20 {
        let s = stateful(Arc::new(SystemClock));
        let ep = s.endpoint("staple.fixture.test", 443).unwrap();
        let base = ProbeConfig {
            request_stapled_ocsp: true,
            ..ProbeConfig::with_sni("staple.fixture.test")
        };
        let plan = StatefulPlan::new(PlanMode::RepeatSame { count: 2 });
        let out = run_stateful_plan(&s.net(), &[ep], &plan, &base, T).map_err(|e| e.to_string())?;
        let staples: Vec<bool> = out.observations.iter().map(|o| o.stapled_ocsp.is_some()).collect();
        ensure(staples == vec![false, true], || format!("run {run}: {staples:?}"))?;
    }
    Ok("20/20 runs observed (absent, present)".into())
}

// 5
fn cross_host_ticket_replay() -> Outcome_ {
    let mut runs = 0;
    for (a, b, want) in [("ta", "tb", true), ("tc", "td", false)] {
        for v in [TlsVersion::Tls13, TlsVersion::Tls12] {
            for _ in 0..5 {
                let s = stateful(Arc::new(SystemClock));
                let eps = vec![
                    s.endpoint(&format!("{a}.fixture.test"), 443).unwrap(),
                    s.endpoint(&format!("{b}.fixture.test"), 443).unwrap(),
                ];
                let base = ProbeConfig {
                    versions_offered: [v].into_iter().collect(),
                    ..ProbeConfig::default()
                };
                let out = run_stateful_plan(&s.net(), &eps, &StatefulPlan::new(PlanMode::CrossHostSame), &base, T)
                    .map_err(|e| e.to_string())?;
                let resumed: Vec<bool> = out.observations.iter().map(|o| o.resumed).collect();
                ensure(resumed == vec![false, want], || format!("{a}->{b} {v:?}: {resumed:?}"))?;
                let server: Vec<bool> = s
                    .wait_for_log(2, T)
                    .iter()
                    .map(|r| r.resumed.unwrap_or(false))
                    .collect();
                ensure(server == resumed, || format!("{a}->{b} {v:?}: server saw {server:?}"))?;
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs: shared cache resumed, isolated cache did not"))
}

// 6
fn resumption_exactness() -> Outcome_ {
    let lab = Lab::bulk(100, 6);
    let names: Vec<String> = (0..100).map(pkiscope_fixtures::bulk_host).collect();
    let plan = lab.plan("bulk", &names, |c| {
        c.redirect.enabled = false;
        c.concurrency_width = 4;
    });
    let rt = lab.runtime(false);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let checkpoints = [
        Checkpoint::Started,
        Checkpoint::Collected,
        Checkpoint::Stored,
        Checkpoint::Committed,
    ];
    let mut details = Vec::new();
    for round in 0..10 {
        let kill_unit = rng.random_range(0..100usize);
        let kill_cp = checkpoints[rng.random_range(0..checkpoints.len())];
        let dir = format!("bulk-{round}");
        let store = lab.new_store(&dir, &plan, &rt);
        let seen = Arc::new(AtomicUsize::new(0));
        let s2 = seen.clone();
        let opts = ExecuteOptions {
            kill: Some(Arc::new(move |_: &str, c| {
                if c != kill_cp {
                    return true;
                }
                s2.fetch_add(1, Ordering::SeqCst) != kill_unit
            })),
        };
        let first = execute(&plan, &store, &rt, &opts).map_err(|e| e.to_string())?;
        ensure(first.aborted, || format!("round {round}: run was not killed"))?;
        drop(store);
        let store = lab.reopen(&dir);
        let ledger = store.load_ledger().map_err(|e| e.to_string())?;
        let done: BTreeSet<String> = names
            .iter()
            .filter(|n| ledger.state(0, n).is_some_and(|s| s.status.is_completed()))
            .cloned()
            .collect();
        let expected: BTreeSet<String> = names.iter().filter(|n| !done.contains(*n)).cloned().collect();
        let second = resume(&plan, &store, &rt, &ExecuteOptions::default()).map_err(|e| e.to_string())?;
        let executed: Vec<String> = second.executed.iter().map(|k| k.target.clone()).collect();
        let executed_set: BTreeSet<String> = executed.iter().cloned().collect();
        ensure(executed.len() == executed_set.len(), || {
            format!("round {round}: a target ran twice")
        })?;
        ensure(executed_set == expected, || {
            format!(
                "round {round}: executed {} targets, expected {}",
                executed_set.len(),
                expected.len()
            )
        })?;
        let mut succeeded: BTreeMap<String, usize> = BTreeMap::new();
        for env in store.read_ledger().map_err(|e| e.to_string())? {
            let t: pkiscope_core::orchestrator::LedgerTransition = env.payload_as().map_err(|e| e.to_string())?;
            if t.to.is_completed() {
                *succeeded.entry(t.target).or_default() += 1;
            }
        }
        ensure(succeeded.len() == 100 && succeeded.values().all(|n| *n == 1), || {
            format!(
                "round {round}: completed transitions per target {:?}",
                succeeded.values().max()
            )
        })?;
        let committed = committed_units(&second.ledger);
        let inputs = ReportInputs::load(&store).map_err(|e| e.to_string())?;
        ensure(committed.len() == 100 && inputs.dns.len() == 100, || {
            format!(
                "round {round}: {} committed, {} dns records",
                committed.len(),
                inputs.dns.len()
            )
        })?;
        details.push(format!("{kill_unit}@{kill_cp:?}:{}", expected.len()));
    }
    Ok(format!("10 kill points [{}]", details.join(" ")))
}

// 7
fn temporal_integrity() -> Outcome_ {
    let mut out = Vec::new();
    for delta in [Duration::from_secs(5), Duration::from_secs(30)] {
        let mut scenario = load_scenario("campaign").map_err(|e| e.to_string())?;
        for l in scenario
            .listeners
            .iter_mut()
            .filter(|l| l.alias() == "slow.fixture.test")
        {
            for r in &mut l.tls_rules {
                r.delay_ms = 2 * delta.as_millis() as u64;
            }
        }
        let clock: Arc<dyn Clock> = Arc::new(ManualClock::new(Utc::now()));
        let pki = generate_pki(scenario.pki.as_ref().unwrap(), 11, clock.now()).map_err(|e| e.to_string())?;
        let s = start_scenario(&scenario, Some(&pki), clock.clone()).map_err(|e| e.to_string())?;
        let lab = Lab::with(s, clock);
        let names = fq(&["t1", "t2", "slow", "t3", "t4", "t5"]);
        let plan = lab.plan("temporal", &names, |c| c.temporal_window = delta);
        let rt = lab.runtime(false);
        let store = lab.new_store("temporal", &plan, &rt);
        let report = execute(&plan, &store, &rt, &ExecuteOptions::default()).map_err(|e| e.to_string())?;
        let outside: Vec<String> = names
            .iter()
            .filter(|n| {
                report
                    .ledger
                    .state(0, n)
                    .and_then(|s| s.unit.as_ref())
                    .is_some_and(|u| !u.within_window)
            })
            .cloned()
            .collect();
        ensure(outside == vec!["slow.fixture.test".to_string()], || {
            format!("delta {delta:?}: outside {outside:?}")
        })?;
        out.push(format!("{}s", delta.as_secs()));
    }
    Ok(format!(
        "only the stalled unit left the window for delta in {{{}}}",
        out.join(", ")
    ))
}

// 8
fn caa_taxonomy() -> Outcome_ {
    use CaaParseStatus::{ReservedBit, Unparsable};
    const OK: CaaParseStatus = CaaParseStatus::Ok;
    let corpus: Vec<(CaaRecord, CaaParseStatus)> = vec![
        (parse_caa_text(r#"0 issue "ca-a.example""#), OK),
        (parse_caa_text(r#"0 issuewild "ca-a.example""#), OK),
        (parse_caa_text(r#"0 iodef "mailto:security@site.example""#), OK),
        (parse_caa_text(r#"0 issue ";""#), OK),
        (parse_caa_wire(&encode_caa_rdata(0, "issue", b"ca-b.example")), OK),
        (parse_caa_text(r#"128 issue "ca-a.example""#), ReservedBit),
        (parse_caa_text(r#"1 issue "ca-a.example""#), ReservedBit),
        (
            parse_caa_wire(&encode_caa_rdata(64, "issuewild", b"ca-a.example")),
            ReservedBit,
        ),
        (parse_caa_text(r#"0 issue "security@site.example""#), Unparsable),
        (parse_caa_text(r#"0 issue ca-a.example""#), Unparsable),
        (parse_caa_text(r#"0 is*sue "ca-a.example""#), Unparsable),
        (parse_caa_wire(&[0, 9, b'i', b's']), Unparsable),
    ];
    for (i, (r, want)) in corpus.iter().enumerate() {
        ensure(r.parse_status == *want, || {
            format!("record {i}: {:?} classified {:?}", r.raw, r.parse_status)
        })?;
    }
    let mut spec = simple_chain_spec(&["site.example"]);
    spec.nodes[1].organization = Some("Operator A".into());
    let pki = generate_pki(&spec, 8, now()).map_err(|e| e.to_string())?;
    let issuer = record(&pki, "int");
    let map =
        IdentifierMap::from_csv("ca-a.example,Operator A\nca-b.example,Operator B\n").map_err(|e| e.to_string())?;
    let pick = |idx: &[usize]| idx.iter().map(|i| corpus[*i].0.clone()).collect::<Vec<_>>();
    let sets: Vec<(Vec<usize>, CaaResult)> = vec![
        (vec![0], CaaResult::Match),
        (vec![4], CaaResult::Mismatch),
        (vec![], CaaResult::NoCaa),
        (vec![5, 8, 9, 11], CaaResult::UnparsableOnly),
        (vec![3], CaaResult::Mismatch),
        (vec![2], CaaResult::Match),
        (vec![4, 0, 8], CaaResult::Match),
        (vec![4, 6], CaaResult::Mismatch),
        (vec![1], CaaResult::Match),
    ];
    for (idx, want) in &sets {
        let got = match_caa(&pick(idx), &issuer, &map).result;
        ensure(got == *want, || format!("set {idx:?}: {got:?}, expected {want:?}"))?;
    }
    Ok(format!(
        "{} records classified, {} sets matched",
        corpus.len(),
        sets.len()
    ))
}

// 9
fn dane_matrix() -> Outcome_ {
    let pki = generate_pki(&simple_chain_spec(&["a.fixture.test"]), 13, now()).map_err(|e| e.to_string())?;
    let store = trust(&pki, false);
    let leaf = record(&pki, "leaf");
    let presented = vec![leaf.clone(), record(&pki, "int@root")];
    let eval = build_chains(&leaf, &presented, &store, now() + TimeDelta::hours(1));
    ensure(eval.verdict == Verdict::Valid, || "chain does not validate".into())?;
    let mut certs: BTreeMap<Fingerprint, CertificateRecord> =
        presented.iter().map(|c| (c.fingerprint, c.clone())).collect();
    let root = record(&pki, "root@root");
    certs.insert(root.fingerprint, root);
    let mut combos = 0;
    for usage in 0..=3u8 {
        let (cert_id, against) = match usage {
            0 => ("int@root", MatchedAgainst::ChainMember),
            2 => ("root@root", MatchedAgainst::Anchor),
            _ => ("leaf@int", MatchedAgainst::Leaf),
        };
        let cert = record(&pki, cert_id);
        for selector in 0..=1u8 {
            for matching_type in 0..=2u8 {
                let oracle = pki
                    .tlsa_association(cert_id, selector, matching_type)
                    .map_err(|e| e.to_string())?;
                ensure(
                    association_data(&cert, selector, matching_type).as_ref() == Some(&oracle),
                    || format!("association data differs for {usage} {selector} {matching_type}"),
                )?;
                let mut tlsa = TlsaRecord {
                    usage,
                    selector,
                    matching_type,
                    association: oracle,
                };
                let v = match_tlsa(&tlsa, &eval, &certs);
                ensure(v.matched && v.matched_against == Some(against), || {
                    format!("{usage} {selector} {matching_type}: {v:?}")
                })?;
                tlsa.association[0] ^= 0xff;
                ensure(!match_tlsa(&tlsa, &eval, &certs).matched, || {
                    format!("{usage} {selector} {matching_type}: corrupted association matched")
                })?;
                combos += 1;
            }
        }
    }
    Ok(format!("{combos} combinations agree with the independent digests"))
}

// 10
fn san_statistics_oracle() -> Outcome_ {
    let psl = load_public_suffixes("com\norg\nuk\nco.uk\ntest\n", None).map_err(|e| e.to_string())?;
    let suffixes = ["com", "org", "co.uk", "test"];
    let naive = |sans: &[String]| {
        let total = sans.len();
        let wildcard = sans.iter().filter(|s| s.starts_with("*.")).count();
        let mut eslds = BTreeSet::new();
        for s in sans {
            let base = s.strip_prefix("*.").unwrap_or(s);
            let suffix = suffixes
                .iter()
                .filter(|x| base.ends_with(&format!(".{x}")))
                .max_by_key(|x| x.len())
                .unwrap();
            let head = &base[..base.len() - suffix.len() - 1];
            let label = head.rsplit('.').next().unwrap();
            eslds.insert(format!("{label}.{suffix}"));
        }
        (
            total.min(SAN_CAP),
            wildcard.min(SAN_CAP),
            eslds.len().min(SAN_CAP),
            total == 1,
            total,
            wildcard,
            eslds.len(),
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut capped = 0;
    let mut sets = Vec::new();
    for _ in 0..1000 {
        let n = if rng.random_bool(0.1) {
            rng.random_range(90..160)
        } else {
            rng.random_range(1..12)
        };
        let domains = rng.random_range(1..6);
        let sans: Vec<String> = (0..n)
            .map(|i| {
                let d = rng.random_range(0..domains);
                let sfx = suffixes[d % suffixes.len()];
                if rng.random_bool(0.3) {
                    format!("*.d{d}.{sfx}")
                } else {
                    format!("h{i}.d{d}.{sfx}")
                }
            })
            .collect();
        let s = san_statistics_of(sans.iter().map(String::as_str), &psl);
        let got = (
            s.total_dns_sans,
            s.wildcard_sans,
            s.unique_eslds,
            s.single_san,
            s.raw_total_dns_sans,
            s.raw_wildcard_sans,
            s.raw_unique_eslds,
        );
        ensure(got == naive(&sans), || {
            format!("{sans:?}: {got:?} vs {:?}", naive(&sans))
        })?;
        capped += usize::from(n > SAN_CAP);
        sets.push(sans);
    }
    // a sample through real certificates
    for (i, sans) in sets.iter().take(20).enumerate() {
        let refs: Vec<&str> = sans.iter().map(String::as_str).collect();
        let pki = generate_pki(&simple_chain_spec(&refs), i as u64, now()).map_err(|e| e.to_string())?;
        let s = san_statistics(&record(&pki, "leaf"), &psl);
        let got = (
            s.total_dns_sans,
            s.wildcard_sans,
            s.unique_eslds,
            s.single_san,
            s.raw_total_dns_sans,
            s.raw_wildcard_sans,
            s.raw_unique_eslds,
        );
        ensure(got == naive(sans), || format!("certificate {i}: {got:?}"))?;
    }
    Ok(format!("1000 sets ({capped} above the cap) and 20 certificates agree"))
}

// 11
fn redirect_chains() -> Outcome_ {
    let s = start_named("redirects", 5, Arc::new(SystemClock)).map_err(|e| e.to_string())?;
    let cfg = RedirectConfig {
        timeout: T,
        ..RedirectConfig::default()
    };
    let run = |url: &str, cfg: &RedirectConfig| resolve_chain(&s.net(), url, cfg).map_err(|e| e.to_string());
    let c = run("http://loop-a.fixture.test/", &cfg)?;
    ensure(c.termination == Termination::LoopDetected, || {
        format!("loop: {:?}", c.termination)
    })?;
    for limit in [1u32, 3, 10] {
        let c = run("http://hop.fixture.test/", &RedirectConfig { limit, ..cfg.clone() })?;
        ensure(
            c.termination == Termination::LimitExceeded && c.steps.len() == limit as usize,
            || format!("limit {limit}: {:?} after {}", c.termination, c.steps.len()),
        )?;
    }
    let c = run("http://meta.fixture.test/", &cfg)?;
    ensure(
        c.termination == Termination::Completed && c.steps.first().map(|s| s.mechanism) == Some(Mechanism::HtmlMeta),
        || format!("meta: {:?}", c.termination),
    )?;
    let c = run("https://s1.fixture.test/", &cfg)?;
    let st = chain_stats(&c);
    ensure(
        c.termination == Termination::Completed && (st.length, st.unique_certs) == (3, 1),
        || format!("shared leaf: {st:?}"),
    )?;
    let c = run("http://apex.fixture.test/", &cfg)?;
    let st = chain_stats(&c);
    ensure(
        c.termination == Termination::Completed && st.unique_certs == 2 && st.length == 2,
        || format!("apex->www: {st:?}"),
    )?;
    let c = run("http://old.fixture.test/", &cfg)?;
    let st = chain_stats(&c);
    ensure((st.length, st.unique_certs, st.unique_hosts) == (2, 2, 3), || {
        format!("old: {st:?}")
    })?;
    Ok("loop, limit 1/3/10, meta, shared-leaf (3,1), apex->www unique_certs 2".into())
}

// 12
fn report_determinism() -> Outcome_ {
    let lab = Lab::campaign(false);
    let plan = lab.plan("frozen", &fq(&["t1", "t2", "t3", "t4", "t5", "missing"]), |c| {
        c.concurrency_width = 3;
        c.features
            .x509_aspects
            .insert(pkiscope_core::orchestrator::X509Aspect::X5);
    });
    let rt = lab.runtime(true);
    let store = lab.new_store("frozen", &plan, &rt);
    execute(&plan, &store, &rt, &ExecuteOptions::default()).map_err(|e| e.to_string())?;
    drop(store);
    let mut bytes = 0;
    let opts = ReportOptions::default();
    let first: Vec<(Vec<u8>, Vec<u8>)> = {
        let store = lab.reopen("frozen");
        let inputs = ReportInputs::load(&store).map_err(|e| e.to_string())?;
        ReportKind::ALL
            .iter()
            .map(|k| render(*k, &inputs, &opts).unwrap())
            .collect()
    };
    for round in 0..3 {
        let store = lab.reopen("frozen");
        let inputs = ReportInputs::load(&store).map_err(|e| e.to_string())?;
        for (k, want) in ReportKind::ALL.iter().zip(&first) {
            let got = render(*k, &inputs, &opts).map_err(|e| e.to_string())?;
            ensure(&got == want, || format!("round {round}: {k} differs"))?;
        }
        let out = lab.dir.path().join(format!("out-{round}"));
        for (k, want) in ReportKind::ALL.iter().zip(&first) {
            let (c, j) = pkiscope_core::report::write_report(&store, *k, &out, &opts).map_err(|e| e.to_string())?;
            let (c, j) = (std::fs::read(c).unwrap(), std::fs::read(j).unwrap());
            ensure(c == want.0 && j == want.1, || {
                format!("round {round}: written {k} differs")
            })?;
            bytes += c.len() + j.len();
        }
    }
    Ok(format!(
        "{} kinds x 3 re-runs byte-identical ({bytes} bytes)",
        ReportKind::ALL.len()
    ))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("shortest-path oracle equivalence", shortest_path_oracle),
        ("chain-diff metric", chain_diff_metric),
        ("alert-40 capture", alert_40_capture),
        ("stateful OCSP caching", stateful_ocsp_caching),
        ("cross-host ticket replay", cross_host_ticket_replay),
        ("resumption exactness", resumption_exactness),
        ("temporal-integrity enforcement", temporal_integrity),
        ("CAA taxonomy", caa_taxonomy),
        ("DANE matrix", dane_matrix),
        ("SAN statistics oracle", san_statistics_oracle),
        ("redirect chains", redirect_chains),
        ("report determinism", report_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
