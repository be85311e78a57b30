use std::collections::BTreeSet;

use chrono::{DateTime, TimeDelta, Utc};
use proptest::prelude::*;

use pkiscope_core::encoding::Fingerprint;
use pkiscope_core::x509::{build_chains, parse_certificate, CertificateRecord, StoreLabel, TrustStore, Verdict};
use pkiscope_fixtures::pki::{generate_pki, random_spec, simple_chain_spec, Edge, NodeSpec, Role};
use pkiscope_fixtures::MaterializedPki;

fn now() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2026-03-01T00:00:00Z")
        .unwrap()
        .with_timezone(&Utc)
}

fn record(pki: &MaterializedPki, id: &str) -> CertificateRecord {
    parse_certificate(&pki.der(id).unwrap()).unwrap()
}

fn store(pki: &MaterializedPki, with_pool: bool) -> TrustStore {
    let anchors = pki
        .anchors()
        .iter()
        .map(|c| parse_certificate(&c.der).unwrap())
        .collect();
    let pool = if with_pool {
        pki.intermediates()
            .iter()
            .map(|c| parse_certificate(&c.der).unwrap())
            .collect()
    } else {
        Vec::new()
    };
    TrustStore::new(
        anchors,
        pool,
        StoreLabel {
            name: "test".into(),
            snapshot_date: None,
        },
    )
    .unwrap()
}

fn fps(pki: &MaterializedPki, ids: &[String]) -> Vec<Fingerprint> {
    ids.iter().map(|id| Fingerprint::of(&pki.der(id).unwrap())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn paths_and_shortest_match_the_oracle(seed in 0u64..10_000) {
        let pki = generate_pki(&random_spec(seed), seed, now()).unwrap();
        let trust = store(&pki, true);
        for leaf in pki.leaves() {
            let oracle = &pki.oracle[&leaf.id];
            let l = record(&pki, &leaf.id);
            let e = build_chains(&l, std::slice::from_ref(&l), &trust, now() + TimeDelta::hours(1));
            let want: BTreeSet<Vec<Fingerprint>> = oracle.all_paths.iter().map(|p| fps(&pki, p)).collect();
            let got: BTreeSet<Vec<Fingerprint>> = e.paths_found.iter().cloned().collect();
            prop_assert_eq!(&got, &want, "seed {} leaf {}", seed, &leaf.id);
            match &oracle.shortest {
                Some(s) => {
                    prop_assert_eq!(e.verdict, Verdict::Valid);
                    prop_assert_eq!(e.chosen_path.clone(), Some(fps(&pki, s)));
                    prop_assert_eq!(e.length_diff, Some(1 - (s.len() as i64 - 1)));
                }
                None => prop_assert_ne!(e.verdict, Verdict::Valid),
            }
        }
    }

    #[test]
    fn served_chain_has_zero_diff(seed in 0u64..10_000) {
        let pki = generate_pki(&random_spec(seed), seed, now()).unwrap();
        let trust = store(&pki, false);
        for leaf in pki.leaves() {
            let served = pki.served_chain(&leaf.id);
            if served.is_empty() {
                continue;
            }
            let presented: Vec<CertificateRecord> = served.iter().map(|id| record(&pki, id)).collect();
            let e = build_chains(&presented[0], &presented, &trust, now() + TimeDelta::hours(1));
            prop_assert_eq!(e.verdict, Verdict::Valid);
            prop_assert_eq!(e.length_diff, Some(0));
            prop_assert_eq!(e.presented_length, served.len());
        }
    }
}

#[test]
fn missing_and_redundant_members() {
    let pki = generate_pki(&simple_chain_spec(&["a.fixture.test"]), 3, now()).unwrap();
    let at = now() + TimeDelta::hours(1);
    let leaf = record(&pki, "leaf");
    let int = record(&pki, "int");
    let root = record(&pki, "root");

    let e = build_chains(&leaf, std::slice::from_ref(&leaf), &store(&pki, true), at);
    assert_eq!(e.verdict, Verdict::Valid);
    assert_eq!(e.length_diff, Some(-1));

    let e = build_chains(&leaf, std::slice::from_ref(&leaf), &store(&pki, false), at);
    assert_eq!(e.verdict, Verdict::Incomplete);
    assert_eq!(e.length_diff, None);

    let e = build_chains(
        &leaf,
        &[leaf.clone(), int.clone(), root.clone()],
        &store(&pki, false),
        at,
    );
    assert_eq!(e.length_diff, Some(1));

    let e = build_chains(
        &leaf,
        &[leaf.clone(), int],
        &store(&pki, false),
        now() + TimeDelta::days(3650),
    );
    assert_eq!(e.verdict, Verdict::Expired);
}

#[test]
fn cross_signed_root_prefers_the_shorter_path() {
    let mut spec = simple_chain_spec(&["a.fixture.test"]);
    spec.nodes.push(NodeSpec::new("old", Role::Root));
    spec.nodes[0].role = Role::CrossSignedRoot;
    spec.edges.push(Edge {
        issuer: "old".into(),
        subject: "root".into(),
    });
    let pki = generate_pki(&spec, 9, now()).unwrap();
    let leaf = record(&pki, "leaf");
    let presented = vec![leaf.clone(), record(&pki, "int@root"), record(&pki, "root@old")];
    let e = build_chains(&leaf, &presented, &store(&pki, false), now() + TimeDelta::hours(1));
    assert_eq!(e.paths_found.len(), 2);
    assert_eq!(e.chosen_path.as_ref().unwrap().len(), 3);
    // a server sending the cross-sign carries one redundant member
    assert_eq!(e.length_diff, Some(1));
}
