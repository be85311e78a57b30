//! Certificate analysis of collected units: chain evaluation, SAN
//! statistics, validation type, conformance, revocation, CAA and DANE.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::dns::{DnsSnapshot, RecordType};
use crate::encoding::Fingerprint;
use crate::orchestrator::unit::TlsProbe;
use crate::orchestrator::{committed_units, UnitKey};
use crate::storage::{RecordEnvelope, RecordKind, Store, StoreError};
use crate::targets::PublicSuffixTable;
use crate::x509::chain::name_matches;
use crate::x509::lint::lint_with_table;
use crate::x509::{
    build_chains, check_revocation_info, classify_validation_type, match_caa_for, match_tlsa, parse_certificate,
    san_statistics, CaaVerdict, CertificateRecord, ChainEvaluation, ConformanceFinding, DaneVerdict, IdentifierMap,
    OidTable, RevocationReport, SanStats, TrustStore, ValidationType,
};

#[derive(Debug, Clone, Default)]
pub struct AnalysisContext {
    pub trust: Option<TrustStore>,
    pub psl: Option<PublicSuffixTable>,
    pub identifier_map: IdentifierMap,
    pub oid_table: OidTable,
}

/// Analysis of one presented chain, stored as a `chain-evaluation` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertAnalysis {
    pub target: String,
    #[serde(default)]
    pub rank: Option<u64>,
    /// Index of the first probe that presented this chain.
    pub probe_index: u32,
    pub sni: bool,
    pub leaf: Fingerprint,
    pub presented: Vec<Fingerprint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<ChainEvaluation>,
    /// Subject labels of the chosen path, leaf first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub san: Option<SanStats>,
    #[serde(default)]
    pub wildcard_sans: Vec<String>,
    pub validation_type: ValidationType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conformance: Vec<ConformanceFinding>,
    pub revocation: RevocationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caa: Option<CaaVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dane: Vec<DaneVerdict>,
}

/// Subject label used in reports: organization and common name.
pub fn subject_label(c: &CertificateRecord) -> String {
    match (c.subject.first("O"), c.subject.first("CN")) {
        (Some(o), Some(cn)) if o != cn => format!("{o} / {cn}"),
        (Some(o), _) => o.to_string(),
        (None, Some(cn)) => cn.to_string(),
        (None, None) => c.fingerprint.to_hex()[..16].to_string(),
    }
}

/// Analyses every distinct chain presented in the unit's probes. Returns
/// the analyses and the DER of every certificate they reference.
pub fn analyze_unit(
    target: &str,
    rank: Option<u64>,
    dns: &DnsSnapshot,
    probes: &[TlsProbe],
    ctx: &AnalysisContext,
) -> (Vec<CertAnalysis>, Vec<Vec<u8>>) {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut blobs: BTreeMap<Fingerprint, Vec<u8>> = BTreeMap::new();
    for p in probes {
        let chain = &p.observation.chain_presented;
        if chain.is_empty() {
            continue;
        }
        let fps: Vec<Fingerprint> = chain.iter().map(|d| Fingerprint::of(d)).collect();
        if !seen.insert(fps.clone()) {
            continue;
        }
        let parsed: Vec<CertificateRecord> = chain.iter().filter_map(|d| parse_certificate(d).ok()).collect();
        for d in chain {
            blobs.insert(Fingerprint::of(d), d.clone());
        }
        let Some(leaf) = parsed.first().filter(|l| l.fingerprint == fps[0]) else {
            continue;
        };
        let at = p.observation.started_at;
        let sni = p.observation.config_used.sni.clone();
        let mut certs: BTreeMap<Fingerprint, CertificateRecord> =
            parsed.iter().map(|c| (c.fingerprint, c.clone())).collect();
        let evaluation = ctx.trust.as_ref().map(|store| {
            let mut e = build_chains(leaf, &parsed, store, at);
            e.name_matches = sni.as_deref().map(|h| name_matches(leaf, h));
            for fp in e.paths_found.iter().flatten() {
                if let Some(c) = store.get(fp) {
                    certs.entry(*fp).or_insert_with(|| c.clone());
                    blobs.entry(*fp).or_insert_with(|| c.raw.clone());
                }
            }
            e
        });
        let path_labels = evaluation
            .as_ref()
            .and_then(|e| e.chosen_path.as_ref())
            .map(|path| path.iter().filter_map(|fp| certs.get(fp)).map(subject_label).collect())
            .unwrap_or_default();
        let issuer = evaluation
            .as_ref()
            .and_then(|e| e.chosen_path.as_ref())
            .and_then(|path| path.get(1))
            .and_then(|fp| certs.get(fp))
            .or_else(|| parsed.get(1).filter(|c| c.subject.raw == leaf.issuer.raw));
        let wildcard_sans: Vec<String> = leaf
            .dns_sans()
            .filter(|s| s.starts_with("*."))
            .map(str::to_string)
            .collect();
        let caa_known = dns.answered.contains(&RecordType::Caa) || dns.records.contains_key(&RecordType::Caa);
        let caa = caa_known
            .then_some(())
            .and(issuer)
            .map(|iss| match_caa_for(&dns.caa_records(), iss, &ctx.identifier_map, !wildcard_sans.is_empty()));
        let dane = match &evaluation {
            Some(e) => dns.tlsa_records().iter().map(|r| match_tlsa(r, e, &certs)).collect(),
            None => Vec::new(),
        };
        out.push(CertAnalysis {
            target: target.to_string(),
            rank,
            probe_index: p.index,
            sni: sni.is_some(),
            leaf: leaf.fingerprint,
            presented: fps,
            path_labels,
            san: ctx.psl.as_ref().map(|t| san_statistics(leaf, t)),
            wildcard_sans,
            validation_type: classify_validation_type(leaf, &ctx.oid_table),
            conformance: lint_with_table(leaf, &ctx.oid_table),
            revocation: check_revocation_info(
                leaf,
                issuer,
                p.observation.stapled_ocsp.as_ref().map(|s| s.raw.as_slice()),
                at,
            ),
            caa,
            dane,
            evaluation,
        });
    }
    (out, blobs.into_values().collect())
}

/// Writes analyses for every committed unit that has none yet. Returns the
/// number of analysis records written.
pub fn analyze_store(store: &Store, ctx: &AnalysisContext, clock: &dyn Clock) -> Result<usize, StoreError> {
    let ledger = store.load_ledger()?;
    let committed = committed_units(&ledger);
    let mut units: BTreeMap<UnitKey, (Option<DnsSnapshot>, Vec<TlsProbe>, bool)> = BTreeMap::new();
    let mut ranks: BTreeMap<String, Option<u64>> = BTreeMap::new();
    let plan: Option<crate::orchestrator::MeasurementPlan> = serde_json::from_value(store.manifest().plan).ok();
    if let Some(p) = &plan {
        for e in &p.targets.entries {
            ranks.entry(e.name.clone()).or_insert(e.rank);
        }
    }
    for env in store.read_records()? {
        let key = UnitKey::of(&env);
        if !committed.contains(&key) {
            continue;
        }
        let slot = units.entry(key).or_default();
        match env.kind {
            RecordKind::DnsSnapshot => slot.0 = env.payload_as().ok(),
            RecordKind::TlsObservation => slot.1.extend(env.payload_as::<TlsProbe>().ok()),
            RecordKind::ChainEvaluation => slot.2 = true,
            _ => {}
        }
    }
    let mut written = 0;
    for (key, (dns, probes, analysed)) in units {
        let Some(dns) = dns else { continue };
        if analysed {
            continue;
        }
        let rank = ranks.get(&key.target).copied().flatten();
        let (analyses, blobs) = analyze_unit(&key.target, rank, &dns, &probes, ctx);
        for b in &blobs {
            store.content_store_cert(b)?;
        }
        let now = clock.now();
        let envs = analyses
            .iter()
            .map(|a| {
                RecordEnvelope::new(
                    RecordKind::ChainEvaluation,
                    &ledger.plan_id,
                    &key.target,
                    key.epoch,
                    key.attempt,
                    now,
                    a,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        written += envs.len();
        store.append_records(&envs)?;
    }
    Ok(written)
}
