//! Trust-chain building and evaluation.
//!
//! Paths are searched over the presented certificates, the intermediate
//! pool and the anchors, linking a certificate to every candidate whose
//! subject encoding equals its issuer encoding. Every edge is
//! signature-checked. All simple paths up to [`MAX_DEPTH`] members that end
//! at an anchor are enumerated, so the shortest one can be picked.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::cert::{parse_certificate, signed_by, split_certificates, CertificateRecord};
use crate::clock::Timestamp;
use crate::encoding::Fingerprint;

pub const MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreLabel {
    pub name: String,
    #[serde(default)]
    pub snapshot_date: Option<NaiveDate>,
}

#[derive(Debug, Clone)]
pub struct TrustStore {
    anchors: BTreeMap<Fingerprint, CertificateRecord>,
    pool: BTreeMap<Fingerprint, CertificateRecord>,
    pub label: StoreLabel,
}

#[derive(Debug, thiserror::Error)]
pub enum TrustStoreError {
    #[error("anchor {0} is not a CA certificate")]
    NotCa(Fingerprint),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: certificate {index}: {source}")]
    Parse {
        path: String,
        index: usize,
        source: super::cert::CertParseError,
    },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// On-disk description of a trust store: PEM bundles next to a JSON
/// manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrustStoreManifest {
    pub store_label: String,
    #[serde(default)]
    pub snapshot_date: Option<NaiveDate>,
    pub anchors: String,
    #[serde(default)]
    pub intermediates: Option<String>,
}

impl TrustStore {
    pub fn new(
        anchors: Vec<CertificateRecord>,
        intermediate_pool: Vec<CertificateRecord>,
        label: StoreLabel,
    ) -> Result<Self, TrustStoreError> {
        if let Some(bad) = anchors.iter().find(|a| !a.is_ca) {
            return Err(TrustStoreError::NotCa(bad.fingerprint));
        }
        Ok(TrustStore {
            anchors: anchors.into_iter().map(|c| (c.fingerprint, c)).collect(),
            pool: intermediate_pool.into_iter().map(|c| (c.fingerprint, c)).collect(),
            label,
        })
    }

    pub fn anchors(&self) -> impl Iterator<Item = &CertificateRecord> {
        self.anchors.values()
    }

    pub fn intermediate_pool(&self) -> impl Iterator<Item = &CertificateRecord> {
        self.pool.values()
    }

    pub fn is_anchor(&self, fp: &Fingerprint) -> bool {
        self.anchors.contains_key(fp)
    }

    pub fn get(&self, fp: &Fingerprint) -> Option<&CertificateRecord> {
        self.anchors.get(fp).or_else(|| self.pool.get(fp))
    }

    pub fn load(manifest_path: &Path) -> Result<Self, TrustStoreError> {
        fn io(path: &Path) -> impl FnOnce(std::io::Error) -> TrustStoreError + '_ {
            move |source| TrustStoreError::Io {
                path: path.display().to_string(),
                source,
            }
        }
        let text = std::fs::read_to_string(manifest_path).map_err(io(manifest_path))?;
        let m: TrustStoreManifest = serde_json::from_str(&text)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let load_bundle = |rel: &str| -> Result<Vec<CertificateRecord>, TrustStoreError> {
            let p = base.join(rel);
            let data = std::fs::read(&p).map_err(io(&p))?;
            split_certificates(&data)
                .iter()
                .enumerate()
                .map(|(index, der)| {
                    parse_certificate(der).map_err(|source| TrustStoreError::Parse {
                        path: p.display().to_string(),
                        index,
                        source,
                    })
                })
                .collect()
        };
        let anchors = load_bundle(&m.anchors)?;
        let pool = match &m.intermediates {
            Some(rel) => load_bundle(rel)?,
            None => Vec::new(),
        };
        TrustStore::new(
            anchors,
            pool,
            StoreLabel {
                name: m.store_label,
                snapshot_date: m.snapshot_date,
            },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Valid,
    Expired,
    UnknownAnchor,
    BrokenSignature,
    NameMismatch,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: String,
    pub detail: String,
}

impl Finding {
    fn new(code: &str, detail: impl Into<String>) -> Self {
        Finding {
            code: code.to_string(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainEvaluation {
    pub leaf: Fingerprint,
    pub presented: Vec<Fingerprint>,
    /// Every fully valid leaf-to-anchor path, sorted.
    pub paths_found: Vec<Vec<Fingerprint>>,
    pub chosen_path: Option<Vec<Fingerprint>>,
    pub presented_length: usize,
    /// Members of the chosen path, anchor included.
    pub shortest_length: Option<usize>,
    /// `presented_length` minus the members a server needs to send for the
    /// chosen path (all but the anchor). Negative: missing intermediates;
    /// positive: redundant members.
    pub length_diff: Option<i64>,
    pub verdict: Verdict,
    pub verdict_reasons: Vec<Finding>,
    pub evaluated_at: Timestamp,
    /// Leaf SAN vs. probed host; `None` when no host was checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_matches: Option<bool>,
}

impl ChainEvaluation {
    /// Verdict with name matching folded in.
    pub fn strict_verdict(&self) -> Verdict {
        if self.verdict == Verdict::Valid && self.name_matches == Some(false) {
            Verdict::NameMismatch
        } else {
            self.verdict
        }
    }

    pub fn anchor(&self) -> Option<Fingerprint> {
        self.chosen_path.as_ref().and_then(|p| p.last().copied())
    }

    /// First certificate above the leaf on the chosen path, if any.
    pub fn first_intermediate(&self) -> Option<Fingerprint> {
        let p = self.chosen_path.as_ref()?;
        if p.len() >= 3 {
            p.get(1).copied()
        } else {
            None
        }
    }
}

/// Shortest first; among equal lengths the lexicographically smallest
/// anchor fingerprint, then the smallest full sequence.
pub fn path_order(a: &[Fingerprint], b: &[Fingerprint]) -> std::cmp::Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| a.last().cmp(&b.last()))
        .then_with(|| a.cmp(b))
}

struct Search<'a> {
    nodes: BTreeMap<Fingerprint, &'a CertificateRecord>,
    by_subject: HashMap<&'a [u8], Vec<Fingerprint>>,
    store: &'a TrustStore,
    sig_cache: HashMap<(Fingerprint, Fingerprint), bool>,
    at: Timestamp,
    /// Anchored paths: (path, all signatures ok, all members time-valid)
    anchored: Vec<(Vec<Fingerprint>, bool, bool)>,
    dead_ends: Vec<(Vec<Fingerprint>, bool)>,
    bad_edges: Vec<(Fingerprint, Fingerprint)>,
}

impl<'a> Search<'a> {
    fn verify(&mut self, child: Fingerprint, parent: Fingerprint) -> bool {
        if let Some(v) = self.sig_cache.get(&(child, parent)) {
            return *v;
        }
        let ok = match (self.nodes.get(&child), self.nodes.get(&parent)) {
            (Some(c), Some(p)) => signed_by(c, p),
            _ => false,
        };
        if !ok {
            self.bad_edges.push((child, parent));
        }
        self.sig_cache.insert((child, parent), ok);
        ok
    }

    fn dfs(&mut self, path: &mut Vec<Fingerprint>, sigs_ok: bool) {
        let Some(&top) = path.last() else { return };
        let node = self.nodes[&top];
        if self.store.is_anchor(&top) {
            let time_ok = path.iter().all(|fp| self.nodes[fp].time_valid_at(self.at));
            self.anchored.push((path.clone(), sigs_ok, time_ok));
            return;
        }
        if path.len() >= MAX_DEPTH {
            return;
        }
        let candidates: Vec<Fingerprint> = self
            .by_subject
            .get(node.issuer.raw.as_slice())
            .cloned()
            .unwrap_or_default();
        let mut extended = false;
        for cand in candidates {
            if path.contains(&cand) {
                continue;
            }
            let c = self.nodes[&cand];
            if !c.is_ca && !self.store.is_anchor(&cand) {
                continue;
            }
            extended = true;
            let ok = self.verify(top, cand);
            path.push(cand);
            self.dfs(path, sigs_ok && ok);
            path.pop();
        }
        if !extended {
            self.dead_ends.push((path.clone(), node.is_self_issued()));
        }
    }
}

/// `presented` is the chain as served, leaf first.
pub fn build_chains(
    leaf: &CertificateRecord,
    presented: &[CertificateRecord],
    store: &TrustStore,
    at: Timestamp,
) -> ChainEvaluation {
    let mut nodes: BTreeMap<Fingerprint, &CertificateRecord> = BTreeMap::new();
    nodes.insert(leaf.fingerprint, leaf);
    for c in presented
        .iter()
        .chain(store.pool.values())
        .chain(store.anchors.values())
    {
        nodes.entry(c.fingerprint).or_insert(c);
    }
    let mut by_subject: HashMap<&[u8], Vec<Fingerprint>> = HashMap::new();
    for (fp, c) in &nodes {
        by_subject.entry(c.subject.raw.as_slice()).or_default().push(*fp);
    }
    let mut search = Search {
        nodes,
        by_subject,
        store,
        sig_cache: HashMap::new(),
        at,
        anchored: Vec::new(),
        dead_ends: Vec::new(),
        bad_edges: Vec::new(),
    };
    let mut path = vec![leaf.fingerprint];
    search.dfs(&mut path, true);

    let mut paths_found: Vec<Vec<Fingerprint>> = search
        .anchored
        .iter()
        .filter(|(_, s, t)| *s && *t)
        .map(|(p, _, _)| p.clone())
        .collect();
    paths_found.sort_by(|a, b| path_order(a, b));
    paths_found.dedup();
    let chosen_path = paths_found.first().cloned();

    let mut reasons = Vec::new();
    let verdict = if chosen_path.is_some() {
        Verdict::Valid
    } else if search.anchored.iter().any(|(_, s, _)| *s) {
        for (p, _, _) in search.anchored.iter().filter(|(_, s, _)| *s) {
            for fp in p {
                let c = search.nodes[fp];
                if !c.time_valid_at(at) {
                    reasons.push(Finding::new(
                        "outside-validity",
                        format!("{fp} valid {} to {}", c.not_before, c.not_after),
                    ));
                }
            }
        }
        Verdict::Expired
    } else if !search.anchored.is_empty() {
        Verdict::BrokenSignature
    } else if search.dead_ends.iter().any(|(_, self_issued)| *self_issued) {
        for (p, _) in search.dead_ends.iter().filter(|(_, s)| *s) {
            if let Some(top) = p.last() {
                reasons.push(Finding::new("untrusted-root", top.to_string()));
            }
        }
        Verdict::UnknownAnchor
    } else {
        for (p, _) in &search.dead_ends {
            if let Some(top) = p.last() {
                reasons.push(Finding::new("issuer-not-found", top.to_string()));
            }
        }
        Verdict::Incomplete
    };
    let mut bad_edges = search.bad_edges.clone();
    bad_edges.sort();
    bad_edges.dedup();
    for (child, parent) in bad_edges {
        reasons.push(Finding::new("bad-signature", format!("{child} by {parent}")));
    }
    reasons.sort_by(|a, b| (&a.code, &a.detail).cmp(&(&b.code, &b.detail)));
    reasons.dedup();

    let presented_fps: Vec<Fingerprint> = presented.iter().map(|c| c.fingerprint).collect();
    let presented_length = presented_fps.len();
    let shortest_length = chosen_path.as_ref().map(Vec::len);
    ChainEvaluation {
        leaf: leaf.fingerprint,
        presented: presented_fps,
        paths_found,
        chosen_path,
        presented_length,
        shortest_length,
        length_diff: shortest_length.map(|s| presented_length as i64 - (s as i64 - 1)),
        verdict,
        verdict_reasons: reasons,
        evaluated_at: at,
        name_matches: None,
    }
}

/// Host name check against the leaf's DNS SANs. A wildcard covers exactly
/// one leftmost label.
pub fn name_matches(leaf: &CertificateRecord, host: &str) -> bool {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    leaf.dns_sans().any(|san| {
        let san = san.trim_end_matches('.').to_ascii_lowercase();
        match san.strip_prefix("*.") {
            Some(base) => match host.split_once('.') {
                Some((first, rest)) => !first.is_empty() && rest == base,
                None => false,
            },
            None => san == host,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(b: u8) -> Fingerprint {
        Fingerprint([b; 32])
    }

    #[test]
    fn ordering_prefers_short_then_anchor() {
        let a = vec![fp(1), fp(2), fp(9)];
        let b = vec![fp(1), fp(3), fp(5)];
        let c = vec![fp(1), fp(5)];
        let mut v = vec![a.clone(), b.clone(), c.clone()];
        v.sort_by(|x, y| path_order(x, y));
        assert_eq!(v, vec![c, b, a]);
    }
}
