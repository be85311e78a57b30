//! Deterministic PKI graphs: spec, materialization and the brute-force
//! path oracle.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, TimeDelta, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcgen::{
    BasicConstraints, CertificateParams, CustomExtension, DistinguishedName, DnType, ExtendedKeyUsagePurpose, IsCa,
    Issuer, KeyPair, KeyUsagePurpose, SanType, SerialNumber,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256, Sha512};

use pkiscope_core::der;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Root,
    CrossSignedRoot,
    Intermediate,
    Leaf,
    /// Leaf-level certificate carrying the OCSP-signing EKU.
    OcspResponder,
}

impl Role {
    pub fn is_root(self) -> bool {
        matches!(self, Role::Root | Role::CrossSignedRoot)
    }

    pub fn is_ca(self) -> bool {
        matches!(self, Role::Root | Role::CrossSignedRoot | Role::Intermediate)
    }
}

/// Only Ed25519 is offered: its signatures are deterministic, so a seed
/// fixes every certificate byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KeyType {
    #[default]
    Ed25519,
}

/// Validity relative to the materialization time, in days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity {
    pub not_before_days: i64,
    pub not_after_days: i64,
}

impl Default for Validity {
    fn default() -> Self {
        Validity {
            not_before_days: -30,
            not_after_days: 365,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub key_type: KeyType,
    #[serde(default)]
    pub sans: Vec<String>,
    #[serde(default)]
    pub policy_oids: Vec<String>,
    #[serde(default)]
    pub validity: Validity,
    /// Subject organization (O attribute).
    #[serde(default)]
    pub organization: Option<String>,
    #[serde(default)]
    pub ocsp_url: Option<String>,
}

impl NodeSpec {
    pub fn new(name: &str, role: Role) -> Self {
        NodeSpec {
            name: name.to_string(),
            role,
            key_type: KeyType::Ed25519,
            sans: Vec::new(),
            policy_oids: Vec::new(),
            validity: Validity::default(),
            organization: None,
            ocsp_url: None,
        }
    }

    pub fn leaf(name: &str, sans: &[&str]) -> Self {
        NodeSpec {
            sans: sans.iter().map(|s| s.to_string()).collect(),
            ..Self::new(name, Role::Leaf)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub issuer: String,
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsaPublication {
    pub owner: String,
    /// Certificate id whose data is published.
    pub cert: String,
    pub usage: u8,
    pub selector: u8,
    pub matching_type: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PkiSpec {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub tlsa_publications: Vec<TlsaPublication>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PkiError {
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("edge references unknown node {0}")]
    UnknownNode(String),
    #[error("edge {0} -> {1} violates the role order")]
    RoleOrder(String, String),
    #[error("issuer graph has a cycle through {0}")]
    Cycle(String),
    #[error("{0} has no path to a root")]
    Unanchored(String),
    #[error("unknown certificate {0}")]
    UnknownCert(String),
    #[error("certificate generation failed: {0}")]
    Generation(String),
}

impl PkiSpec {
    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    fn issuers_of(&self, name: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.subject == name && e.issuer != name)
            .map(|e| e.issuer.as_str())
            .collect()
    }

    /// Checks the structural invariants: known nodes, role order
    /// (root → intermediate → leaf, with cross-signs between CAs), no cycle
    /// outside root cross-signs, and an anchor path for every node.
    pub fn validate(&self) -> Result<(), PkiError> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.name.as_str()) {
                return Err(PkiError::DuplicateNode(n.name.clone()));
            }
        }
        for e in &self.edges {
            let i = self
                .node(&e.issuer)
                .ok_or_else(|| PkiError::UnknownNode(e.issuer.clone()))?;
            let s = self
                .node(&e.subject)
                .ok_or_else(|| PkiError::UnknownNode(e.subject.clone()))?;
            let ok = i.role.is_ca()
                && (s.role != Role::Root || i.role.is_root())
                && !(i.role == Role::Intermediate && s.role.is_root());
            if !ok {
                return Err(PkiError::RoleOrder(e.issuer.clone(), e.subject.clone()));
            }
        }
        // Cycles are only allowed among roots, which terminate paths anyway.
        for n in self.nodes.iter().filter(|n| !n.role.is_root()) {
            let mut stack = vec![(n.name.as_str(), vec![n.name.as_str()])];
            while let Some((cur, trail)) = stack.pop() {
                for iss in self.issuers_of(cur) {
                    if self.node(iss).is_some_and(|x| x.role.is_root()) {
                        continue;
                    }
                    if trail.contains(&iss) {
                        return Err(PkiError::Cycle(iss.to_string()));
                    }
                    let mut t = trail.clone();
                    t.push(iss);
                    stack.push((iss, t));
                }
            }
        }
        for n in &self.nodes {
            if !self.reaches_root(&n.name, &mut BTreeSet::new()) {
                return Err(PkiError::Unanchored(n.name.clone()));
            }
        }
        Ok(())
    }

    fn reaches_root<'a>(&'a self, name: &'a str, visiting: &mut BTreeSet<&'a str>) -> bool {
        if self.node(name).is_some_and(|n| n.role.is_root()) {
            return true;
        }
        if !visiting.insert(name) {
            return false;
        }
        self.issuers_of(name)
            .into_iter()
            .any(|i| self.reaches_root(i, visiting))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializedCert {
    /// `subject@issuer`.
    pub id: String,
    pub subject: String,
    pub issuer: String,
    #[serde(with = "pkiscope_core::encoding::b64")]
    pub der: Vec<u8>,
    /// Lowercase hex SHA-256 of the DER.
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathOracle {
    pub leaf: String,
    /// Every path (certificate ids, leaf first, anchor last).
    pub all_paths: Vec<Vec<String>>,
    pub shortest: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaterializedPki {
    pub seed: u64,
    pub now: DateTime<Utc>,
    pub spec: PkiSpec,
    pub certs: Vec<MaterializedCert>,
    /// PKCS#8 private keys by node name.
    #[serde(with = "key_map")]
    pub keys: BTreeMap<String, Vec<u8>>,
    /// Oracle per leaf certificate id.
    pub oracle: BTreeMap<String, PathOracle>,
}

mod key_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        let enc: BTreeMap<&String, String> = m.iter().map(|(k, v)| (k, hex::encode(v))).collect();
        enc.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec<u8>>, D::Error> {
        let enc = BTreeMap::<String, String>::deserialize(d)?;
        enc.into_iter()
            .map(|(k, v)| hex::decode(v).map(|b| (k, b)).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// PKCS#8 v1 wrapper around a raw Ed25519 seed.
pub fn ed25519_pkcs8(seed: &[u8; 32]) -> Vec<u8> {
    let mut out = hex::decode("302e020100300506032b657004220420").expect("static hex");
    out.extend_from_slice(seed);
    out
}

fn node_seed(seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"pkiscope-fixture-key");
    h.update(seed.to_be_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

fn serial_for(seed: u64, id: &str) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(b"pkiscope-fixture-serial");
    h.update(seed.to_be_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    let mut s = d[..12].to_vec();
    s[0] &= 0x7f;
    s[0] |= 0x01;
    s
}

fn key_pair(pkcs8: &[u8]) -> Result<KeyPair, PkiError> {
    KeyPair::try_from(pkcs8).map_err(|e| PkiError::Generation(e.to_string()))
}

fn to_offset(t: DateTime<Utc>) -> time::OffsetDateTime {
    time::OffsetDateTime::from_unix_timestamp(t.timestamp()).expect("timestamp in range")
}

fn policies_extension(oids: &[String]) -> CustomExtension {
    let infos: Vec<Vec<u8>> = oids
        .iter()
        .filter_map(|o| der::encode_oid(o))
        .map(|oid| der::encode_sequence(&[&oid]))
        .collect();
    let refs: Vec<&[u8]> = infos.iter().map(Vec::as_slice).collect();
    CustomExtension::from_oid_content(&[2, 5, 29, 32], der::encode_sequence(&refs))
}

fn aia_extension(ocsp_url: &str) -> CustomExtension {
    let method = der::encode_oid("1.3.6.1.5.5.7.48.1").expect("static oid");
    let location = der::encode_tlv(0x86, ocsp_url.as_bytes());
    let access = der::encode_sequence(&[&method, &location]);
    CustomExtension::from_oid_content(&[1, 3, 6, 1, 5, 5, 7, 1, 1], der::encode_sequence(&[&access]))
}

fn params_for(node: &NodeSpec, now: DateTime<Utc>, serial: Vec<u8>) -> Result<CertificateParams, PkiError> {
    let mut p = CertificateParams::default();
    let mut dn = DistinguishedName::new();
    dn.push(DnType::CommonName, node.name.as_str());
    if let Some(o) = &node.organization {
        dn.push(DnType::OrganizationName, o.as_str());
    }
    p.distinguished_name = dn;
    p.not_before = to_offset(now + TimeDelta::days(node.validity.not_before_days));
    p.not_after = to_offset(now + TimeDelta::days(node.validity.not_after_days));
    p.serial_number = Some(SerialNumber::from_slice(&serial));
    p.use_authority_key_identifier_extension = true;
    match node.role {
        Role::Root | Role::CrossSignedRoot | Role::Intermediate => {
            p.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
            p.key_usages = vec![
                KeyUsagePurpose::KeyCertSign,
                KeyUsagePurpose::CrlSign,
                KeyUsagePurpose::DigitalSignature,
            ];
        }
        Role::Leaf => {
            p.key_usages = vec![KeyUsagePurpose::DigitalSignature];
            p.extended_key_usages = vec![ExtendedKeyUsagePurpose::ServerAuth];
        }
        Role::OcspResponder => {
            p.key_usages = vec![KeyUsagePurpose::DigitalSignature];
            p.extended_key_usages = vec![ExtendedKeyUsagePurpose::OcspSigning];
        }
    }
    for san in &node.sans {
        let s = match san.parse::<std::net::IpAddr>() {
            Ok(ip) => SanType::IpAddress(ip),
            Err(_) => SanType::DnsName(
                san.as_str()
                    .try_into()
                    .map_err(|e: rcgen::Error| PkiError::Generation(e.to_string()))?,
            ),
        };
        p.subject_alt_names.push(s);
    }
    if !node.policy_oids.is_empty() {
        p.custom_extensions.push(policies_extension(&node.policy_oids));
    }
    if let Some(url) = &node.ocsp_url {
        p.custom_extensions.push(aia_extension(url));
    }
    Ok(p)
}

fn fingerprint_hex(der: &[u8]) -> String {
    hex::encode(Sha256::digest(der))
}

/// Materializes every certificate of `spec`: one self-signed certificate
/// per root and one certificate per edge.
pub fn generate_pki(spec: &PkiSpec, seed: u64, now: DateTime<Utc>) -> Result<MaterializedPki, PkiError> {
    spec.validate()?;
    let now = DateTime::from_timestamp(now.timestamp(), 0).expect("timestamp in range");
    let keys: BTreeMap<String, Vec<u8>> = spec
        .nodes
        .iter()
        .map(|n| (n.name.clone(), ed25519_pkcs8(&node_seed(seed, &n.name))))
        .collect();
    let mut certs = Vec::new();
    let mut pairs: Vec<(String, String)> = spec
        .nodes
        .iter()
        .filter(|n| n.role.is_root())
        .map(|n| (n.name.clone(), n.name.clone()))
        .collect();
    for e in &spec.edges {
        if e.issuer != e.subject {
            pairs.push((e.subject.clone(), e.issuer.clone()));
        }
    }
    for (subject, issuer) in pairs {
        let id = format!("{subject}@{issuer}");
        let node = spec.node(&subject).expect("validated");
        let issuer_node = spec.node(&issuer).expect("validated");
        let params = params_for(node, now, serial_for(seed, &id))?;
        let subject_key = key_pair(&keys[&subject])?;
        let cert = if subject == issuer {
            params.self_signed(&subject_key)
        } else {
            let issuer_params = params_for(issuer_node, now, Vec::new())?;
            let issuer_key = key_pair(&keys[&issuer])?;
            params.signed_by(&subject_key, &Issuer::new(issuer_params, issuer_key))
        }
        .map_err(|e| PkiError::Generation(e.to_string()))?;
        let der = cert.der().to_vec();
        certs.push(MaterializedCert {
            id,
            subject,
            issuer,
            fingerprint: fingerprint_hex(&der),
            der,
        });
    }
    let mut pki = MaterializedPki {
        seed,
        now,
        spec: spec.clone(),
        certs,
        keys,
        oracle: BTreeMap::new(),
    };
    for leaf in pki
        .certs
        .iter()
        .filter(|c| spec.node(&c.subject).is_some_and(|n| n.role == Role::Leaf))
    {
        pki.oracle.insert(leaf.id.clone(), enumerate_paths(&pki, &leaf.id));
    }
    Ok(pki)
}

pub const ORACLE_MAX_DEPTH: usize = 8;

/// Brute-force enumeration over the issuer relation of the spec: a
/// certificate may follow another when its subject node is the other's
/// issuer node. Paths end at a root's self-signed certificate.
pub fn enumerate_paths(pki: &MaterializedPki, leaf_id: &str) -> PathOracle {
    fn walk(pki: &MaterializedPki, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let top = &pki.certs[*path.last().expect("non-empty")];
        if top.subject == top.issuer {
            out.push(path.clone());
            return;
        }
        if path.len() >= ORACLE_MAX_DEPTH {
            return;
        }
        for (i, c) in pki.certs.iter().enumerate() {
            if c.subject == top.issuer && !path.contains(&i) {
                path.push(i);
                walk(pki, path, out);
                path.pop();
            }
        }
    }
    let mut raw = Vec::new();
    if let Some(start) = pki.certs.iter().position(|c| c.id == leaf_id) {
        walk(pki, &mut vec![start], &mut raw);
    }
    let mut all_paths: Vec<Vec<String>> = raw
        .into_iter()
        .map(|p| p.into_iter().map(|i| pki.certs[i].id.clone()).collect())
        .collect();
    all_paths.sort();
    let fp = |id: &String| pki.cert(id).map(|c| c.fingerprint.clone()).unwrap_or_default();
    let shortest = all_paths
        .iter()
        .min_by(|a, b| {
            let key = |p: &Vec<String>| {
                (
                    p.len(),
                    fp(p.last().expect("non-empty")),
                    p.iter().map(fp).collect::<Vec<_>>(),
                )
            };
            key(a).cmp(&key(b))
        })
        .cloned();
    PathOracle {
        leaf: leaf_id.to_string(),
        all_paths,
        shortest,
    }
}

impl MaterializedPki {
    pub fn cert(&self, id: &str) -> Option<&MaterializedCert> {
        self.certs.iter().find(|c| c.id == id)
    }

    /// A certificate by id, or by bare node name (its first certificate).
    pub fn resolve(&self, name: &str) -> Result<&MaterializedCert, PkiError> {
        self.cert(name)
            .or_else(|| self.certs.iter().find(|c| c.subject == name))
            .ok_or_else(|| PkiError::UnknownCert(name.to_string()))
    }

    pub fn der(&self, name: &str) -> Result<Vec<u8>, PkiError> {
        self.resolve(name).map(|c| c.der.clone())
    }

    pub fn key_pkcs8(&self, node: &str) -> Option<&[u8]> {
        self.keys.get(node).map(Vec::as_slice)
    }

    /// Self-signed root certificates.
    pub fn anchors(&self) -> Vec<&MaterializedCert> {
        self.certs.iter().filter(|c| c.subject == c.issuer).collect()
    }

    /// Every certificate that is neither a leaf nor a self-signed root.
    pub fn intermediates(&self) -> Vec<&MaterializedCert> {
        self.certs
            .iter()
            .filter(|c| c.subject != c.issuer && self.spec.node(&c.subject).is_some_and(|n| n.role.is_ca()))
            .collect()
    }

    pub fn leaves(&self) -> Vec<&MaterializedCert> {
        self.certs
            .iter()
            .filter(|c| self.spec.node(&c.subject).is_some_and(|n| n.role == Role::Leaf))
            .collect()
    }

    /// Chain ids from a leaf along the oracle's shortest path, without the
    /// anchor (what a correctly configured server sends).
    pub fn served_chain(&self, leaf_id: &str) -> Vec<String> {
        let mut p = self
            .oracle
            .get(leaf_id)
            .and_then(|o| o.shortest.clone())
            .unwrap_or_default();
        p.pop();
        p
    }

    /// Writes anchors/intermediates PEM bundles and a trust store manifest
    /// into `dir`; returns the manifest path.
    pub fn write_trust_store(&self, dir: &std::path::Path, label: &str) -> std::io::Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let pem = |certs: Vec<&MaterializedCert>| {
            certs
                .iter()
                .map(|c| {
                    let b64 = pkiscope_core::encoding::b64_encode(&c.der);
                    let body: Vec<String> = b64
                        .as_bytes()
                        .chunks(64)
                        .map(|l| String::from_utf8_lossy(l).into_owned())
                        .collect();
                    format!(
                        "-----BEGIN CERTIFICATE-----\n{}\n-----END CERTIFICATE-----\n",
                        body.join("\n")
                    )
                })
                .collect::<String>()
        };
        std::fs::write(dir.join("anchors.pem"), pem(self.anchors()))?;
        std::fs::write(dir.join("intermediates.pem"), pem(self.intermediates()))?;
        let manifest = serde_json::json!({
            "store_label": label,
            "snapshot_date": self.now.date_naive().to_string(),
            "anchors": "anchors.pem",
            "intermediates": "intermediates.pem",
        });
        let path = dir.join("store.json");
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(path)
    }

    /// TLSA association data computed with an independent digest
    /// implementation: selector 0 = full certificate, 1 = SPKI;
    /// matching 0 = exact, 1 = SHA-256, 2 = SHA-512.
    pub fn tlsa_association(&self, cert_id: &str, selector: u8, matching: u8) -> Result<Vec<u8>, PkiError> {
        let cert = self.resolve(cert_id)?;
        let data = match selector {
            0 => cert.der.clone(),
            _ => spki_of(&cert.der).ok_or_else(|| PkiError::Generation("no spki".into()))?,
        };
        Ok(match matching {
            0 => data,
            1 => Sha256::digest(&data).to_vec(),
            _ => Sha512::digest(&data).to_vec(),
        })
    }
}

/// Extracts the SubjectPublicKeyInfo TLV by walking the TBS structure.
pub fn spki_of(cert_der: &[u8]) -> Option<Vec<u8>> {
    let mut outer = der::Reader::new(cert_der);
    let cert = outer.expect(der::TAG_SEQUENCE).ok()?;
    let mut cr = cert.reader();
    let tbs = cr.expect(der::TAG_SEQUENCE).ok()?;
    let mut t = tbs.reader();
    if t.peek_tag() == Some(0xa0) {
        t.read().ok()?;
    }
    for _ in 0..5 {
        t.read().ok()?; // serial, signature alg, issuer, validity, subject
    }
    Some(t.read().ok()?.raw.to_vec())
}

/// Three-node chain: `root` → `int` → `leaf` for the given SANs.
pub fn simple_chain_spec(sans: &[&str]) -> PkiSpec {
    PkiSpec {
        nodes: vec![
            NodeSpec::new("root", Role::Root),
            NodeSpec::new("int", Role::Intermediate),
            NodeSpec::leaf("leaf", sans),
        ],
        edges: vec![
            Edge {
                issuer: "root".into(),
                subject: "int".into(),
            },
            Edge {
                issuer: "int".into(),
                subject: "leaf".into(),
            },
        ],
        tlsa_publications: Vec::new(),
    }
}

/// Seeded random graph: 1-3 roots with optional cross-signs, 1-4
/// intermediates issued by roots or earlier intermediates, 1-2 leaves.
pub fn random_spec(seed: u64) -> PkiSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = PkiSpec::default();
    let n_roots = rng.random_range(1..=3);
    let roots: Vec<String> = (0..n_roots).map(|i| format!("root{i}")).collect();
    let mut cross_signed = BTreeSet::new();
    for (i, r) in roots.iter().enumerate() {
        for (j, other) in roots.iter().enumerate() {
            if i != j && rng.random_bool(0.3) {
                spec.edges.push(Edge {
                    issuer: other.clone(),
                    subject: r.clone(),
                });
                cross_signed.insert(r.clone());
            }
        }
    }
    for r in &roots {
        let role = if cross_signed.contains(r) {
            Role::CrossSignedRoot
        } else {
            Role::Root
        };
        spec.nodes.push(NodeSpec::new(r, role));
    }
    let n_ints = rng.random_range(1..=4);
    let mut ints: Vec<String> = Vec::new();
    for i in 0..n_ints {
        let name = format!("int{i}");
        let pool: Vec<String> = roots.iter().chain(ints.iter()).cloned().collect();
        let n_issuers = rng.random_range(1..=2usize).min(pool.len());
        let mut chosen = BTreeSet::new();
        while chosen.len() < n_issuers {
            chosen.insert(pool[rng.random_range(0..pool.len())].clone());
        }
        for iss in chosen {
            spec.edges.push(Edge {
                issuer: iss,
                subject: name.clone(),
            });
        }
        spec.nodes.push(NodeSpec::new(&name, Role::Intermediate));
        ints.push(name);
    }
    let n_leaves = rng.random_range(1..=2);
    for i in 0..n_leaves {
        let name = format!("leaf{i}");
        let pool: Vec<String> = if rng.random_bool(0.1) {
            roots.clone()
        } else {
            ints.clone()
        };
        let n_issuers = rng.random_range(1..=2usize).min(pool.len());
        let mut chosen = BTreeSet::new();
        while chosen.len() < n_issuers {
            chosen.insert(pool[rng.random_range(0..pool.len())].clone());
        }
        for iss in chosen {
            spec.edges.push(Edge {
                issuer: iss,
                subject: name.clone(),
            });
        }
        spec.nodes
            .push(NodeSpec::leaf(&name, &[&format!("{name}.fixture.test")]));
    }
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    fn now() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2026-01-15T12:00:00Z")
            .unwrap()
            .with_timezone(&Utc)
    }

    #[test]
    fn three_node_chain() {
        let pki = generate_pki(&simple_chain_spec(&["a.fixture.test"]), 7, now()).unwrap();
        assert_eq!(pki.certs.len(), 3);
        let o = &pki.oracle["leaf@int"];
        assert_eq!(o.shortest.as_ref().unwrap().len(), 3);
        assert_eq!(o.all_paths.len(), 1);
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_pki(&simple_chain_spec(&["a.fixture.test"]), 7, now()).unwrap();
        let b = generate_pki(&simple_chain_spec(&["a.fixture.test"]), 7, now()).unwrap();
        let c = generate_pki(&simple_chain_spec(&["a.fixture.test"]), 8, now()).unwrap();
        assert_eq!(a.certs, b.certs);
        assert_ne!(a.certs, c.certs);
    }

    #[test]
    fn cross_signed_root_gives_two_paths() {
        let mut spec = simple_chain_spec(&["a.fixture.test"]);
        spec.nodes.push(NodeSpec::new("old", Role::Root));
        spec.nodes[0].role = Role::CrossSignedRoot;
        spec.edges.push(Edge {
            issuer: "old".into(),
            subject: "root".into(),
        });
        let pki = generate_pki(&spec, 1, now()).unwrap();
        let o = &pki.oracle["leaf@int"];
        let lens: Vec<usize> = o.all_paths.iter().map(Vec::len).collect();
        assert_eq!(
            lens.iter().copied().collect::<BTreeSet<_>>(),
            [3, 4].into_iter().collect()
        );
        assert_eq!(o.shortest.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn unanchored_leaf_rejected() {
        let spec = PkiSpec {
            nodes: vec![
                NodeSpec::new("int", Role::Intermediate),
                NodeSpec::leaf("leaf", &["x.test"]),
            ],
            edges: vec![Edge {
                issuer: "int".into(),
                subject: "leaf".into(),
            }],
            tlsa_publications: vec![],
        };
        assert_eq!(
            generate_pki(&spec, 1, now()).unwrap_err(),
            PkiError::Unanchored("int".into())
        );
    }

    #[test]
    fn policy_oids_materialize_exactly() {
        let mut spec = simple_chain_spec(&["a.fixture.test"]);
        spec.nodes[2].policy_oids = vec![
            "2.23.140.1.2.1".into(),
            "2.23.140.1.2.2".into(),
            "2.23.140.1.2.3".into(),
        ];
        let pki = generate_pki(&spec, 3, now()).unwrap();
        let rec = pkiscope_core::x509::parse_certificate(&pki.der("leaf").unwrap()).unwrap();
        assert_eq!(
            rec.policy_oids.into_iter().collect::<Vec<_>>(),
            spec.nodes[2].policy_oids
        );
    }

    #[test]
    fn random_specs_are_valid() {
        for seed in 0..100 {
            let spec = random_spec(seed);
            spec.validate().unwrap();
        }
    }
}
