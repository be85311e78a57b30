//! Signed OCSP responses for materialized certificates.

use chrono::{DateTime, Utc};
use ring::signature::{Ed25519KeyPair, KeyPair as _};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pkiscope_core::der;
use pkiscope_core::x509::parse_certificate;

use crate::pki::{MaterializedPki, PkiError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum OcspStatusSpec {
    Good,
    Revoked { revoked_days: i64 },
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "signer", content = "node")]
pub enum OcspSigner {
    Issuer,
    /// A responder certificate (by id or node name) issued by the issuer.
    Delegated(String),
    /// Signed with an unrelated node's key.
    WrongKey(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcspSpec {
    #[serde(flatten)]
    pub status: OcspStatusSpec,
    /// thisUpdate offset from the materialization time, in hours.
    #[serde(default = "default_this_update")]
    pub this_update_hours: i64,
    #[serde(default = "default_next_update")]
    pub next_update_hours: Option<i64>,
    #[serde(default = "default_signer")]
    pub signer: OcspSigner,
}

fn default_this_update() -> i64 {
    -1
}

fn default_next_update() -> Option<i64> {
    Some(24 * 7)
}

fn default_signer() -> OcspSigner {
    OcspSigner::Issuer
}

impl Default for OcspSpec {
    fn default() -> Self {
        OcspSpec {
            status: OcspStatusSpec::Good,
            this_update_hours: default_this_update(),
            next_update_hours: default_next_update(),
            signer: default_signer(),
        }
    }
}

fn gtime(t: DateTime<Utc>) -> Vec<u8> {
    der::encode_tlv(
        der::TAG_GENERALIZED_TIME,
        t.format("%Y%m%d%H%M%SZ").to_string().as_bytes(),
    )
}

fn signing_key(pki: &MaterializedPki, node: &str) -> Result<Ed25519KeyPair, PkiError> {
    let pkcs8 = pki
        .key_pkcs8(node)
        .ok_or_else(|| PkiError::UnknownCert(node.to_string()))?;
    Ed25519KeyPair::from_pkcs8_maybe_unchecked(pkcs8).map_err(|e| PkiError::Generation(e.to_string()))
}

/// Builds a DER OCSPResponse for certificate `cert_id` (id or node name).
pub fn build_ocsp_response(pki: &MaterializedPki, cert_id: &str, spec: &OcspSpec) -> Result<Vec<u8>, PkiError> {
    let cert = pki.resolve(cert_id)?;
    let rec = parse_certificate(&cert.der).map_err(|e| PkiError::Generation(e.reason))?;
    let issuer_key = signing_key(pki, &cert.issuer)?;
    let issuer_key_bits = issuer_key.public_key().as_ref().to_vec();

    let alg = der::encode_sequence(&[
        &der::encode_oid("2.16.840.1.101.3.4.2.1").expect("static oid"),
        &der::encode_tlv(der::TAG_NULL, &[]),
    ]);
    let serial = hex::decode(&rec.serial).map_err(|e| PkiError::Generation(e.to_string()))?;
    let cert_id_der = der::encode_sequence(&[
        &alg,
        &der::encode_tlv(der::TAG_OCTET_STRING, &Sha256::digest(&rec.issuer.raw)),
        &der::encode_tlv(der::TAG_OCTET_STRING, &Sha256::digest(&issuer_key_bits)),
        &der::encode_tlv(der::TAG_INTEGER, &serial),
    ]);
    let now = pki.now;
    let status = match spec.status {
        OcspStatusSpec::Good => der::encode_tlv(0x80, &[]),
        OcspStatusSpec::Revoked { revoked_days } => {
            der::encode_tlv(0xa1, &gtime(now + chrono::TimeDelta::days(revoked_days)))
        }
        OcspStatusSpec::Unknown => der::encode_tlv(0x82, &[]),
    };
    let this_update = gtime(now + chrono::TimeDelta::hours(spec.this_update_hours));
    let mut single_parts: Vec<Vec<u8>> = vec![cert_id_der, status, this_update];
    if let Some(h) = spec.next_update_hours {
        single_parts.push(der::encode_tlv(0xa0, &gtime(now + chrono::TimeDelta::hours(h))));
    }
    let refs: Vec<&[u8]> = single_parts.iter().map(Vec::as_slice).collect();
    let single = der::encode_sequence(&refs);

    let (signer_key, embedded) = match &spec.signer {
        OcspSigner::Issuer => (issuer_key, None),
        OcspSigner::Delegated(name) => {
            let c = pki.resolve(name)?;
            (signing_key(pki, &c.subject)?, Some(c.der.clone()))
        }
        OcspSigner::WrongKey(node) => (signing_key(pki, node)?, None),
    };
    let key_hash = ring::digest::digest(
        &ring::digest::SHA1_FOR_LEGACY_USE_ONLY,
        signer_key.public_key().as_ref(),
    );
    let responder_id = der::encode_tlv(0xa2, &der::encode_tlv(der::TAG_OCTET_STRING, key_hash.as_ref()));
    let tbs = der::encode_sequence(&[&responder_id, &gtime(now), &der::encode_sequence(&[&single])]);
    let sig = signer_key.sign(&tbs);
    let mut bits = vec![0u8];
    bits.extend_from_slice(sig.as_ref());
    let sig_alg = der::encode_sequence(&[&der::encode_oid("1.3.101.112").expect("static oid")]);
    let mut basic_parts = vec![tbs, sig_alg, der::encode_tlv(der::TAG_BIT_STRING, &bits)];
    if let Some(c) = embedded {
        basic_parts.push(der::encode_tlv(0xa0, &der::encode_sequence(&[&c])));
    }
    let refs: Vec<&[u8]> = basic_parts.iter().map(Vec::as_slice).collect();
    let basic = der::encode_sequence(&refs);
    let response_bytes = der::encode_sequence(&[
        &der::encode_oid("1.3.6.1.5.5.7.48.1.1").expect("static oid"),
        &der::encode_tlv(der::TAG_OCTET_STRING, &basic),
    ]);
    Ok(der::encode_sequence(&[
        &der::encode_tlv(der::TAG_ENUMERATED, &[0]),
        &der::encode_tlv(0xa0, &response_bytes),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pki::{generate_pki, simple_chain_spec, Edge, NodeSpec, Role};
    use pkiscope_core::x509::{check_revocation_info, RevocationStatus};

    fn pki() -> MaterializedPki {
        let mut spec = simple_chain_spec(&["a.fixture.test"]);
        spec.nodes.push(NodeSpec::new("responder", Role::OcspResponder));
        spec.edges.push(Edge {
            issuer: "int".into(),
            subject: "responder".into(),
        });
        generate_pki(&spec, 11, Utc::now()).unwrap()
    }

    fn check(pki: &MaterializedPki, spec: &OcspSpec) -> RevocationStatus {
        let blob = build_ocsp_response(pki, "leaf", spec).unwrap();
        let leaf = parse_certificate(&pki.der("leaf").unwrap()).unwrap();
        let int = parse_certificate(&pki.der("int@root").unwrap()).unwrap();
        check_revocation_info(&leaf, Some(&int), Some(&blob), pki.now).status
    }

    #[test]
    fn statuses_round_trip() {
        let p = pki();
        assert_eq!(check(&p, &OcspSpec::default()), RevocationStatus::GoodStapled);
        let revoked = OcspSpec {
            status: OcspStatusSpec::Revoked { revoked_days: -2 },
            ..OcspSpec::default()
        };
        assert_eq!(check(&p, &revoked), RevocationStatus::RevokedStapled);
        let stale = OcspSpec {
            this_update_hours: -48,
            next_update_hours: Some(-24),
            ..OcspSpec::default()
        };
        assert_eq!(check(&p, &stale), RevocationStatus::StaleStaple);
        let wrong = OcspSpec {
            signer: OcspSigner::WrongKey("root".into()),
            ..OcspSpec::default()
        };
        assert_eq!(check(&p, &wrong), RevocationStatus::BadSignature);
        let delegated = OcspSpec {
            signer: OcspSigner::Delegated("responder".into()),
            ..OcspSpec::default()
        };
        assert_eq!(check(&p, &delegated), RevocationStatus::GoodStapled);
    }
}
