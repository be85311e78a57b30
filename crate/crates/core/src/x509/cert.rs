//! Certificate parsing into [`CertificateRecord`].

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use x509_parser::certificate::X509Certificate;
use x509_parser::extensions::{DistributionPointName, GeneralName, ParsedExtension};
use x509_parser::prelude::FromDer;
use x509_parser::x509::X509Name;

use crate::clock::Timestamp;
use crate::der;
use crate::encoding::{b64, sha256, Fingerprint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SanKind {
    Dns,
    Ip,
    Email,
    Uri,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct San {
    pub kind: SanKind,
    pub value: String,
}

impl San {
    pub fn dns(v: impl Into<String>) -> Self {
        San {
            kind: SanKind::Dns,
            value: v.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyUsageFlag {
    DigitalSignature,
    ContentCommitment,
    KeyEncipherment,
    DataEncipherment,
    KeyAgreement,
    KeyCertSign,
    CrlSign,
    EncipherOnly,
    DecipherOnly,
}

/// Attribute map of a distinguished name plus its exact encoding, which is
/// what issuer/subject linkage compares.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DistinguishedName {
    pub attributes: BTreeMap<String, Vec<String>>,
    #[serde(with = "b64")]
    pub raw: Vec<u8>,
}

impl DistinguishedName {
    pub fn first(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).and_then(|v| v.first()).map(String::as_str)
    }

    pub fn has(&self, key: &str) -> bool {
        self.attributes.get(key).is_some_and(|v| !v.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub fingerprint: Fingerprint,
    pub serial: String,
    pub subject: DistinguishedName,
    pub issuer: DistinguishedName,
    pub sans: Vec<San>,
    pub not_before: Timestamp,
    pub not_after: Timestamp,
    pub policy_oids: BTreeSet<String>,
    pub is_ca: bool,
    pub key_usage: BTreeSet<KeyUsageFlag>,
    /// Well-known purposes by name (`server-auth`, ...), others by OID.
    pub ext_key_usage: BTreeSet<String>,
    pub sct_count: u32,
    pub aia_ocsp_urls: Vec<String>,
    pub aia_ca_issuer_urls: Vec<String>,
    pub crl_urls: Vec<String>,
    /// SHA-256 of the DER SubjectPublicKeyInfo.
    pub spki_digest: Fingerprint,
    #[serde(with = "b64")]
    pub spki: Vec<u8>,
    pub signature_algorithm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_key_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authority_key_id: Option<String>,
    /// Extensions this parser does not interpret, by OID.
    #[serde(default)]
    pub unknown_extensions: BTreeMap<String, String>,
    #[serde(with = "b64")]
    pub raw: Vec<u8>,
}

impl CertificateRecord {
    pub fn dns_sans(&self) -> impl Iterator<Item = &str> {
        self.sans
            .iter()
            .filter(|s| s.kind == SanKind::Dns)
            .map(|s| s.value.as_str())
    }

    pub fn is_self_issued(&self) -> bool {
        self.subject.raw == self.issuer.raw
    }

    pub fn time_valid_at(&self, at: Timestamp) -> bool {
        self.not_before <= at && at <= self.not_after
    }

    /// Re-parses the raw DER for signature work.
    pub fn parsed(&self) -> Option<X509Certificate<'_>> {
        X509Certificate::from_der(&self.raw).ok().map(|(_, c)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("certificate parse error at byte offset {offset}: {reason}")]
pub struct CertParseError {
    pub offset: usize,
    pub reason: String,
}

const OID_SCT_LIST: &str = "1.3.6.1.4.1.11129.2.4.2";
const OID_AD_OCSP: &str = "1.3.6.1.5.5.7.48.1";
const OID_AD_CA_ISSUERS: &str = "1.3.6.1.5.5.7.48.2";

/// Short names for the attributes reports care about; everything else is
/// keyed by dotted OID.
fn attribute_name(oid: &str) -> Option<&'static str> {
    Some(match oid {
        "2.5.4.3" => "CN",
        "2.5.4.4" => "surname",
        "2.5.4.5" => "serialNumber",
        "2.5.4.6" => "C",
        "2.5.4.7" => "L",
        "2.5.4.8" => "ST",
        "2.5.4.10" => "O",
        "2.5.4.11" => "OU",
        "2.5.4.42" => "givenName",
        "2.5.4.15" => "businessCategory",
        "1.2.840.113549.1.9.1" => "emailAddress",
        "1.3.6.1.4.1.311.60.2.1.3" => "jurisdictionC",
        _ => return None,
    })
}

fn convert_name(name: &X509Name<'_>) -> DistinguishedName {
    let mut attributes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for atv in name.iter_attributes() {
        let oid = atv.attr_type().to_id_string();
        let key = attribute_name(&oid).map(str::to_string).unwrap_or(oid);
        let value = match atv.as_str() {
            Ok(s) => s.to_string(),
            Err(_) => hex::encode(atv.as_slice()),
        };
        attributes.entry(key).or_default().push(value);
    }
    DistinguishedName {
        attributes,
        raw: name.as_raw().to_vec(),
    }
}

fn fail(data: &[u8], reason: String) -> CertParseError {
    let offset = match der::check_structure(data) {
        Err(e) => e.offset,
        Ok(()) => 0,
    };
    CertParseError { offset, reason }
}

fn ip_string(bytes: &[u8]) -> String {
    match bytes.len() {
        4 => IpAddr::from(<[u8; 4]>::try_from(bytes).unwrap_or_default()).to_string(),
        16 => IpAddr::from(<[u8; 16]>::try_from(bytes).unwrap_or_default()).to_string(),
        _ => hex::encode(bytes),
    }
}

fn to_timestamp(t: x509_parser::time::ASN1Time) -> Timestamp {
    chrono::DateTime::from_timestamp(t.timestamp(), 0).unwrap_or_default()
}

/// Counts SCTs in the raw extension value: an OCTET STRING wrapping a
/// 2-byte-length-prefixed list of 2-byte-length-prefixed entries.
fn count_scts(value: &[u8]) -> u32 {
    let inner = match der::Reader::new(value).read() {
        Ok(t) if t.tag == der::TAG_OCTET_STRING => t.content,
        _ => value,
    };
    if inner.len() < 2 {
        return 0;
    }
    let total = u16::from_be_bytes([inner[0], inner[1]]) as usize;
    let list = &inner[2..inner.len().min(2 + total)];
    let mut pos = 0;
    let mut n = 0;
    while pos + 2 <= list.len() {
        let l = u16::from_be_bytes([list[pos], list[pos + 1]]) as usize;
        pos += 2 + l;
        if pos > list.len() {
            break;
        }
        n += 1;
    }
    n
}

pub fn parse_certificate(data: &[u8]) -> Result<CertificateRecord, CertParseError> {
    der::check_structure(data).map_err(|e| CertParseError {
        offset: e.offset,
        reason: format!("{:?}", e.kind),
    })?;
    let (rest, cert) = X509Certificate::from_der(data).map_err(|e| fail(data, e.to_string()))?;
    if !rest.is_empty() {
        return Err(CertParseError {
            offset: data.len() - rest.len(),
            reason: "trailing data".into(),
        });
    }

    let mut sans = Vec::new();
    let mut policy_oids = BTreeSet::new();
    let mut key_usage = BTreeSet::new();
    let mut ext_key_usage = BTreeSet::new();
    let mut sct_count = 0;
    let mut aia_ocsp_urls = Vec::new();
    let mut aia_ca_issuer_urls = Vec::new();
    let mut crl_urls = Vec::new();
    let mut subject_key_id = None;
    let mut authority_key_id = None;
    let mut unknown_extensions = BTreeMap::new();
    let mut is_ca = false;

    for ext in cert.extensions() {
        let oid = ext.oid.to_id_string();
        match ext.parsed_extension() {
            ParsedExtension::SubjectAlternativeName(san) => {
                for gn in &san.general_names {
                    sans.push(match gn {
                        GeneralName::DNSName(d) => San {
                            kind: SanKind::Dns,
                            value: d.to_string(),
                        },
                        GeneralName::IPAddress(b) => San {
                            kind: SanKind::Ip,
                            value: ip_string(b),
                        },
                        GeneralName::RFC822Name(e) => San {
                            kind: SanKind::Email,
                            value: e.to_string(),
                        },
                        GeneralName::URI(u) => San {
                            kind: SanKind::Uri,
                            value: u.to_string(),
                        },
                        other => San {
                            kind: SanKind::Other,
                            value: format!("{other:?}"),
                        },
                    });
                }
            }
            ParsedExtension::CertificatePolicies(p) => {
                for info in p.iter() {
                    policy_oids.insert(info.policy_id.to_id_string());
                }
            }
            ParsedExtension::BasicConstraints(bc) => is_ca = bc.ca,
            ParsedExtension::KeyUsage(ku) => {
                let flags = [
                    (ku.digital_signature(), KeyUsageFlag::DigitalSignature),
                    (ku.non_repudiation(), KeyUsageFlag::ContentCommitment),
                    (ku.key_encipherment(), KeyUsageFlag::KeyEncipherment),
                    (ku.data_encipherment(), KeyUsageFlag::DataEncipherment),
                    (ku.key_agreement(), KeyUsageFlag::KeyAgreement),
                    (ku.key_cert_sign(), KeyUsageFlag::KeyCertSign),
                    (ku.crl_sign(), KeyUsageFlag::CrlSign),
                    (ku.encipher_only(), KeyUsageFlag::EncipherOnly),
                    (ku.decipher_only(), KeyUsageFlag::DecipherOnly),
                ];
                key_usage.extend(flags.into_iter().filter(|(on, _)| *on).map(|(_, f)| f));
            }
            ParsedExtension::ExtendedKeyUsage(eku) => {
                let named = [
                    (eku.any, "any"),
                    (eku.server_auth, "server-auth"),
                    (eku.client_auth, "client-auth"),
                    (eku.code_signing, "code-signing"),
                    (eku.email_protection, "email-protection"),
                    (eku.time_stamping, "time-stamping"),
                    (eku.ocsp_signing, "ocsp-signing"),
                ];
                ext_key_usage.extend(named.into_iter().filter(|(on, _)| *on).map(|(_, n)| n.to_string()));
                ext_key_usage.extend(eku.other.iter().map(|o| o.to_id_string()));
            }
            ParsedExtension::AuthorityInfoAccess(aia) => {
                for ad in &aia.accessdescs {
                    if let GeneralName::URI(u) = ad.access_location {
                        match ad.access_method.to_id_string().as_str() {
                            OID_AD_OCSP => aia_ocsp_urls.push(u.to_string()),
                            OID_AD_CA_ISSUERS => aia_ca_issuer_urls.push(u.to_string()),
                            _ => {}
                        }
                    }
                }
            }
            ParsedExtension::CRLDistributionPoints(dps) => {
                for dp in dps.iter() {
                    if let Some(DistributionPointName::FullName(names)) = &dp.distribution_point {
                        for n in names {
                            if let GeneralName::URI(u) = n {
                                crl_urls.push(u.to_string());
                            }
                        }
                    }
                }
            }
            ParsedExtension::SubjectKeyIdentifier(k) => subject_key_id = Some(hex::encode(k.0)),
            ParsedExtension::AuthorityKeyIdentifier(a) => {
                authority_key_id = a.key_identifier.as_ref().map(|k| hex::encode(k.0))
            }
            ParsedExtension::SCT(list) => sct_count = list.len() as u32,
            _ if oid == OID_SCT_LIST => sct_count = count_scts(ext.value),
            ParsedExtension::UnsupportedExtension { .. } | ParsedExtension::ParseError { .. } => {
                unknown_extensions.insert(oid, crate::encoding::b64_encode(ext.value));
            }
            _ => {}
        }
    }

    let spki = cert.public_key().raw.to_vec();
    Ok(CertificateRecord {
        fingerprint: Fingerprint::of(data),
        serial: hex::encode(cert.raw_serial()),
        subject: convert_name(cert.subject()),
        issuer: convert_name(cert.issuer()),
        sans,
        not_before: to_timestamp(cert.validity().not_before),
        not_after: to_timestamp(cert.validity().not_after),
        policy_oids,
        is_ca,
        key_usage,
        ext_key_usage,
        sct_count,
        aia_ocsp_urls,
        aia_ca_issuer_urls,
        crl_urls,
        spki_digest: Fingerprint(sha256(&spki)),
        spki,
        signature_algorithm: cert.signature_algorithm.algorithm.to_id_string(),
        subject_key_id,
        authority_key_id,
        unknown_extensions,
        raw: data.to_vec(),
    })
}

/// Verifies that `issuer`'s key signed `subject`.
pub fn signed_by(subject: &CertificateRecord, issuer: &CertificateRecord) -> bool {
    let (Some(s), Some(i)) = (subject.parsed(), issuer.parsed()) else {
        return false;
    };
    s.verify_signature(Some(i.public_key())).is_ok()
}

/// Splits a file into DER certificates: PEM blocks when the content looks
/// like PEM, otherwise the whole buffer as one DER blob.
pub fn split_certificates(data: &[u8]) -> Vec<Vec<u8>> {
    let looks_pem = data.windows(11).any(|w| w == b"-----BEGIN ");
    if !looks_pem {
        return vec![data.to_vec()];
    }
    x509_parser::pem::Pem::iter_from_buffer(data)
        .filter_map(Result::ok)
        .filter(|p| p.label == "CERTIFICATE")
        .map(|p| p.contents)
        .collect()
}
