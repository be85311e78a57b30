//! Revocation information: endpoint extraction and stapled OCSP checks.

use serde::{Deserialize, Serialize};

use super::cert::CertificateRecord;
use super::sig::{spki_parts, verify_signed_data};
use crate::clock::Timestamp;
use crate::der::{self, DerError, Reader};
use crate::encoding::sha256;

const OID_OCSP_BASIC: &str = "1.3.6.1.5.5.7.48.1.1";
const OID_SHA1: &str = "1.3.14.3.2.26";
const OID_SHA256: &str = "2.16.840.1.101.3.4.2.1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcspCertStatus {
    Good,
    Revoked,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertId {
    pub hash_algorithm: String,
    pub issuer_name_hash: String,
    pub issuer_key_hash: String,
    pub serial: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleResponse {
    pub cert_id: CertId,
    pub status: OcspCertStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revoked_at: Option<Timestamp>,
    pub this_update: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_update: Option<Timestamp>,
}

/// A decoded basic OCSP response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcspResponse {
    pub response_status: u64,
    pub produced_at: Option<Timestamp>,
    pub responses: Vec<SingleResponse>,
    pub tbs_response_data: Vec<u8>,
    pub signature_algorithm: String,
    pub signature: Vec<u8>,
    /// Certificates embedded by a delegated responder.
    pub certs: Vec<Vec<u8>>,
    pub responder_key_hash: Option<Vec<u8>>,
    pub responder_name: Option<Vec<u8>>,
}

impl OcspResponse {
    /// Window of the first single response.
    pub fn window(&self) -> Option<(Timestamp, Option<Timestamp>)> {
        self.responses.first().map(|r| (r.this_update, r.next_update))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OcspError {
    #[error("{0}")]
    Der(#[from] DerError),
    #[error("OCSP response status {0}")]
    Unsuccessful(u64),
    #[error("unsupported response type {0}")]
    ResponseType(String),
}

pub fn parse_ocsp_response(data: &[u8]) -> Result<OcspResponse, OcspError> {
    der::check_structure(data)?;
    let mut top = Reader::new(data);
    let resp = top.expect(der::TAG_SEQUENCE)?;
    top.finish()?;
    let mut r = resp.reader();
    let status = r.expect(der::TAG_ENUMERATED)?.small_uint()?;
    let Some(bytes) = r.optional(0xa0)? else {
        return Err(OcspError::Unsuccessful(status));
    };
    if status != 0 {
        return Err(OcspError::Unsuccessful(status));
    }
    let mut br = bytes.reader();
    let rb = br.expect(der::TAG_SEQUENCE)?;
    let mut rbr = rb.reader();
    let rtype = rbr.expect(der::TAG_OID)?.oid()?;
    if rtype != OID_OCSP_BASIC {
        return Err(OcspError::ResponseType(rtype));
    }
    let inner = rbr.expect(der::TAG_OCTET_STRING)?;
    let mut ir = Reader::new(inner.content);
    let basic = ir.expect(der::TAG_SEQUENCE)?;
    let mut bsr = basic.reader();
    let tbs = bsr.expect(der::TAG_SEQUENCE)?;
    let alg = bsr.expect(der::TAG_SEQUENCE)?;
    let signature_algorithm = alg.reader().expect(der::TAG_OID)?.oid()?;
    let signature = bsr.expect(der::TAG_BIT_STRING)?.bit_string_bytes()?.to_vec();
    let mut certs = Vec::new();
    if let Some(c) = bsr.optional(0xa0)? {
        let mut cr = c.reader();
        let seq = cr.expect(der::TAG_SEQUENCE)?;
        let mut sr = seq.reader();
        while !sr.is_empty() {
            certs.push(sr.read()?.raw.to_vec());
        }
    }

    let mut tr = tbs.reader();
    tr.optional(0xa0)?;
    let responder = tr.read()?;
    let (responder_name, responder_key_hash) = match responder.tag {
        0xa1 => (Some(responder.content.to_vec()), None),
        0xa2 => (
            None,
            Some(responder.reader().expect(der::TAG_OCTET_STRING)?.content.to_vec()),
        ),
        _ => (None, None),
    };
    let produced_at = Some(tr.expect(der::TAG_GENERALIZED_TIME)?.time()?);
    let list = tr.expect(der::TAG_SEQUENCE)?;
    let mut lr = list.reader();
    let mut responses = Vec::new();
    while !lr.is_empty() {
        responses.push(parse_single(lr.expect(der::TAG_SEQUENCE)?)?);
    }
    Ok(OcspResponse {
        response_status: status,
        produced_at,
        responses,
        tbs_response_data: tbs.raw.to_vec(),
        signature_algorithm,
        signature,
        certs,
        responder_key_hash,
        responder_name,
    })
}

fn parse_single(t: der::Tlv<'_>) -> Result<SingleResponse, OcspError> {
    let mut r = t.reader();
    let id = r.expect(der::TAG_SEQUENCE)?;
    let mut ir = id.reader();
    let alg = ir.expect(der::TAG_SEQUENCE)?;
    let hash_algorithm = alg.reader().expect(der::TAG_OID)?.oid()?;
    let name_hash = ir.expect(der::TAG_OCTET_STRING)?;
    let key_hash = ir.expect(der::TAG_OCTET_STRING)?;
    let serial = ir.expect(der::TAG_INTEGER)?;
    let st = r.read()?;
    let (status, revoked_at) = match st.tag {
        0x80 => (OcspCertStatus::Good, None),
        0xa1 => {
            let at = st.reader().read()?.time()?;
            (OcspCertStatus::Revoked, Some(at))
        }
        _ => (OcspCertStatus::Unknown, None),
    };
    let this_update = r.expect(der::TAG_GENERALIZED_TIME)?.time()?;
    let next_update = match r.optional(0xa0)? {
        Some(n) => Some(n.reader().expect(der::TAG_GENERALIZED_TIME)?.time()?),
        None => None,
    };
    Ok(SingleResponse {
        cert_id: CertId {
            hash_algorithm,
            issuer_name_hash: hex::encode(name_hash.content),
            issuer_key_hash: hex::encode(key_hash.content),
            serial: hex::encode(serial.content),
        },
        status,
        revoked_at,
        this_update,
        next_update,
    })
}

fn hash_with(alg: &str, data: &[u8]) -> Option<Vec<u8>> {
    match alg {
        OID_SHA1 => Some(
            ring::digest::digest(&ring::digest::SHA1_FOR_LEGACY_USE_ONLY, data)
                .as_ref()
                .to_vec(),
        ),
        OID_SHA256 => Some(sha256(data).to_vec()),
        _ => None,
    }
}

/// Whether a CertID names `cert` as issued by `issuer`. Without the issuer
/// only the serial can be compared.
pub fn cert_id_matches(id: &CertId, cert: &CertificateRecord, issuer: Option<&CertificateRecord>) -> bool {
    if id.serial != cert.serial {
        return false;
    }
    let Some(issuer) = issuer else {
        return true;
    };
    let key_bits = spki_parts(&issuer.spki).map(|(_, _, b)| b).unwrap_or_default();
    let name = hash_with(&id.hash_algorithm, &cert.issuer.raw);
    let key = hash_with(&id.hash_algorithm, &key_bits);
    name.map(hex::encode).as_deref() == Some(id.issuer_name_hash.as_str())
        && key.map(hex::encode).as_deref() == Some(id.issuer_key_hash.as_str())
}

/// DER OCSPRequest for one certificate, using SHA-256 CertIDs.
pub fn build_ocsp_request(cert: &CertificateRecord, issuer: &CertificateRecord) -> Vec<u8> {
    let key_bits = spki_parts(&issuer.spki).map(|(_, _, b)| b).unwrap_or_default();
    let alg = der::encode_sequence(&[
        &der::encode_oid(OID_SHA256).unwrap_or_default(),
        &der::encode_tlv(der::TAG_NULL, &[]),
    ]);
    let serial = hex::decode(&cert.serial).unwrap_or_default();
    let cert_id = der::encode_sequence(&[
        &alg,
        &der::encode_tlv(der::TAG_OCTET_STRING, &sha256(&cert.issuer.raw)),
        &der::encode_tlv(der::TAG_OCTET_STRING, &sha256(&key_bits)),
        &der::encode_tlv(der::TAG_INTEGER, &serial),
    ]);
    let request = der::encode_sequence(&[&cert_id]);
    let list = der::encode_sequence(&[&request]);
    let tbs = der::encode_sequence(&[&list]);
    der::encode_sequence(&[&tbs])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RevocationStatus {
    NotChecked,
    GoodStapled,
    RevokedStapled,
    UnknownStapled,
    StaleStaple,
    NotYetValid,
    BadSignature,
    /// No issuer was available to check the responder signature.
    Unverifiable,
    WrongCertificate,
    DecodeFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Responder {
    Issuer,
    Delegated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationReport {
    pub ocsp_urls: Vec<String>,
    pub crl_urls: Vec<String>,
    pub status: RevocationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub this_update: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_update: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revoked_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responder: Option<Responder>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Finds who signed the response: the issuer itself, or a certificate in
/// the response that the issuer signed and that carries the OCSP-signing
/// purpose.
fn responder_signature(resp: &OcspResponse, issuer: &CertificateRecord) -> Option<Responder> {
    if verify_signed_data(
        &issuer.spki,
        &resp.signature_algorithm,
        &resp.tbs_response_data,
        &resp.signature,
    ) {
        return Some(Responder::Issuer);
    }
    for der in &resp.certs {
        let Ok(delegate) = super::cert::parse_certificate(der) else {
            continue;
        };
        if delegate.ext_key_usage.contains("ocsp-signing")
            && super::cert::signed_by(&delegate, issuer)
            && verify_signed_data(
                &delegate.spki,
                &resp.signature_algorithm,
                &resp.tbs_response_data,
                &resp.signature,
            )
        {
            return Some(Responder::Delegated);
        }
    }
    None
}

pub fn check_revocation_info(
    cert: &CertificateRecord,
    issuer: Option<&CertificateRecord>,
    stapled: Option<&[u8]>,
    at: Timestamp,
) -> RevocationReport {
    let mut report = RevocationReport {
        ocsp_urls: cert.aia_ocsp_urls.clone(),
        crl_urls: cert.crl_urls.clone(),
        status: RevocationStatus::NotChecked,
        this_update: None,
        next_update: None,
        revoked_at: None,
        responder: None,
        detail: None,
    };
    let Some(blob) = stapled else {
        return report;
    };
    let resp = match parse_ocsp_response(blob) {
        Ok(r) => r,
        Err(e) => {
            report.status = RevocationStatus::DecodeFailure;
            report.detail = Some(e.to_string());
            return report;
        }
    };
    let Some(single) = resp
        .responses
        .iter()
        .find(|s| cert_id_matches(&s.cert_id, cert, issuer))
    else {
        report.status = RevocationStatus::WrongCertificate;
        return report;
    };
    report.this_update = Some(single.this_update);
    report.next_update = single.next_update;
    report.revoked_at = single.revoked_at;
    let Some(issuer) = issuer else {
        report.status = RevocationStatus::Unverifiable;
        return report;
    };
    match responder_signature(&resp, issuer) {
        Some(r) => report.responder = Some(r),
        None => {
            report.status = RevocationStatus::BadSignature;
            return report;
        }
    }
    report.status = if single.this_update > at {
        RevocationStatus::NotYetValid
    } else if single.next_update.is_some_and(|n| n < at) {
        RevocationStatus::StaleStaple
    } else {
        match single.status {
            OcspCertStatus::Good => RevocationStatus::GoodStapled,
            OcspCertStatus::Revoked => RevocationStatus::RevokedStapled,
            OcspCertStatus::Unknown => RevocationStatus::UnknownStapled,
        }
    };
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_successful_status() {
        // OCSPResponse { responseStatus tryLater(3) }
        let der = der::encode_sequence(&[&der::encode_tlv(der::TAG_ENUMERATED, &[3])]);
        assert_eq!(parse_ocsp_response(&der), Err(OcspError::Unsuccessful(3)));
    }

    #[test]
    fn garbage_is_decode_failure() {
        assert!(parse_ocsp_response(&[0x30, 0x05, 0x01]).is_err());
    }
}
