//! Signature checks over arbitrary signed structures (OCSP responses),
//! keyed by algorithm OID and the signer's SubjectPublicKeyInfo.

use ring::signature::{self, UnparsedPublicKey, VerificationAlgorithm};

use crate::der::{self, Reader};

const OID_EC_PUBLIC_KEY: &str = "1.2.840.10045.2.1";
const OID_P256: &str = "1.2.840.10045.3.1.7";
const OID_P384: &str = "1.3.132.0.34";

/// Splits a DER SubjectPublicKeyInfo into (algorithm OID, curve OID if any,
/// key bits).
pub fn spki_parts(spki: &[u8]) -> Option<(String, Option<String>, Vec<u8>)> {
    let mut outer = Reader::new(spki);
    let seq = outer.expect(der::TAG_SEQUENCE).ok()?;
    let mut r = seq.reader();
    let alg = r.expect(der::TAG_SEQUENCE).ok()?;
    let mut ar = alg.reader();
    let oid = ar.expect(der::TAG_OID).ok()?.oid().ok()?;
    let curve = match ar.optional(der::TAG_OID) {
        Ok(Some(t)) => t.oid().ok(),
        _ => None,
    };
    let bits = r.expect(der::TAG_BIT_STRING).ok()?.bit_string_bytes().ok()?.to_vec();
    Some((oid, curve, bits))
}

fn algorithm(sig_oid: &str, key_oid: &str, curve: Option<&str>) -> Option<&'static dyn VerificationAlgorithm> {
    Some(match sig_oid {
        "1.3.101.112" => &signature::ED25519,
        "1.2.840.10045.4.3.2" if key_oid == OID_EC_PUBLIC_KEY => match curve? {
            OID_P256 => &signature::ECDSA_P256_SHA256_ASN1,
            OID_P384 => &signature::ECDSA_P384_SHA256_ASN1,
            _ => return None,
        },
        "1.2.840.10045.4.3.3" if key_oid == OID_EC_PUBLIC_KEY => match curve? {
            OID_P256 => &signature::ECDSA_P256_SHA384_ASN1,
            OID_P384 => &signature::ECDSA_P384_SHA384_ASN1,
            _ => return None,
        },
        "1.2.840.113549.1.1.5" => &signature::RSA_PKCS1_1024_8192_SHA1_FOR_LEGACY_USE_ONLY,
        "1.2.840.113549.1.1.11" => &signature::RSA_PKCS1_2048_8192_SHA256,
        "1.2.840.113549.1.1.12" => &signature::RSA_PKCS1_2048_8192_SHA384,
        "1.2.840.113549.1.1.13" => &signature::RSA_PKCS1_2048_8192_SHA512,
        _ => return None,
    })
}

pub fn verify_signed_data(spki: &[u8], sig_alg_oid: &str, message: &[u8], sig: &[u8]) -> bool {
    let Some((key_oid, curve, bits)) = spki_parts(spki) else {
        return false;
    };
    let Some(alg) = algorithm(sig_alg_oid, &key_oid, curve.as_deref()) else {
        return false;
    };
    UnparsedPublicKey::new(alg, bits).verify(message, sig).is_ok()
}
