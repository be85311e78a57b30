//! TLSA (DANE) association matching.

use std::collections::BTreeMap;

use ring::digest;
use serde::{Deserialize, Serialize};

use super::cert::CertificateRecord;
use super::chain::{ChainEvaluation, Verdict};
use crate::dns::TlsaRecord;
use crate::encoding::Fingerprint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchedAgainst {
    Leaf,
    ChainMember,
    Anchor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaneVerdict {
    pub tlsa_record: TlsaRecord,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_against: Option<MatchedAgainst>,
    /// Names the field whose value this implementation does not support.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsupported: Option<String>,
    /// PKIX usages (0, 1) also demand a valid chain; set when an association
    /// matched but the chain did not validate.
    #[serde(default)]
    pub pkix_failed: bool,
}

/// Selected bytes (`selector`) transformed per `matching_type`, or `None`
/// for unsupported values.
pub fn association_data(cert: &CertificateRecord, selector: u8, matching_type: u8) -> Option<Vec<u8>> {
    let selected: &[u8] = match selector {
        0 => &cert.raw,
        1 => &cert.spki,
        _ => return None,
    };
    match matching_type {
        0 => Some(selected.to_vec()),
        1 => Some(digest::digest(&digest::SHA256, selected).as_ref().to_vec()),
        2 => Some(digest::digest(&digest::SHA512, selected).as_ref().to_vec()),
        _ => None,
    }
}

pub fn match_tlsa(
    tlsa: &TlsaRecord,
    chain: &ChainEvaluation,
    certs: &BTreeMap<Fingerprint, CertificateRecord>,
) -> DaneVerdict {
    let mut verdict = DaneVerdict {
        tlsa_record: tlsa.clone(),
        matched: false,
        matched_against: None,
        unsupported: None,
        pkix_failed: false,
    };
    if tlsa.usage > 3 {
        verdict.unsupported = Some(format!("usage {}", tlsa.usage));
        return verdict;
    }
    if tlsa.selector > 1 {
        verdict.unsupported = Some(format!("selector {}", tlsa.selector));
        return verdict;
    }
    if tlsa.matching_type > 2 {
        verdict.unsupported = Some(format!("matching type {}", tlsa.matching_type));
        return verdict;
    }
    let matches = |fp: &Fingerprint| {
        certs
            .get(fp)
            .and_then(|c| association_data(c, tlsa.selector, tlsa.matching_type))
            .is_some_and(|d| d == tlsa.association)
    };
    let found = match tlsa.usage {
        // end-entity usages look at the leaf only
        1 | 3 => matches(&chain.leaf).then_some(MatchedAgainst::Leaf),
        _ => {
            let anchor = chain.anchor();
            let mut candidates: Vec<Fingerprint> =
                chain.presented.iter().copied().filter(|fp| *fp != chain.leaf).collect();
            if let Some(p) = &chain.chosen_path {
                candidates.extend(p.iter().skip(1).copied());
            }
            candidates.sort();
            candidates.dedup();
            candidates.into_iter().find(|fp| matches(fp)).map(|fp| {
                if Some(fp) == anchor {
                    MatchedAgainst::Anchor
                } else {
                    MatchedAgainst::ChainMember
                }
            })
        }
    };
    let Some(against) = found else {
        return verdict;
    };
    if tlsa.usage <= 1 {
        let on_path = match against {
            MatchedAgainst::Leaf => true,
            _ => chain
                .chosen_path
                .as_ref()
                .is_some_and(|p| p.iter().skip(1).any(matches)),
        };
        if chain.verdict != Verdict::Valid || !on_path {
            verdict.pkix_failed = true;
            return verdict;
        }
    }
    verdict.matched = true;
    verdict.matched_against = Some(against);
    verdict
}
