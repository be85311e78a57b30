//! Matching a domain's CAA set against the CA that issued its certificate.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::cert::CertificateRecord;
use crate::dns::caa::{CaaParseStatus, CaaRecord};
use crate::encoding::sha256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaaResult {
    Match,
    Mismatch,
    NoCaa,
    UnparsableOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaaVerdict {
    pub records_considered: Vec<CaaRecord>,
    pub issuer_identifiers: BTreeSet<String>,
    pub result: CaaResult,
    /// Operator the issuing CA was attributed to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
}

/// CAA identifier domain to CA operator, as published in CCADB-style lists.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdentifierMap {
    by_identifier: BTreeMap<String, String>,
}

#[derive(Debug, thiserror::Error)]
pub enum IdentifierMapError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {0}: expected identifier,operator")]
    Row(usize),
}

impl IdentifierMap {
    pub fn insert(&mut self, identifier: &str, operator: &str) {
        self.by_identifier
            .insert(identifier.trim().to_ascii_lowercase(), operator.trim().to_string());
    }

    pub fn identifiers_for(&self, operator: &str) -> BTreeSet<String> {
        self.by_identifier
            .iter()
            .filter(|(_, op)| op.eq_ignore_ascii_case(operator))
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn operators(&self) -> BTreeSet<&str> {
        self.by_identifier.values().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.by_identifier.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_identifier.is_empty()
    }

    /// Two-column CSV `identifier-domain,operator`; a header row whose first
    /// cell is not a domain is skipped.
    pub fn from_csv(data: &str) -> Result<Self, IdentifierMapError> {
        let mut map = IdentifierMap::default();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(data.as_bytes());
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            if row.iter().all(str::is_empty) {
                continue;
            }
            let (Some(id), Some(op)) = (row.get(0), row.get(1)) else {
                return Err(IdentifierMapError::Row(i + 1));
            };
            if i == 0 && !id.contains('.') {
                continue;
            }
            map.insert(id, op);
        }
        Ok(map)
    }

    /// SHA-256 over the sorted `identifier,operator` lines.
    pub fn digest(&self) -> String {
        let mut text = String::new();
        for (id, op) in &self.by_identifier {
            text.push_str(id);
            text.push(',');
            text.push_str(op);
            text.push('\n');
        }
        hex::encode(sha256(text.as_bytes()))
    }
}

/// The operator of the CA that issued a leaf, read from the issuing
/// certificate's subject: organization, falling back to common name.
pub fn operator_of(issuing_ca: &CertificateRecord) -> Option<String> {
    issuing_ca
        .subject
        .first("O")
        .or_else(|| issuing_ca.subject.first("CN"))
        .map(str::to_string)
}

/// `issue` records apply to every leaf; `issuewild` ones instead when the
/// leaf is a wildcard certificate and any are present.
pub fn match_caa(caa: &[CaaRecord], issuing_ca: &CertificateRecord, identifier_map: &IdentifierMap) -> CaaVerdict {
    match_caa_for(caa, issuing_ca, identifier_map, false)
}

pub fn match_caa_for(
    caa: &[CaaRecord],
    issuing_ca: &CertificateRecord,
    identifier_map: &IdentifierMap,
    wildcard_leaf: bool,
) -> CaaVerdict {
    let operator = operator_of(issuing_ca);
    let issuer_identifiers = operator
        .as_deref()
        .map(|op| identifier_map.identifiers_for(op))
        .unwrap_or_default();
    let result = if caa.is_empty() {
        CaaResult::NoCaa
    } else if caa.iter().all(|r| r.parse_status != CaaParseStatus::Ok) {
        CaaResult::UnparsableOnly
    } else {
        let ok: Vec<&CaaRecord> = caa.iter().filter(|r| r.is_ok()).collect();
        let wild: Vec<&CaaRecord> = ok.iter().copied().filter(|r| r.tag == "issuewild").collect();
        let issue: Vec<&CaaRecord> = ok.iter().copied().filter(|r| r.tag == "issue").collect();
        let relevant = if wildcard_leaf && !wild.is_empty() { wild } else { issue };
        if relevant.is_empty() {
            // only iodef (or issuewild for a non-wildcard leaf): no restriction
            CaaResult::Match
        } else if relevant
            .iter()
            .any(|r| r.issuer_domain.as_ref().is_some_and(|d| issuer_identifiers.contains(d)))
        {
            CaaResult::Match
        } else {
            CaaResult::Mismatch
        }
    };
    CaaVerdict {
        records_considered: caa.to_vec(),
        issuer_identifiers,
        result,
        operator,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_loading() {
        let m = IdentifierMap::from_csv("identifier,operator\nca-a.example, Operator A\nCA-B.example,Operator B\n")
            .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(
            m.identifiers_for("Operator B"),
            BTreeSet::from(["ca-b.example".to_string()])
        );
        assert_eq!(m.digest().len(), 64);
    }
}
