//! Validation-type classification from certificate policy OIDs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::cert::CertificateRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValidationType {
    #[serde(rename = "DV")]
    Dv,
    #[serde(rename = "OV")]
    Ov,
    #[serde(rename = "IV")]
    Iv,
    #[serde(rename = "EV")]
    Ev,
    #[serde(rename = "unknown")]
    Unknown,
    #[serde(rename = "conflicting")]
    Conflicting,
}

pub const OID_DV: &str = "2.23.140.1.2.1";
pub const OID_OV: &str = "2.23.140.1.2.2";
pub const OID_IV: &str = "2.23.140.1.2.3";
pub const OID_EV: &str = "2.23.140.1.1";

/// Policy OID to validation class. Operators add per-CA OIDs on top of the
/// CA/Browser Forum reserved ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OidTable(pub BTreeMap<String, ValidationType>);

impl Default for OidTable {
    fn default() -> Self {
        OidTable(BTreeMap::from([
            (OID_DV.to_string(), ValidationType::Dv),
            (OID_OV.to_string(), ValidationType::Ov),
            (OID_IV.to_string(), ValidationType::Iv),
            (OID_EV.to_string(), ValidationType::Ev),
        ]))
    }
}

impl OidTable {
    pub fn insert(&mut self, oid: impl Into<String>, class: ValidationType) {
        self.0.insert(oid.into(), class);
    }

    pub fn classes_of(&self, oids: &BTreeSet<String>) -> BTreeSet<ValidationType> {
        oids.iter().filter_map(|o| self.0.get(o).copied()).collect()
    }
}

pub fn classify_validation_type(cert: &CertificateRecord, table: &OidTable) -> ValidationType {
    classify_oids(&cert.policy_oids, table)
}

pub fn classify_oids(oids: &BTreeSet<String>, table: &OidTable) -> ValidationType {
    let classes = table.classes_of(oids);
    let mut it = classes.iter();
    match (it.next(), it.next()) {
        (None, _) => ValidationType::Unknown,
        (Some(c), None) => *c,
        _ => ValidationType::Conflicting,
    }
}
