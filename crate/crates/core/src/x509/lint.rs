//! A small conformance rule set. Each finding names the rule that fired.

use serde::{Deserialize, Serialize};

use super::cert::{CertificateRecord, KeyUsageFlag};
use super::validation::{OidTable, ValidationType};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConformanceFinding {
    pub rule: String,
    pub detail: String,
}

pub const RULE_IV_SUBJECT_NAME: &str = "IV-SUBJECT-NAME";
pub const RULE_OV_SUBJECT_ORG: &str = "OV-SUBJECT-ORG";
pub const RULE_VALIDITY_ORDER: &str = "VALIDITY-ORDER";
pub const RULE_POLICY_CONFLICT: &str = "POLICY-CONFLICT";
pub const RULE_SAN_MISSING: &str = "SAN-MISSING";
pub const RULE_CA_KEY_USAGE: &str = "CA-KEYUSAGE";
pub const RULE_SERVER_AUTH_EKU: &str = "SERVER-AUTH-EKU";

pub const RULES: &[&str] = &[
    RULE_IV_SUBJECT_NAME,
    RULE_OV_SUBJECT_ORG,
    RULE_VALIDITY_ORDER,
    RULE_POLICY_CONFLICT,
    RULE_SAN_MISSING,
    RULE_CA_KEY_USAGE,
    RULE_SERVER_AUTH_EKU,
];

pub fn lint_conformance(cert: &CertificateRecord) -> Vec<ConformanceFinding> {
    lint_with_table(cert, &OidTable::default())
}

pub fn lint_with_table(cert: &CertificateRecord, table: &OidTable) -> Vec<ConformanceFinding> {
    let mut out = Vec::new();
    let mut push = |rule: &str, detail: String| {
        out.push(ConformanceFinding {
            rule: rule.to_string(),
            detail,
        })
    };
    let classes = table.classes_of(&cert.policy_oids);

    if classes.contains(&ValidationType::Iv) {
        let missing: Vec<&str> = ["surname", "givenName"]
            .into_iter()
            .filter(|k| !cert.subject.has(k))
            .collect();
        if !missing.is_empty() {
            push(
                RULE_IV_SUBJECT_NAME,
                format!("IV policy present but subject lacks {}", missing.join(" and ")),
            );
        }
    }
    if (classes.contains(&ValidationType::Ov) || classes.contains(&ValidationType::Ev)) && !cert.subject.has("O") {
        push(RULE_OV_SUBJECT_ORG, "OV/EV policy present but subject lacks O".into());
    }
    if cert.not_before >= cert.not_after {
        push(
            RULE_VALIDITY_ORDER,
            format!(
                "notBefore {} is not before notAfter {}",
                cert.not_before, cert.not_after
            ),
        );
    }
    if classes.len() > 1 {
        let names: Vec<String> = classes
            .iter()
            .map(|c| {
                serde_json::to_value(c)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default()
            })
            .collect();
        push(
            RULE_POLICY_CONFLICT,
            format!("policy OIDs of several validation classes: {}", names.join(", ")),
        );
    }
    if !cert.is_ca && cert.dns_sans().next().is_none() {
        push(RULE_SAN_MISSING, "end-entity certificate without DNS SAN".into());
    }
    if cert.is_ca && !cert.key_usage.is_empty() && !cert.key_usage.contains(&KeyUsageFlag::KeyCertSign) {
        push(RULE_CA_KEY_USAGE, "CA certificate without keyCertSign".into());
    }
    if !cert.is_ca
        && !cert.ext_key_usage.is_empty()
        && !cert.ext_key_usage.contains("server-auth")
        && !cert.ext_key_usage.contains("any")
    {
        push(RULE_SERVER_AUTH_EKU, "extended key usage lacks serverAuth".into());
    }
    out.sort();
    out
}
