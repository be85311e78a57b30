//! SAN and wildcard statistics per certificate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::cert::CertificateRecord;
use crate::targets::{esld_trim, normalize_name, strip_wildcard, PublicSuffixTable};

pub const SAN_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanStats {
    /// Reporting fields, capped at [`SAN_CAP`].
    pub total_dns_sans: usize,
    pub wildcard_sans: usize,
    pub unique_eslds: usize,
    pub single_san: bool,
    /// Uncapped counts.
    pub raw_total_dns_sans: usize,
    pub raw_wildcard_sans: usize,
    pub raw_unique_eslds: usize,
}

pub fn san_statistics(cert: &CertificateRecord, table: &PublicSuffixTable) -> SanStats {
    san_statistics_of(cert.dns_sans(), table)
}

pub fn san_statistics_of<'a>(dns_sans: impl IntoIterator<Item = &'a str>, table: &PublicSuffixTable) -> SanStats {
    let mut total = 0;
    let mut wildcard = 0;
    let mut eslds = BTreeSet::new();
    for san in dns_sans {
        total += 1;
        if san.starts_with("*.") {
            wildcard += 1;
        }
        let base = strip_wildcard(san);
        let name = normalize_name(base).unwrap_or_else(|_| base.to_ascii_lowercase());
        eslds.insert(esld_trim(&name, table).name);
    }
    SanStats {
        total_dns_sans: total.min(SAN_CAP),
        wildcard_sans: wildcard.min(SAN_CAP),
        unique_eslds: eslds.len().min(SAN_CAP),
        single_san: total == 1,
        raw_total_dns_sans: total,
        raw_wildcard_sans: wildcard,
        raw_unique_eslds: eslds.len(),
    }
}
