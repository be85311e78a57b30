//! Measurement targets: hit-list and CT-corpus ingestion, public-suffix
//! aware trimming, and duplicate flagging.

mod names;
mod psl;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::x509::{CertificateRecord, SanKind};

pub use names::{is_wildcard, normalize_name, normalize_san, strip_wildcard, NameError};
pub use psl::{esld_trim, load_public_suffixes, PslError, PublicSuffixTable, RuleKind, SuffixRule, Trimmed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSource {
    HitList,
    CtSan,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetFlag {
    IsPublicSuffix,
    WildcardDerived,
    DuplicateEsld,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetEntry {
    pub name: String,
    pub rank: Option<u64>,
    pub source: TargetSource,
    #[serde(default)]
    pub flags: BTreeSet<TargetFlag>,
}

impl TargetEntry {
    pub fn new(name: impl Into<String>, rank: Option<u64>, source: TargetSource) -> Self {
        TargetEntry {
            name: name.into(),
            rank,
            source,
            flags: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub retrieved_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetList {
    pub entries: Vec<TargetEntry>,
    pub provenance: Provenance,
}

impl TargetList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HitlistFormat {
    RankCommaName,
    NameOnly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct HitlistParse {
    pub list: TargetList,
    pub skipped: usize,
    pub errors: Vec<LineError>,
}

/// One entry per non-empty line. Bad lines are skipped and reported rather
/// than failing the whole document.
pub fn parse_hitlist(raw: &str, format: HitlistFormat, provenance: Provenance) -> HitlistParse {
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = match format {
            HitlistFormat::NameOnly => normalize_name(line).map(|n| (None, n)).map_err(|e| e.to_string()),
            HitlistFormat::RankCommaName => parse_ranked_line(line),
        };
        match parsed {
            Ok((rank, name)) => entries.push(TargetEntry::new(name, rank, TargetSource::HitList)),
            Err(reason) => errors.push(LineError { line: idx + 1, reason }),
        }
    }
    HitlistParse {
        skipped: errors.len(),
        errors,
        list: TargetList { entries, provenance },
    }
}

fn parse_ranked_line(line: &str) -> Result<(Option<u64>, String), String> {
    let (rank, name) = line.split_once(',').ok_or_else(|| "expected rank,name".to_string())?;
    let rank: u64 = rank
        .trim()
        .parse()
        .map_err(|_| format!("non-numeric rank {:?}", rank.trim()))?;
    if rank == 0 {
        return Err("rank must be at least 1".into());
    }
    let name = normalize_name(name).map_err(|e| e.to_string())?;
    Ok((Some(rank), name))
}

pub fn serialize_hitlist(list: &TargetList, format: HitlistFormat) -> String {
    let mut out = String::new();
    for e in &list.entries {
        match (format, e.rank) {
            (HitlistFormat::RankCommaName, Some(r)) => out.push_str(&format!("{r},{}\n", e.name)),
            _ => out.push_str(&format!("{}\n", e.name)),
        }
    }
    out
}

/// Outcome of turning a certificate corpus into targets.
#[derive(Debug, Clone)]
pub struct CtExtraction {
    pub list: TargetList,
    /// Wildcard DNS SANs seen across the corpus.
    pub wildcard_sans: usize,
    /// Certificates whose DNS SANs are all wildcards.
    pub wildcard_only_certs: usize,
    /// IP SANs are recorded but never become targets.
    pub ip_sans: Vec<String>,
    pub certificates: usize,
}

/// Every non-wildcard DNS SAN becomes a `ct-san` target. Wildcards are
/// counted; with `include_wildcard_bases` their base name is also emitted,
/// flagged `wildcard-derived`.
pub fn extract_ct_sans(
    certs: &[CertificateRecord],
    provenance: Provenance,
    include_wildcard_bases: bool,
) -> CtExtraction {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    let mut wildcard_sans = 0;
    let mut wildcard_only_certs = 0;
    let mut ip_sans = Vec::new();
    for cert in certs {
        let mut dns = 0;
        let mut wild = 0;
        for san in &cert.sans {
            match san.kind {
                SanKind::Ip => ip_sans.push(san.value.clone()),
                SanKind::Dns => {
                    dns += 1;
                    let Ok(name) = normalize_san(&san.value) else {
                        continue;
                    };
                    if is_wildcard(&name) {
                        wild += 1;
                        wildcard_sans += 1;
                        if include_wildcard_bases {
                            let base = strip_wildcard(&name).to_string();
                            if seen.insert(base.clone()) {
                                let mut e = TargetEntry::new(base, None, TargetSource::CtSan);
                                e.flags.insert(TargetFlag::WildcardDerived);
                                entries.push(e);
                            }
                        }
                    } else if seen.insert(name.clone()) {
                        entries.push(TargetEntry::new(name, None, TargetSource::CtSan));
                    }
                }
                _ => {}
            }
        }
        if dns > 0 && wild == dns {
            wildcard_only_certs += 1;
        }
    }
    CtExtraction {
        list: TargetList { entries, provenance },
        wildcard_sans,
        wildcard_only_certs,
        ip_sans,
        certificates: certs.len(),
    }
}

/// Removes exact-name duplicates (lowest rank wins, first seen on ties) and
/// flags entries whose eSLD already appeared earlier in rank order. Output is
/// ordered by rank, unranked entries last in their original order.
pub fn dedupe_and_flag(list: TargetList, table: &PublicSuffixTable) -> TargetList {
    let TargetList { entries, provenance } = list;
    let mut winners: HashMap<String, (usize, TargetEntry)> = HashMap::new();
    for (idx, entry) in entries.into_iter().enumerate() {
        match winners.get_mut(&entry.name) {
            None => {
                winners.insert(entry.name.clone(), (idx, entry));
            }
            Some((first_idx, kept)) => {
                let better = match (entry.rank, kept.rank) {
                    (Some(new), Some(old)) => new < old,
                    (Some(_), None) => true,
                    _ => false,
                };
                if better {
                    let flags = std::mem::take(&mut kept.flags);
                    *kept = entry;
                    kept.flags.extend(flags);
                    let _ = first_idx;
                } else {
                    kept.flags.extend(entry.flags);
                }
            }
        }
    }
    let mut kept: Vec<(usize, TargetEntry)> = winners.into_values().collect();
    kept.sort_by_key(|(idx, e)| (e.rank.is_none(), e.rank.unwrap_or(0), *idx));

    let mut seen_eslds = HashSet::new();
    let entries = kept
        .into_iter()
        .map(|(_, mut e)| {
            e.flags.remove(&TargetFlag::DuplicateEsld);
            let trimmed = esld_trim(&e.name, table);
            if trimmed.flags.contains(&TargetFlag::IsPublicSuffix) {
                e.flags.insert(TargetFlag::IsPublicSuffix);
            }
            if !seen_eslds.insert(trimmed.name) {
                e.flags.insert(TargetFlag::DuplicateEsld);
            }
            e
        })
        .collect();
    TargetList { entries, provenance }
}

pub fn write_jsonl<W: Write>(list: &TargetList, mut out: W) -> std::io::Result<()> {
    for e in &list.entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum TargetIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

pub fn read_jsonl<R: BufRead>(input: R, provenance: Provenance) -> Result<TargetList, TargetIoError> {
    let mut entries = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: TargetEntry =
            serde_json::from_str(&line).map_err(|source| TargetIoError::Json { line: idx + 1, source })?;
        entries.push(e);
    }
    Ok(TargetList { entries, provenance })
}

pub fn read_jsonl_file(path: &Path, provenance: Provenance) -> Result<TargetList, TargetIoError> {
    let f = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(f), provenance)
}

#[cfg(test)]
mod tests {
    use chrono::{TimeZone, Utc};

    use super::*;

    fn prov() -> Provenance {
        Provenance {
            source: "test".into(),
            retrieved_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    #[test]
    fn parses_ranked_lines() {
        let p = parse_hitlist("1,example.com\n2,example.org", HitlistFormat::RankCommaName, prov());
        assert_eq!(p.list.len(), 2);
        assert_eq!(p.list.entries[0].rank, Some(1));
        assert_eq!(p.list.entries[1].rank, Some(2));
        assert_eq!(p.skipped, 0);
    }

    #[test]
    fn keeps_deep_names_verbatim() {
        let p = parse_hitlist("7,city.ofunato.iwate.jp\n", HitlistFormat::RankCommaName, prov());
        assert_eq!(p.list.entries[0].name, "city.ofunato.iwate.jp");
    }

    #[test]
    fn skips_and_counts_malformed_lines() {
        // hand-built: lines 4 and 9 are malformed
        let doc = "1,a.com\n2,b.com\n3,c.com\nx,d.com\n5,e.com\n6,f.com\n7,g.com\n8,h.com\n9,bad name.com\n10,j.com\n";
        let p = parse_hitlist(doc, HitlistFormat::RankCommaName, prov());
        assert_eq!(p.list.len(), 8);
        assert_eq!(p.skipped, 2);
        assert_eq!(p.errors.iter().map(|e| e.line).collect::<Vec<_>>(), vec![4, 9]);
    }

    #[test]
    fn name_only_format_lowercases() {
        let p = parse_hitlist("Example.COM\n\nfoo.test\n", HitlistFormat::NameOnly, prov());
        assert_eq!(p.list.entries[0].name, "example.com");
        assert_eq!(p.list.entries[0].rank, None);
        assert_eq!(p.list.len(), 2);
    }

    #[test]
    fn dedupe_lowest_rank_wins() {
        let table = PublicSuffixTable::default();
        let list = TargetList {
            entries: vec![
                TargetEntry::new("x.com", Some(5), TargetSource::HitList),
                TargetEntry::new("x.com", Some(3), TargetSource::HitList),
            ],
            provenance: prov(),
        };
        let out = dedupe_and_flag(list, &table);
        assert_eq!(out.len(), 1);
        assert_eq!(out.entries[0].rank, Some(3));
    }

    #[test]
    fn dedupe_flags_shared_eslds() {
        let table = load_public_suffixes("com\norg\nnet\n", None).unwrap();
        let list = TargetList {
            entries: vec![
                TargetEntry::new("a.x.com", Some(1), TargetSource::HitList),
                TargetEntry::new("b.x.com", Some(2), TargetSource::HitList),
            ],
            provenance: prov(),
        };
        let out = dedupe_and_flag(list, &table);
        assert_eq!(out.len(), 2);
        assert!(out.entries[0].flags.is_empty());
        assert!(out.entries[1].flags.contains(&TargetFlag::DuplicateEsld));

        // six entries over three eSLDs, grouped by hand: x.com {1,2}, y.org {3,4}, z.net {5,6}
        let names = ["a.x.com", "b.x.com", "y.org", "www.y.org", "m.z.net", "n.z.net"];
        let list = TargetList {
            entries: names
                .iter()
                .enumerate()
                .map(|(i, n)| TargetEntry::new(*n, Some(i as u64 + 1), TargetSource::HitList))
                .collect(),
            provenance: prov(),
        };
        let out = dedupe_and_flag(list, &table);
        let flagged: Vec<bool> = out
            .entries
            .iter()
            .map(|e| e.flags.contains(&TargetFlag::DuplicateEsld))
            .collect();
        assert_eq!(flagged, vec![false, true, false, true, false, true]);
    }

    #[test]
    fn jsonl_shape() {
        let mut e = TargetEntry::new("gob.es", Some(4), TargetSource::HitList);
        e.flags.insert(TargetFlag::IsPublicSuffix);
        let list = TargetList {
            entries: vec![e],
            provenance: prov(),
        };
        let mut buf = Vec::new();
        write_jsonl(&list, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "{\"name\":\"gob.es\",\"rank\":4,\"source\":\"hit-list\",\"flags\":[\"is-public-suffix\"]}\n"
        );
        let back = read_jsonl(&buf[..], prov()).unwrap();
        assert_eq!(back, list);
    }
}
