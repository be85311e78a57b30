//! Public suffix list loading and effective-SLD trimming.

use std::collections::{BTreeSet, HashSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::names::to_ascii_label_seq;
use super::TargetFlag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Plain,
    Wildcard,
    Exception,
}

/// One list rule. `base` is the rule without its `*.` or `!` marker.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SuffixRule {
    pub kind: RuleKind,
    pub base: String,
}

impl std::fmt::Display for SuffixRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            RuleKind::Plain => f.write_str(&self.base),
            RuleKind::Wildcard => write!(f, "*.{}", self.base),
            RuleKind::Exception => write!(f, "!{}", self.base),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("public suffix list line {line}: {reason}")]
pub struct PslError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct PublicSuffixTable {
    rules: BTreeSet<SuffixRule>,
    plain: HashSet<String>,
    wildcard: HashSet<String>,
    exception: HashSet<String>,
    pub snapshot_date: Option<NaiveDate>,
}

impl PublicSuffixTable {
    pub fn rules(&self) -> impl Iterator<Item = &SuffixRule> {
        self.rules.iter()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn insert(&mut self, rule: SuffixRule) {
        match rule.kind {
            RuleKind::Plain => self.plain.insert(rule.base.clone()),
            RuleKind::Wildcard => self.wildcard.insert(rule.base.clone()),
            RuleKind::Exception => self.exception.insert(rule.base.clone()),
        };
        self.rules.insert(rule);
    }

    /// Effective public suffix of a normalized name. Always a suffix of
    /// `name` on a label boundary; the default rule is the last label.
    pub fn public_suffix<'a>(&self, name: &'a str) -> &'a str {
        let starts = label_starts(name);
        // exception rules prevail over everything else
        for &s in &starts {
            if self.exception.contains(&name[s..]) {
                return match name[s..].find('.') {
                    Some(dot) => &name[s + dot + 1..],
                    None => &name[s..],
                };
            }
        }
        // otherwise the matching rule with the most labels; starts are
        // ordered from the longest candidate to the shortest
        for (i, &s) in starts.iter().enumerate() {
            if i > 0 && self.wildcard.contains(&name[s..]) {
                return &name[starts[i - 1]..];
            }
            if self.plain.contains(&name[s..]) {
                return &name[s..];
            }
        }
        match starts.last() {
            Some(&s) => &name[s..],
            None => name,
        }
    }
}

fn label_starts(name: &str) -> Vec<usize> {
    let mut starts = vec![0];
    starts.extend(name.match_indices('.').map(|(i, _)| i + 1));
    starts
}

/// Parses the standard list format: `//` comment lines, one rule per line,
/// only the first whitespace-delimited token of a line is significant.
pub fn load_public_suffixes(raw: &str, snapshot_date: Option<NaiveDate>) -> Result<PublicSuffixTable, PslError> {
    let mut table = PublicSuffixTable {
        snapshot_date,
        ..Default::default()
    };
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("//") {
            continue;
        }
        let token = trimmed.split_whitespace().next().unwrap_or_default();
        let rule = parse_rule(token).map_err(|reason| PslError { line: line_no, reason })?;
        table.insert(rule);
    }
    Ok(table)
}

fn parse_rule(token: &str) -> Result<SuffixRule, String> {
    let (kind, body) = if let Some(rest) = token.strip_prefix('!') {
        (RuleKind::Exception, rest)
    } else if let Some(rest) = token.strip_prefix("*.") {
        (RuleKind::Wildcard, rest)
    } else {
        (RuleKind::Plain, token)
    };
    if body.contains('*') {
        return Err(format!("wildcard only allowed as the leftmost label: {token:?}"));
    }
    if body.contains('!') {
        return Err(format!("misplaced exception marker: {token:?}"));
    }
    let base = to_ascii_label_seq(body).map_err(|e| format!("{e}: {token:?}"))?;
    if kind == RuleKind::Exception && !base.contains('.') {
        return Err(format!("exception rule needs at least two labels: {token:?}"));
    }
    Ok(SuffixRule { kind, base })
}

/// Result of trimming a name to its effective second-level domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trimmed {
    pub name: String,
    pub flags: BTreeSet<TargetFlag>,
}

/// Public suffix plus one label. A name that is itself a public suffix comes
/// back unchanged and flagged.
pub fn esld_trim(name: &str, table: &PublicSuffixTable) -> Trimmed {
    let suffix = table.public_suffix(name);
    let mut flags = BTreeSet::new();
    if suffix.len() >= name.len() {
        flags.insert(TargetFlag::IsPublicSuffix);
        return Trimmed {
            name: name.to_string(),
            flags,
        };
    }
    let head = &name[..name.len() - suffix.len() - 1];
    let label = head.rsplit('.').next().unwrap_or(head);
    Trimmed {
        name: format!("{label}.{suffix}"),
        flags,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(src: &str) -> PublicSuffixTable {
        load_public_suffixes(src, None).unwrap()
    }

    #[test]
    fn loads_plain_rules() {
        let t = table("// comment\ncom\njp\n\niwate.jp\nofunato.iwate.jp\n");
        assert_eq!(t.len(), 4);
        assert!(t.rules().all(|r| r.kind == RuleKind::Plain));
    }

    #[test]
    fn empty_document_falls_back_to_last_label() {
        let t = table("");
        assert!(t.is_empty());
        assert_eq!(t.public_suffix("www.example.com"), "com");
        assert_eq!(esld_trim("www.example.com", &t).name, "example.com");
    }

    #[test]
    fn wildcard_and_exception_coexist() {
        let t = table("*.ck\n!www.ck\n");
        assert_eq!(t.public_suffix("www.ck"), "ck");
        assert_eq!(t.public_suffix("x.ck"), "x.ck");
        assert_eq!(t.public_suffix("a.x.ck"), "x.ck");
        assert_eq!(t.public_suffix("ck"), "ck");
        assert_eq!(esld_trim("a.www.ck", &t).name, "www.ck");
    }

    #[test]
    fn malformed_rule_names_its_line() {
        let err = load_public_suffixes("com\nfoo.*.bar\n", None).unwrap_err();
        assert_eq!(err.line, 2);
        let err = load_public_suffixes("com\n\n!net\n", None).unwrap_err();
        assert_eq!(err.line, 3);
        let err = load_public_suffixes("a..b\n", None).unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn unicode_rules_are_punycoded() {
        let t = table("公司.cn\n");
        assert_eq!(t.public_suffix("foo.xn--55qx5d.cn"), "xn--55qx5d.cn");
    }

    #[test]
    fn trims_common_names() {
        let t = table("jp\niwate.jp\nofunato.iwate.jp\nes\ngob.es\ncom\n");
        let trimmed = esld_trim("city.ofunato.iwate.jp", &t);
        assert_eq!(trimmed.name, "city.ofunato.iwate.jp");
        assert!(trimmed.flags.is_empty());
        let trimmed = esld_trim("gob.es", &t);
        assert_eq!(trimmed.name, "gob.es");
        assert!(trimmed.flags.contains(&TargetFlag::IsPublicSuffix));
        assert_eq!(esld_trim("www.example.com", &t).name, "example.com");
    }
}
