//! Master-file zone parsing and in-zone lookup.
//!
//! Supports `$ORIGIN`, `$TTL`, `@`, relative owners, blank-owner
//! continuation, parentheses and `;` comments. Used by the fixture
//! responder and by tests as the byte-level ground truth for collected
//! records.

use super::rdata::{absolute_name, encode_rdata, RecordType};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("zone line {line}: {reason}")]
pub struct ZoneError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneRecord {
    pub owner: String,
    pub ttl: u32,
    pub rtype: RecordType,
    pub rdata: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct Zone {
    pub records: Vec<ZoneRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup<'a> {
    /// Answer records in order (CNAME links first when chased).
    Answer(Vec<&'a ZoneRecord>),
    NoData,
    NxDomain,
}

impl Zone {
    pub fn extend(&mut self, other: Zone) {
        self.records.extend(other.records);
    }

    pub fn has_name(&self, name: &str) -> bool {
        let name = name.trim_end_matches('.');
        self.records.iter().any(|r| r.owner.eq_ignore_ascii_case(name))
    }

    pub fn records_for(&self, name: &str, rtype: RecordType) -> Vec<&ZoneRecord> {
        let name = name.trim_end_matches('.');
        self.records
            .iter()
            .filter(|r| r.rtype == rtype && r.owner.eq_ignore_ascii_case(name))
            .collect()
    }

    /// Looks up `name`/`rtype`, following CNAMEs inside the zone.
    pub fn lookup(&self, name: &str, rtype: RecordType) -> Lookup<'_> {
        let mut answer = Vec::new();
        let mut current = name.trim_end_matches('.').to_ascii_lowercase();
        for _ in 0..8 {
            if !self.has_name(&current) {
                // an empty non-terminal is NODATA, not NXDOMAIN
                let suffix = format!(".{current}");
                let ent = self
                    .records
                    .iter()
                    .any(|r| r.owner.to_ascii_lowercase().ends_with(&suffix));
                return if !answer.is_empty() {
                    Lookup::Answer(answer)
                } else if ent {
                    Lookup::NoData
                } else {
                    Lookup::NxDomain
                };
            }
            let direct = self.records_for(&current, rtype);
            if !direct.is_empty() {
                answer.extend(direct);
                return Lookup::Answer(answer);
            }
            let cname = self.records_for(&current, RecordType::Cname);
            match cname.first() {
                Some(c) if rtype != RecordType::Cname => {
                    answer.push(*c);
                    let mut pos = 0;
                    match super::wire::read_name(&c.rdata, &mut pos) {
                        Ok(target) => current = target.to_ascii_lowercase(),
                        Err(_) => return Lookup::Answer(answer),
                    }
                }
                _ => {
                    return if answer.is_empty() {
                        Lookup::NoData
                    } else {
                        Lookup::Answer(answer)
                    }
                }
            }
        }
        Lookup::Answer(answer)
    }
}

/// Splits one logical entry into tokens, keeping quoted strings (quotes
/// included) as single tokens.
fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut in_quote = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        if in_quote {
            cur.push(c);
            if c == '\\' {
                if let Some(n) = chars.next() {
                    cur.push(n);
                }
            } else if c == '"' {
                in_quote = false;
            }
            continue;
        }
        match c {
            ';' => break,
            '"' => {
                cur.push(c);
                in_quote = true;
            }
            '\\' => {
                cur.push(c);
                if let Some(n) = chars.next() {
                    cur.push(n);
                }
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            _ => cur.push(c),
        }
    }
    if in_quote {
        return Err("unterminated quoted string".into());
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    Ok(tokens)
}

fn parse_ttl(t: &str) -> Option<u32> {
    if let Ok(n) = t.parse() {
        return Some(n);
    }
    let mut total: u32 = 0;
    let mut num = String::new();
    for c in t.chars() {
        if c.is_ascii_digit() {
            num.push(c);
            continue;
        }
        let n: u32 = num.parse().ok()?;
        num.clear();
        let mult = match c.to_ascii_lowercase() {
            's' => 1,
            'm' => 60,
            'h' => 3600,
            'd' => 86400,
            'w' => 604800,
            _ => return None,
        };
        total = total.checked_add(n.checked_mul(mult)?)?;
    }
    if !num.is_empty() {
        return None;
    }
    Some(total)
}

pub fn parse_zone(text: &str, origin: &str) -> Result<Zone, ZoneError> {
    let mut origin = origin.trim_end_matches('.').to_ascii_lowercase();
    let mut default_ttl: u32 = 3600;
    let mut last_owner: Option<String> = None;
    let mut zone = Zone::default();

    // join parenthesised continuations into logical entries
    let mut entries: Vec<(usize, bool, String)> = Vec::new();
    let mut pending: Option<(usize, bool, String)> = None;
    let mut depth = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let stripped = strip_comment(raw);
        let opens = count_unquoted(&stripped, '(');
        let closes = count_unquoted(&stripped, ')');
        let cleaned = remove_unquoted_parens(&stripped);
        match pending.as_mut() {
            Some((_, _, acc)) => {
                acc.push(' ');
                acc.push_str(&cleaned);
            }
            None => {
                let blank_owner = raw.starts_with(' ') || raw.starts_with('\t');
                pending = Some((line_no, blank_owner, cleaned));
            }
        }
        depth = (depth + opens).checked_sub(closes).ok_or(ZoneError {
            line: line_no,
            reason: "unbalanced ')'".into(),
        })?;
        if depth == 0 {
            if let Some(p) = pending.take() {
                entries.push(p);
            }
        }
    }
    if let Some((line, _, _)) = pending {
        return Err(ZoneError {
            line,
            reason: "unclosed '('".into(),
        });
    }

    for (line, blank_owner, entry) in entries {
        let fail = |reason: String| ZoneError { line, reason };
        let tokens = tokenize(&entry).map_err(fail)?;
        if tokens.is_empty() {
            continue;
        }
        match tokens[0].to_ascii_uppercase().as_str() {
            "$ORIGIN" => {
                let o = tokens.get(1).ok_or_else(|| fail("$ORIGIN needs a name".into()))?;
                origin = absolute_name(o, &origin).to_ascii_lowercase();
                continue;
            }
            "$TTL" => {
                let t = tokens.get(1).ok_or_else(|| fail("$TTL needs a value".into()))?;
                default_ttl = parse_ttl(t).ok_or_else(|| fail(format!("bad TTL {t:?}")))?;
                continue;
            }
            d if d.starts_with('$') => return Err(fail(format!("unsupported directive {d}"))),
            _ => {}
        }
        let mut rest: &[String] = &tokens;
        let owner = if blank_owner {
            last_owner.clone().ok_or_else(|| fail("no previous owner".into()))?
        } else {
            let o = absolute_name(&rest[0], &origin).to_ascii_lowercase();
            rest = &rest[1..];
            o
        };
        let mut ttl = default_ttl;
        let mut rtype = None;
        while let Some(tok) = rest.first() {
            if tok.eq_ignore_ascii_case("IN") {
                rest = &rest[1..];
            } else if let Some(t) = tok
                .chars()
                .next()
                .filter(char::is_ascii_digit)
                .and_then(|_| parse_ttl(tok))
            {
                ttl = t;
                rest = &rest[1..];
            } else {
                rtype = Some(tok.parse::<RecordType>().map_err(|e| fail(e.to_string()))?);
                rest = &rest[1..];
                break;
            }
        }
        let rtype = rtype.ok_or_else(|| fail("missing record type".into()))?;
        let rdata = encode_rdata(rtype, rest, &origin).map_err(|e| fail(e.to_string()))?;
        last_owner = Some(owner.clone());
        zone.records.push(ZoneRecord {
            owner,
            ttl,
            rtype,
            rdata,
        });
    }
    Ok(zone)
}

fn strip_comment(line: &str) -> String {
    let mut out = String::new();
    let mut in_quote = false;
    let mut escaped = false;
    for c in line.chars() {
        if escaped {
            escaped = false;
            out.push(c);
            continue;
        }
        match c {
            '\\' => escaped = true,
            '"' => in_quote = !in_quote,
            ';' if !in_quote => break,
            _ => {}
        }
        out.push(c);
    }
    out
}

fn count_unquoted(s: &str, target: char) -> usize {
    let mut in_quote = false;
    let mut n = 0;
    let mut escaped = false;
    for c in s.chars() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' => escaped = true,
            '"' => in_quote = !in_quote,
            c if c == target && !in_quote => n += 1,
            _ => {}
        }
    }
    n
}

fn remove_unquoted_parens(s: &str) -> String {
    let mut in_quote = false;
    let mut escaped = false;
    s.chars()
        .map(|c| {
            if escaped {
                escaped = false;
                return c;
            }
            match c {
                '\\' => escaped = true,
                '"' => in_quote = !in_quote,
                '(' | ')' if !in_quote => return ' ',
                _ => {}
            }
            c
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ZONE: &str = r#"
$ORIGIN fixture.test.
$TTL 300
@       IN SOA ns1 hostmaster ( 2024010101 ; serial
                7200 3600 1209600 300 )
        IN NS  ns1
ns1     IN A   127.0.0.1
a       600 IN A 127.0.0.2
        IN AAAA ::1
_443._tcp.a IN TLSA 3 1 1 ( 0011
                            2233 )
a       IN CAA 0 issue "ca-a.example"
www     IN CNAME a
txt     IN TXT "hello; world" "two"
"#;

    #[test]
    fn parses_fixture_zone() {
        let z = parse_zone(ZONE, "").unwrap();
        assert_eq!(z.records.len(), 9);
        let a = z.records_for("a.fixture.test", RecordType::A);
        assert_eq!(a[0].ttl, 600);
        assert_eq!(a[0].rdata, vec![127, 0, 0, 2]);
        let aaaa = z.records_for("a.fixture.test", RecordType::Aaaa);
        assert_eq!(aaaa[0].ttl, 300);
        let tlsa = z.records_for("_443._tcp.a.fixture.test", RecordType::Tlsa);
        assert_eq!(tlsa[0].rdata, vec![3, 1, 1, 0, 0x11, 0x22, 0x33]);
        let txt = z.records_for("txt.fixture.test", RecordType::Txt);
        assert_eq!(txt[0].rdata, b"\x0chello; world\x03two");
    }

    #[test]
    fn lookup_semantics() {
        let z = parse_zone(ZONE, "").unwrap();
        match z.lookup("www.fixture.test", RecordType::A) {
            Lookup::Answer(rs) => {
                assert_eq!(rs.len(), 2);
                assert_eq!(rs[0].rtype, RecordType::Cname);
                assert_eq!(rs[1].rdata, vec![127, 0, 0, 2]);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(z.lookup("nope.fixture.test", RecordType::A), Lookup::NxDomain);
        assert_eq!(z.lookup("ns1.fixture.test", RecordType::Caa), Lookup::NoData);
        assert_eq!(z.lookup("_tcp.a.fixture.test", RecordType::A), Lookup::NoData);
    }

    #[test]
    fn errors_name_lines() {
        let e = parse_zone("$TTL 60\nx IN A 999.1.1.1\n", "t").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_zone("x IN SOA ( a b 1 2 3 4 5\n", "t").unwrap_err();
        assert_eq!(e.line, 1);
        assert_eq!(parse_ttl("1h30m"), Some(5400));
    }
}
