//! CAA record classification.
//!
//! Records arrive either as wire rdata or as presentation text
//! (`0 issue "ca.example"`). Malformed input is never an error: it is
//! classified and the exact input bytes are kept alongside.

use serde::{Deserialize, Serialize};

use crate::encoding::b64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaaParseStatus {
    Ok,
    Unparsable,
    ReservedBit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaaRawForm {
    Wire,
    Presentation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaaRecord {
    pub flags: u8,
    pub tag: String,
    pub value: String,
    pub parse_status: CaaParseStatus,
    /// Why the record is not `ok`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Issuer domain of an `ok` issue/issuewild record; `None` for the
    /// "no issuer allowed" form (`";"`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer_domain: Option<String>,
    #[serde(with = "b64")]
    pub raw: Vec<u8>,
    pub raw_form: CaaRawForm,
}

impl CaaRecord {
    pub fn is_ok(&self) -> bool {
        self.parse_status == CaaParseStatus::Ok
    }

    pub fn is_issue(&self) -> bool {
        self.tag == "issue" || self.tag == "issuewild"
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CaaInput<'a> {
    Wire(&'a [u8]),
    Presentation(&'a str),
}

pub fn parse_caa(input: CaaInput<'_>) -> CaaRecord {
    match input {
        CaaInput::Wire(b) => parse_caa_wire(b),
        CaaInput::Presentation(s) => parse_caa_text(s),
    }
}

pub fn parse_caa_wire(rdata: &[u8]) -> CaaRecord {
    let mut rec = CaaRecord {
        flags: 0,
        tag: String::new(),
        value: String::new(),
        parse_status: CaaParseStatus::Unparsable,
        reason: None,
        issuer_domain: None,
        raw: rdata.to_vec(),
        raw_form: CaaRawForm::Wire,
    };
    if rdata.len() < 2 {
        rec.reason = Some("rdata shorter than flags and tag length".into());
        return rec;
    }
    rec.flags = rdata[0];
    let tag_len = rdata[1] as usize;
    let Some(tag) = rdata.get(2..2 + tag_len) else {
        rec.reason = Some("tag length exceeds rdata".into());
        return rec;
    };
    rec.tag = String::from_utf8_lossy(tag).to_ascii_lowercase();
    let value = &rdata[2 + tag_len..];
    match std::str::from_utf8(value) {
        Ok(v) => rec.value = v.to_string(),
        Err(_) => {
            rec.value = String::from_utf8_lossy(value).into_owned();
            rec.reason = Some("value is not valid UTF-8".into());
            return classify_flags(rec);
        }
    }
    if let Err(reason) = check_tag(tag) {
        rec.reason = Some(reason);
        return classify_flags(rec);
    }
    classify_value(rec)
}

pub fn parse_caa_text(text: &str) -> CaaRecord {
    let mut rec = CaaRecord {
        flags: 0,
        tag: String::new(),
        value: String::new(),
        parse_status: CaaParseStatus::Unparsable,
        reason: None,
        issuer_domain: None,
        raw: text.as_bytes().to_vec(),
        raw_form: CaaRawForm::Presentation,
    };
    let trimmed = text.trim();
    let (flags_tok, rest) = split_token(trimmed);
    let (tag_tok, rest) = split_token(rest);
    let Ok(flags) = flags_tok.parse::<u8>() else {
        rec.reason = Some(format!("flags {flags_tok:?} is not an integer 0-255"));
        return rec;
    };
    rec.flags = flags;
    rec.tag = tag_tok.to_ascii_lowercase();
    if let Err(reason) = check_tag(tag_tok.as_bytes()) {
        rec.reason = Some(reason);
        return classify_flags(rec);
    }
    match unquote(rest) {
        Ok(v) => rec.value = v,
        Err(reason) => {
            rec.value = rest.to_string();
            rec.reason = Some(reason);
            return classify_flags(rec);
        }
    }
    classify_value(rec)
}

fn split_token(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim_start()),
        None => (s, ""),
    }
}

fn check_tag(tag: &[u8]) -> Result<(), String> {
    if tag.is_empty() || tag.len() > 15 {
        return Err(format!("tag length {} outside 1-15", tag.len()));
    }
    if !tag.iter().all(u8::is_ascii_alphanumeric) {
        return Err("tag contains non-alphanumeric characters".into());
    }
    Ok(())
}

/// Decodes a presentation value: either one quoted string with `\"`, `\\`
/// and `\DDD` escapes, or a single unquoted token.
fn unquote(s: &str) -> Result<String, String> {
    let s = s.trim_end();
    let Some(body) = s.strip_prefix('"') else {
        if s.contains('"') {
            return Err("stray quote in unquoted value".into());
        }
        if s.contains(char::is_whitespace) {
            return Err("unquoted value contains whitespace".into());
        }
        return Ok(s.to_string());
    };
    let mut out = Vec::new();
    let mut chars = body.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => {
                if i + 1 != body.len() {
                    return Err("text after closing quote".into());
                }
                return String::from_utf8(out).map_err(|_| "escaped bytes are not UTF-8".into());
            }
            '\\' => match chars.next() {
                Some((_, d)) if d.is_ascii_digit() => {
                    let mut code = d.to_digit(10).unwrap_or(0);
                    for _ in 0..2 {
                        match chars.next() {
                            Some((_, d)) if d.is_ascii_digit() => code = code * 10 + d.to_digit(10).unwrap_or(0),
                            _ => return Err("bad \\DDD escape".into()),
                        }
                    }
                    let byte = u8::try_from(code).map_err(|_| "\\DDD escape above 255")?;
                    out.push(byte);
                }
                Some((_, e)) => {
                    let mut buf = [0u8; 4];
                    out.extend_from_slice(e.encode_utf8(&mut buf).as_bytes());
                }
                None => return Err("dangling escape".into()),
            },
            _ => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    Err("unterminated quoted value".into())
}

fn classify_flags(mut rec: CaaRecord) -> CaaRecord {
    if rec.flags != 0 {
        rec.parse_status = CaaParseStatus::ReservedBit;
        rec.reason = Some(format!("flags {} set", rec.flags));
    }
    rec
}

fn classify_value(mut rec: CaaRecord) -> CaaRecord {
    let checked = match rec.tag.as_str() {
        "issue" | "issuewild" => check_issue_value(&rec.value).map(Some),
        "iodef" => check_iodef(&rec.value).map(|_| None),
        other => Err(format!("unknown tag {other:?}")),
    };
    match checked {
        Ok(domain) => {
            rec.parse_status = CaaParseStatus::Ok;
            rec.issuer_domain = domain.flatten();
        }
        Err(reason) => rec.reason = Some(reason),
    }
    classify_flags(rec)
}

/// issuer-domain-name [";" parameters]. Returns the lowercased domain, or
/// `None` for an empty domain (issuance forbidden).
fn check_issue_value(value: &str) -> Result<Option<String>, String> {
    let (domain, params) = match value.split_once(';') {
        Some((d, p)) => (d.trim(), Some(p)),
        None => (value.trim(), None),
    };
    if let Some(params) = params {
        for param in params.split(';') {
            let param = param.trim();
            if param.is_empty() {
                continue;
            }
            let (tag, val) = param
                .split_once('=')
                .ok_or_else(|| format!("parameter {param:?} lacks '='"))?;
            if tag.is_empty() || !tag.bytes().all(|b| b.is_ascii_alphanumeric()) {
                return Err(format!("bad parameter tag {tag:?}"));
            }
            if !val.bytes().all(|b| (0x21..=0x7e).contains(&b) && b != b';') {
                return Err(format!("bad parameter value {val:?}"));
            }
        }
    }
    if domain.is_empty() {
        return Ok(None);
    }
    for label in domain.split('.') {
        let bytes = label.as_bytes();
        let ok = !bytes.is_empty()
            && bytes[0].is_ascii_alphanumeric()
            && bytes[bytes.len() - 1].is_ascii_alphanumeric()
            && bytes.iter().all(|b| b.is_ascii_alphanumeric() || *b == b'-');
        if !ok {
            return Err(format!("{domain:?} is not an issuer domain name"));
        }
    }
    Ok(Some(domain.to_ascii_lowercase()))
}

fn check_iodef(value: &str) -> Result<(), String> {
    let url = url::Url::parse(value.trim()).map_err(|e| format!("iodef URL: {e}"))?;
    match url.scheme() {
        "mailto" | "http" | "https" => Ok(()),
        s => Err(format!("iodef scheme {s:?} not allowed")),
    }
}

/// Wire rdata for a record: flags, tag length, tag, value.
pub fn encode_caa_rdata(flags: u8, tag: &str, value: &[u8]) -> Vec<u8> {
    let mut out = vec![flags, tag.len() as u8];
    out.extend_from_slice(tag.as_bytes());
    out.extend_from_slice(value);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_issue() {
        let r = parse_caa_text(r#"0 issue "letsencrypt.org""#);
        assert_eq!(r.parse_status, CaaParseStatus::Ok);
        assert_eq!(r.tag, "issue");
        assert_eq!(r.value, "letsencrypt.org");
        assert_eq!(r.issuer_domain.as_deref(), Some("letsencrypt.org"));
    }

    #[test]
    fn reserved_bit() {
        let r = parse_caa_wire(&encode_caa_rdata(128, "issue", b"ca.example"));
        assert_eq!(r.parse_status, CaaParseStatus::ReservedBit);
        assert_eq!(r.flags, 128);
        let r = parse_caa_text(r#"128 issue "ca.example""#);
        assert_eq!(r.parse_status, CaaParseStatus::ReservedBit);
    }

    #[test]
    fn mail_address_as_issuer() {
        let r = parse_caa_text(r#"0 issue "mailto:admin@example.com""#);
        assert_eq!(r.parse_status, CaaParseStatus::Unparsable);
        let r = parse_caa_text(r#"0 issue "admin@example.com""#);
        assert_eq!(r.parse_status, CaaParseStatus::Unparsable);
    }

    #[test]
    fn quoting_errors() {
        for bad in [
            r#"0 issue "ca.example"#,
            r#"0 issue ca.example""#,
            r#"0 issue "ca.example" extra"#,
            r#"0 issue ca example"#,
            r#"0 issue "ca.example\"#,
        ] {
            assert_eq!(parse_caa_text(bad).parse_status, CaaParseStatus::Unparsable, "{bad}");
        }
    }

    #[test]
    fn accepted_forms() {
        for good in [
            r#"0 issue ";""#,
            r#"0 issue "ca.example; account=123""#,
            "0 issue ca.example",
            r#"0 issuewild "ca.example""#,
            r#"0 iodef "mailto:security@example.com""#,
            r#"0 iodef "https://iodef.example.com/""#,
            r#"0 ISSUE "CA.Example""#,
            r#"0 issue "\099a.example""#,
        ] {
            assert_eq!(parse_caa_text(good).parse_status, CaaParseStatus::Ok, "{good}");
        }
        assert_eq!(parse_caa_text(r#"0 issue ";""#).issuer_domain, None);
        assert_eq!(parse_caa_text(r#"0 issue "\099a.example""#).value, "ca.example");
    }

    #[test]
    fn unknown_tag_and_bad_iodef() {
        assert_eq!(parse_caa_text(r#"0 tbs "x""#).parse_status, CaaParseStatus::Unparsable);
        assert_eq!(
            parse_caa_text(r#"0 iodef "ftp://x.example/""#).parse_status,
            CaaParseStatus::Unparsable
        );
    }

    #[test]
    fn raw_is_preserved() {
        let text = "  0 issue \"ca.example\" ";
        assert_eq!(parse_caa_text(text).raw, text.as_bytes());
        let wire = encode_caa_rdata(0, "issue", b"\xff\xfe");
        let r = parse_caa_wire(&wire);
        assert_eq!(r.raw, wire);
        assert_eq!(r.parse_status, CaaParseStatus::Unparsable);
        assert_eq!(parse_caa_wire(&[0]).raw, vec![0]);
    }
}
