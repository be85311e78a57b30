//! Record types and conversion between rdata and presentation text.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use chrono::{NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::wire::{encode_name, read_name};
use crate::clock::Timestamp;
use crate::encoding::{b64_decode, b64_encode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecordType {
    A,
    Aaaa,
    Ns,
    Cname,
    Soa,
    Txt,
    Caa,
    Tlsa,
    Rrsig,
    Other(u16),
}

impl RecordType {
    pub fn code(self) -> u16 {
        match self {
            RecordType::A => 1,
            RecordType::Ns => 2,
            RecordType::Cname => 5,
            RecordType::Soa => 6,
            RecordType::Txt => 16,
            RecordType::Aaaa => 28,
            RecordType::Rrsig => 46,
            RecordType::Tlsa => 52,
            RecordType::Caa => 257,
            RecordType::Other(c) => c,
        }
    }

    pub fn from_code(code: u16) -> Self {
        match code {
            1 => RecordType::A,
            2 => RecordType::Ns,
            5 => RecordType::Cname,
            6 => RecordType::Soa,
            16 => RecordType::Txt,
            28 => RecordType::Aaaa,
            46 => RecordType::Rrsig,
            52 => RecordType::Tlsa,
            257 => RecordType::Caa,
            c => RecordType::Other(c),
        }
    }

    pub fn is_address(self) -> bool {
        matches!(self, RecordType::A | RecordType::Aaaa)
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordType::A => f.write_str("A"),
            RecordType::Aaaa => f.write_str("AAAA"),
            RecordType::Ns => f.write_str("NS"),
            RecordType::Cname => f.write_str("CNAME"),
            RecordType::Soa => f.write_str("SOA"),
            RecordType::Txt => f.write_str("TXT"),
            RecordType::Caa => f.write_str("CAA"),
            RecordType::Tlsa => f.write_str("TLSA"),
            RecordType::Rrsig => f.write_str("RRSIG"),
            RecordType::Other(c) => write!(f, "TYPE{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown record type {0:?}")]
pub struct UnknownRecordType(pub String);

impl FromStr for RecordType {
    type Err = UnknownRecordType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.to_ascii_uppercase();
        Ok(match up.as_str() {
            "A" => RecordType::A,
            "AAAA" => RecordType::Aaaa,
            "NS" => RecordType::Ns,
            "CNAME" => RecordType::Cname,
            "SOA" => RecordType::Soa,
            "TXT" => RecordType::Txt,
            "CAA" => RecordType::Caa,
            "TLSA" => RecordType::Tlsa,
            "RRSIG" => RecordType::Rrsig,
            _ => match up.strip_prefix("TYPE").and_then(|n| n.parse().ok()) {
                Some(c) => RecordType::from_code(c),
                None => return Err(UnknownRecordType(s.to_string())),
            },
        })
    }
}

impl Serialize for RecordType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RecordType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsaRecord {
    pub usage: u8,
    pub selector: u8,
    pub matching_type: u8,
    #[serde(with = "crate::encoding::b64")]
    pub association: Vec<u8>,
}

impl TlsaRecord {
    pub fn from_rdata(rdata: &[u8]) -> Option<Self> {
        if rdata.len() < 3 {
            return None;
        }
        Some(TlsaRecord {
            usage: rdata[0],
            selector: rdata[1],
            matching_type: rdata[2],
            association: rdata[3..].to_vec(),
        })
    }

    pub fn to_rdata(&self) -> Vec<u8> {
        let mut out = vec![self.usage, self.selector, self.matching_type];
        out.extend_from_slice(&self.association);
        out
    }
}

/// The parts of an RRSIG the collector keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RrsigSummary {
    pub type_covered: RecordType,
    pub inception: Timestamp,
    pub expiration: Timestamp,
}

impl RrsigSummary {
    pub fn from_rdata(rdata: &[u8]) -> Option<Self> {
        if rdata.len() < 18 {
            return None;
        }
        let covered = u16::from_be_bytes([rdata[0], rdata[1]]);
        let exp = u32::from_be_bytes([rdata[8], rdata[9], rdata[10], rdata[11]]);
        let inc = u32::from_be_bytes([rdata[12], rdata[13], rdata[14], rdata[15]]);
        Some(RrsigSummary {
            type_covered: RecordType::from_code(covered),
            inception: Utc.timestamp_opt(i64::from(inc), 0).single()?,
            expiration: Utc.timestamp_opt(i64::from(exp), 0).single()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{rtype} rdata: {reason}")]
pub struct RdataError {
    pub rtype: String,
    pub reason: String,
}

fn err(rtype: RecordType, reason: impl Into<String>) -> RdataError {
    RdataError {
        rtype: rtype.to_string(),
        reason: reason.into(),
    }
}

/// Resolves a possibly relative zone-file name against `origin`.
pub fn absolute_name(name: &str, origin: &str) -> String {
    if name == "@" {
        return origin.trim_end_matches('.').to_string();
    }
    if let Some(abs) = name.strip_suffix('.') {
        return abs.to_string();
    }
    let origin = origin.trim_end_matches('.');
    if origin.is_empty() {
        name.to_string()
    } else {
        format!("{name}.{origin}")
    }
}

/// Builds rdata from zone-file tokens. Quoted tokens keep their quotes.
pub fn encode_rdata(rtype: RecordType, tokens: &[String], origin: &str) -> Result<Vec<u8>, RdataError> {
    if tokens.first().map(String::as_str) == Some("\\#") {
        let len: usize = tokens
            .get(1)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err(rtype, "generic form needs a length"))?;
        let hex_str: String = tokens[2..].concat();
        let bytes = hex::decode(&hex_str).map_err(|e| err(rtype, e.to_string()))?;
        if bytes.len() != len {
            return Err(err(rtype, format!("generic length {len} but {} octets", bytes.len())));
        }
        return Ok(bytes);
    }
    let want = |n: usize| -> Result<(), RdataError> {
        if tokens.len() < n {
            Err(err(rtype, format!("expected {n} fields, got {}", tokens.len())))
        } else {
            Ok(())
        }
    };
    let name_bytes = |t: &str| -> Result<Vec<u8>, RdataError> {
        let mut out = Vec::new();
        encode_name(&absolute_name(t, origin), &mut out).map_err(|e| err(rtype, e.to_string()))?;
        Ok(out)
    };
    let num = |t: &str| -> Result<u32, RdataError> {
        t.parse::<u32>()
            .map_err(|_| err(rtype, format!("{t:?} is not a number")))
    };
    match rtype {
        RecordType::A => {
            want(1)?;
            let ip: Ipv4Addr = tokens[0].parse().map_err(|_| err(rtype, "bad IPv4 address"))?;
            Ok(ip.octets().to_vec())
        }
        RecordType::Aaaa => {
            want(1)?;
            let ip: Ipv6Addr = tokens[0].parse().map_err(|_| err(rtype, "bad IPv6 address"))?;
            Ok(ip.octets().to_vec())
        }
        RecordType::Ns | RecordType::Cname => {
            want(1)?;
            name_bytes(&tokens[0])
        }
        RecordType::Soa => {
            want(7)?;
            let mut out = name_bytes(&tokens[0])?;
            out.extend(name_bytes(&tokens[1])?);
            for t in &tokens[2..7] {
                out.extend_from_slice(&num(t)?.to_be_bytes());
            }
            Ok(out)
        }
        RecordType::Txt => {
            want(1)?;
            let mut out = Vec::new();
            for t in tokens {
                let s = unquote_token(t).map_err(|e| err(rtype, e))?;
                if s.len() > 255 {
                    return Err(err(rtype, "character-string longer than 255"));
                }
                out.push(s.len() as u8);
                out.extend_from_slice(&s);
            }
            Ok(out)
        }
        RecordType::Caa => {
            want(3)?;
            let flags = u8::try_from(num(&tokens[0])?).map_err(|_| err(rtype, "flags above 255"))?;
            let tag = &tokens[1];
            if tag.is_empty() || tag.len() > 255 {
                return Err(err(rtype, "bad tag length"));
            }
            let value = unquote_token(&tokens[2..].join(" ")).map_err(|e| err(rtype, e))?;
            let mut out = vec![flags, tag.len() as u8];
            out.extend_from_slice(tag.as_bytes());
            out.extend_from_slice(&value);
            Ok(out)
        }
        RecordType::Tlsa => {
            want(4)?;
            let mut out = Vec::new();
            for t in &tokens[..3] {
                out.push(u8::try_from(num(t)?).map_err(|_| err(rtype, "field above 255"))?);
            }
            let assoc = hex::decode(tokens[3..].concat()).map_err(|e| err(rtype, e.to_string()))?;
            out.extend(assoc);
            Ok(out)
        }
        RecordType::Rrsig => {
            want(9)?;
            let covered: RecordType = tokens[0]
                .parse()
                .map_err(|e: UnknownRecordType| err(rtype, e.to_string()))?;
            let mut out = covered.code().to_be_bytes().to_vec();
            out.push(u8::try_from(num(&tokens[1])?).map_err(|_| err(rtype, "algorithm above 255"))?);
            out.push(u8::try_from(num(&tokens[2])?).map_err(|_| err(rtype, "labels above 255"))?);
            out.extend_from_slice(&num(&tokens[3])?.to_be_bytes());
            out.extend_from_slice(&sig_time(&tokens[4]).map_err(|e| err(rtype, e))?.to_be_bytes());
            out.extend_from_slice(&sig_time(&tokens[5]).map_err(|e| err(rtype, e))?.to_be_bytes());
            out.extend_from_slice(
                &(u16::try_from(num(&tokens[6])?).map_err(|_| err(rtype, "key tag above 65535"))?).to_be_bytes(),
            );
            out.extend(name_bytes(&tokens[7])?);
            out.extend(b64_decode(&tokens[8..].concat()).map_err(|e| err(rtype, e.to_string()))?);
            Ok(out)
        }
        RecordType::Other(_) => Err(err(rtype, "only the generic \\# form is supported")),
    }
}

fn sig_time(t: &str) -> Result<u32, String> {
    if t.len() == 14 {
        let dt = NaiveDateTime::parse_from_str(t, "%Y%m%d%H%M%S").map_err(|e| e.to_string())?;
        return u32::try_from(dt.and_utc().timestamp()).map_err(|_| "time out of range".into());
    }
    t.parse().map_err(|_| format!("bad signature time {t:?}"))
}

fn unquote_token(t: &str) -> Result<Vec<u8>, String> {
    let body = match t.strip_prefix('"') {
        Some(b) => b.strip_suffix('"').ok_or("unterminated quote")?,
        None => t,
    };
    let bytes = body.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            let rest = &bytes[i + 1..];
            if rest.len() >= 3 && rest[..3].iter().all(u8::is_ascii_digit) {
                let code: u16 = std::str::from_utf8(&rest[..3])
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(256);
                out.push(u8::try_from(code).map_err(|_| "escape above 255")?);
                i += 4;
                continue;
            }
            match rest.first() {
                Some(&c) => out.push(c),
                None => return Err("dangling escape".into()),
            }
            i += 2;
            continue;
        }
        out.push(bytes[i]);
        i += 1;
    }
    Ok(out)
}

fn quote_bytes(b: &[u8]) -> String {
    let mut s = String::from("\"");
    for &c in b {
        match c {
            b'"' | b'\\' => {
                s.push('\\');
                s.push(c as char);
            }
            0x20..=0x7e => s.push(c as char),
            _ => s.push_str(&format!("\\{c:03}")),
        }
    }
    s.push('"');
    s
}

fn generic(rdata: &[u8]) -> String {
    format!("\\# {} {}", rdata.len(), hex::encode(rdata))
}

/// Presentation form of rdata; falls back to the generic `\#` form for
/// anything it cannot decode.
pub fn format_rdata(rtype: RecordType, rdata: &[u8]) -> String {
    let name_at = |pos: &mut usize| -> Option<String> {
        let n = read_name(rdata, pos).ok()?;
        Some(format!("{n}."))
    };
    let decoded: Option<String> = match rtype {
        RecordType::A => <[u8; 4]>::try_from(rdata).ok().map(|o| Ipv4Addr::from(o).to_string()),
        RecordType::Aaaa => <[u8; 16]>::try_from(rdata).ok().map(|o| Ipv6Addr::from(o).to_string()),
        RecordType::Ns | RecordType::Cname => {
            let mut pos = 0;
            name_at(&mut pos).filter(|_| pos == rdata.len())
        }
        RecordType::Soa => (|| {
            let mut pos = 0;
            let m = name_at(&mut pos)?;
            let r = name_at(&mut pos)?;
            let tail = rdata.get(pos..)?;
            if tail.len() != 20 {
                return None;
            }
            let n: Vec<String> = tail
                .chunks(4)
                .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]).to_string())
                .collect();
            Some(format!("{m} {r} {}", n.join(" ")))
        })(),
        RecordType::Txt => (|| {
            let mut parts = Vec::new();
            let mut pos = 0;
            while pos < rdata.len() {
                let l = rdata[pos] as usize;
                parts.push(quote_bytes(rdata.get(pos + 1..pos + 1 + l)?));
                pos += 1 + l;
            }
            Some(parts.join(" "))
        })(),
        RecordType::Caa => (|| {
            let flags = *rdata.first()?;
            let tl = *rdata.get(1)? as usize;
            let tag = std::str::from_utf8(rdata.get(2..2 + tl)?).ok()?;
            Some(format!("{flags} {tag} {}", quote_bytes(&rdata[2 + tl..])))
        })(),
        RecordType::Tlsa => TlsaRecord::from_rdata(rdata).map(|t| {
            format!(
                "{} {} {} {}",
                t.usage,
                t.selector,
                t.matching_type,
                hex::encode(&t.association)
            )
        }),
        RecordType::Rrsig => (|| {
            let s = RrsigSummary::from_rdata(rdata)?;
            let mut pos = 18;
            let signer = name_at(&mut pos)?;
            Some(format!(
                "{} {} {} {} {} {} {} {} {}",
                s.type_covered,
                rdata[2],
                rdata[3],
                u32::from_be_bytes([rdata[4], rdata[5], rdata[6], rdata[7]]),
                s.expiration.format("%Y%m%d%H%M%S"),
                s.inception.format("%Y%m%d%H%M%S"),
                u16::from_be_bytes([rdata[16], rdata[17]]),
                signer,
                b64_encode(&rdata[pos..])
            ))
        })(),
        RecordType::Other(_) => None,
    };
    decoded.unwrap_or_else(|| generic(rdata))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn type_names_round_trip() {
        for t in [RecordType::A, RecordType::Tlsa, RecordType::Caa, RecordType::Other(99)] {
            assert_eq!(t.to_string().parse::<RecordType>().unwrap(), t);
            assert_eq!(RecordType::from_code(t.code()), t);
        }
        assert_eq!(serde_json::to_string(&RecordType::Aaaa).unwrap(), "\"AAAA\"");
    }

    #[test]
    fn tlsa_rdata() {
        let r = encode_rdata(RecordType::Tlsa, &toks("3 1 1 abcd EF01"), "x.test").unwrap();
        assert_eq!(r, vec![3, 1, 1, 0xab, 0xcd, 0xef, 0x01]);
        assert_eq!(format_rdata(RecordType::Tlsa, &r), "3 1 1 abcdef01");
    }

    #[test]
    fn soa_and_names() {
        let r = encode_rdata(RecordType::Soa, &toks("ns1 hostmaster.x.test. 1 2 3 4 5"), "x.test").unwrap();
        assert_eq!(
            format_rdata(RecordType::Soa, &r),
            "ns1.x.test. hostmaster.x.test. 1 2 3 4 5"
        );
        assert_eq!(absolute_name("@", "x.test."), "x.test");
    }

    #[test]
    fn caa_rdata() {
        let r = encode_rdata(
            RecordType::Caa,
            &["0".into(), "issue".into(), "\"ca.example\"".into()],
            "",
        )
        .unwrap();
        assert_eq!(r, b"\x00\x05issueca.example");
        assert_eq!(format_rdata(RecordType::Caa, &r), "0 issue \"ca.example\"");
    }

    #[test]
    fn generic_form() {
        let r = encode_rdata(RecordType::Other(65000), &toks("\\# 3 010203"), "").unwrap();
        assert_eq!(r, vec![1, 2, 3]);
        assert_eq!(format_rdata(RecordType::Other(65000), &r), "\\# 3 010203");
        assert!(encode_rdata(RecordType::A, &toks("\\# 2 010203"), "").is_err());
    }

    #[test]
    fn rrsig_window() {
        let r = encode_rdata(
            RecordType::Rrsig,
            &toks("A 13 2 300 20300101000000 20200101000000 1234 x.test. AAEC"),
            "",
        )
        .unwrap();
        let s = RrsigSummary::from_rdata(&r).unwrap();
        assert_eq!(s.type_covered, RecordType::A);
        assert!(s.inception < s.expiration);
        assert_eq!(s.inception.format("%Y").to_string(), "2020");
    }
}
