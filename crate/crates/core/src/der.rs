//! Minimal DER reading and writing.
//!
//! Used for three things: locating the byte offset of structural errors in
//! undecodable certificates, parsing OCSP responses, and encoding OCSP
//! requests. Only definite-length DER is accepted.

use chrono::{NaiveDateTime, TimeZone, Utc};

use crate::clock::Timestamp;

pub const TAG_BOOLEAN: u8 = 0x01;
pub const TAG_INTEGER: u8 = 0x02;
pub const TAG_BIT_STRING: u8 = 0x03;
pub const TAG_OCTET_STRING: u8 = 0x04;
pub const TAG_NULL: u8 = 0x05;
pub const TAG_OID: u8 = 0x06;
pub const TAG_ENUMERATED: u8 = 0x0a;
pub const TAG_UTC_TIME: u8 = 0x17;
pub const TAG_GENERALIZED_TIME: u8 = 0x18;
pub const TAG_SEQUENCE: u8 = 0x30;
pub const TAG_SET: u8 = 0x31;

const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerErrorKind {
    Truncated,
    IndefiniteLength,
    BadLength,
    UnexpectedTag { expected: u8, found: u8 },
    TrailingData,
    TooDeep,
    BadValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("DER error at byte offset {offset}: {kind:?}")]
pub struct DerError {
    pub offset: usize,
    pub kind: DerErrorKind,
}

impl DerError {
    fn at(offset: usize, kind: DerErrorKind) -> Self {
        DerError { offset, kind }
    }
}

struct Header {
    tag: u8,
    constructed: bool,
    header_len: usize,
    length: usize,
}

fn parse_header(data: &[u8], start: usize, limit: usize) -> Result<Header, DerError> {
    let truncated = || DerError::at(start, DerErrorKind::Truncated);
    let mut pos = start;
    let tag = *data.get(pos).filter(|_| pos < limit).ok_or_else(truncated)?;
    pos += 1;
    if tag & 0x1f == 0x1f {
        // high tag number form
        loop {
            let b = *data.get(pos).filter(|_| pos < limit).ok_or_else(truncated)?;
            pos += 1;
            if b & 0x80 == 0 {
                break;
            }
        }
    }
    let first = *data.get(pos).filter(|_| pos < limit).ok_or_else(truncated)?;
    pos += 1;
    let length = if first < 0x80 {
        first as usize
    } else if first == 0x80 {
        return Err(DerError::at(start, DerErrorKind::IndefiniteLength));
    } else {
        let n = (first & 0x7f) as usize;
        if n > 4 {
            return Err(DerError::at(start, DerErrorKind::BadLength));
        }
        let mut len = 0usize;
        for _ in 0..n {
            let b = *data.get(pos).filter(|_| pos < limit).ok_or_else(truncated)?;
            pos += 1;
            len = (len << 8) | b as usize;
        }
        len
    };
    Ok(Header {
        tag,
        constructed: tag & 0x20 != 0,
        header_len: pos - start,
        length,
    })
}

/// Checks that `data` is exactly one well-formed DER element, descending into
/// constructed encodings. On failure the offset names the innermost element
/// that could not be completed.
pub fn check_structure(data: &[u8]) -> Result<(), DerError> {
    if data.is_empty() {
        return Err(DerError::at(0, DerErrorKind::Truncated));
    }
    let hdr = parse_header(data, 0, data.len())?;
    let end = hdr.header_len + hdr.length;
    if end > data.len() {
        if hdr.constructed {
            walk(data, hdr.header_len, data.len(), 1)?;
        }
        return Err(DerError::at(0, DerErrorKind::Truncated));
    }
    if hdr.constructed {
        walk(data, hdr.header_len, end, 1)?;
    }
    if end < data.len() {
        return Err(DerError::at(end, DerErrorKind::TrailingData));
    }
    Ok(())
}

fn walk(data: &[u8], mut pos: usize, limit: usize, depth: usize) -> Result<(), DerError> {
    if depth > MAX_DEPTH {
        return Err(DerError::at(pos, DerErrorKind::TooDeep));
    }
    while pos < limit {
        let start = pos;
        let hdr = parse_header(data, start, limit)?;
        let content = start + hdr.header_len;
        let end = content + hdr.length;
        if end > limit {
            if hdr.constructed {
                walk(data, content, limit, depth + 1)?;
            }
            return Err(DerError::at(start, DerErrorKind::Truncated));
        }
        if hdr.constructed {
            walk(data, content, end, depth + 1)?;
        }
        pos = end;
    }
    Ok(())
}

/// One decoded element. `offset` is relative to the buffer the outermost
/// [`Reader`] was created over.
#[derive(Debug, Clone, Copy)]
pub struct Tlv<'a> {
    pub tag: u8,
    pub offset: usize,
    pub raw: &'a [u8],
    pub content: &'a [u8],
    content_offset: usize,
}

impl<'a> Tlv<'a> {
    pub fn reader(&self) -> Reader<'a> {
        Reader {
            data: self.content,
            pos: 0,
            base: self.content_offset,
        }
    }

    pub fn is_constructed(&self) -> bool {
        self.tag & 0x20 != 0
    }

    fn bad(&self) -> DerError {
        DerError::at(self.offset, DerErrorKind::BadValue)
    }

    pub fn oid(&self) -> Result<String, DerError> {
        decode_oid(self.content).ok_or_else(|| self.bad())
    }

    pub fn time(&self) -> Result<Timestamp, DerError> {
        let s = std::str::from_utf8(self.content).map_err(|_| self.bad())?;
        match self.tag {
            TAG_GENERALIZED_TIME => parse_generalized_time(s),
            TAG_UTC_TIME => parse_utc_time(s),
            _ => None,
        }
        .ok_or_else(|| self.bad())
    }

    /// Unsigned content of a BIT STRING with zero unused bits.
    pub fn bit_string_bytes(&self) -> Result<&'a [u8], DerError> {
        match self.content.split_first() {
            Some((0, rest)) => Ok(rest),
            _ => Err(self.bad()),
        }
    }

    pub fn small_uint(&self) -> Result<u64, DerError> {
        if self.content.is_empty() || self.content.len() > 8 {
            return Err(self.bad());
        }
        Ok(self.content.iter().fold(0u64, |acc, b| (acc << 8) | *b as u64))
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0, base: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }

    pub fn peek_tag(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    pub fn read(&mut self) -> Result<Tlv<'a>, DerError> {
        let start = self.pos;
        let hdr =
            parse_header(self.data, start, self.data.len()).map_err(|e| DerError::at(e.offset + self.base, e.kind))?;
        let content_start = start + hdr.header_len;
        let end = content_start + hdr.length;
        if end > self.data.len() {
            return Err(DerError::at(self.base + start, DerErrorKind::Truncated));
        }
        self.pos = end;
        Ok(Tlv {
            tag: hdr.tag,
            offset: self.base + start,
            raw: &self.data[start..end],
            content: &self.data[content_start..end],
            content_offset: self.base + content_start,
        })
    }

    pub fn expect(&mut self, tag: u8) -> Result<Tlv<'a>, DerError> {
        let offset = self.base + self.pos;
        let tlv = self.read()?;
        if tlv.tag != tag {
            return Err(DerError::at(
                offset,
                DerErrorKind::UnexpectedTag {
                    expected: tag,
                    found: tlv.tag,
                },
            ));
        }
        Ok(tlv)
    }

    pub fn optional(&mut self, tag: u8) -> Result<Option<Tlv<'a>>, DerError> {
        if self.peek_tag() == Some(tag) {
            self.read().map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn finish(&self) -> Result<(), DerError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(DerError::at(self.base + self.pos, DerErrorKind::TrailingData))
        }
    }
}

pub fn decode_oid(content: &[u8]) -> Option<String> {
    if content.is_empty() {
        return None;
    }
    let mut arcs: Vec<u64> = Vec::new();
    let mut acc: u64 = 0;
    for (i, b) in content.iter().enumerate() {
        acc = acc.checked_mul(128)? | (b & 0x7f) as u64;
        if b & 0x80 == 0 {
            if arcs.is_empty() {
                let (first, second) = match acc {
                    0..=39 => (0, acc),
                    40..=79 => (1, acc - 40),
                    _ => (2, acc - 80),
                };
                arcs.push(first);
                arcs.push(second);
            } else {
                arcs.push(acc);
            }
            acc = 0;
        } else if i == content.len() - 1 {
            return None;
        }
    }
    Some(arcs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("."))
}

fn parse_generalized_time(s: &str) -> Option<Timestamp> {
    let s = s.strip_suffix('Z')?;
    let (main, frac) = match s.split_once('.') {
        Some((m, f)) => (m, Some(f)),
        None => (s, None),
    };
    let mut t = NaiveDateTime::parse_from_str(main, "%Y%m%d%H%M%S").ok()?;
    if let Some(f) = frac {
        let digits: String = f.chars().take(3).collect();
        let ms: i64 = format!("{digits:0<3}").parse().ok()?;
        t += chrono::TimeDelta::milliseconds(ms);
    }
    Some(Utc.from_utc_datetime(&t))
}

fn parse_utc_time(s: &str) -> Option<Timestamp> {
    let s = s.strip_suffix('Z')?;
    let t = NaiveDateTime::parse_from_str(s, "%y%m%d%H%M%S").ok()?;
    Some(Utc.from_utc_datetime(&t))
}

// --- writing ---------------------------------------------------------------

pub fn encode_tlv(tag: u8, content: &[u8]) -> Vec<u8> {
    let mut out = vec![tag];
    let len = content.len();
    if len < 0x80 {
        out.push(len as u8);
    } else {
        let bytes = (len as u32).to_be_bytes();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        out.push(0x80 | (4 - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
    out.extend_from_slice(content);
    out
}

pub fn encode_sequence(parts: &[&[u8]]) -> Vec<u8> {
    encode_tlv(TAG_SEQUENCE, &parts.concat())
}

/// Encodes a non-negative integer given as big-endian magnitude bytes.
pub fn encode_uint(magnitude: &[u8]) -> Vec<u8> {
    let trimmed: &[u8] = {
        let skip = magnitude
            .iter()
            .take_while(|b| **b == 0)
            .count()
            .min(magnitude.len().saturating_sub(1));
        &magnitude[skip..]
    };
    let mut content = Vec::with_capacity(trimmed.len() + 1);
    if trimmed.first().is_some_and(|b| b & 0x80 != 0) {
        content.push(0);
    }
    content.extend_from_slice(trimmed);
    if content.is_empty() {
        content.push(0);
    }
    encode_tlv(TAG_INTEGER, &content)
}

pub fn encode_oid(dotted: &str) -> Option<Vec<u8>> {
    let arcs: Vec<u64> = dotted.split('.').map(|a| a.parse().ok()).collect::<Option<_>>()?;
    if arcs.len() < 2 || arcs[0] > 2 {
        return None;
    }
    let mut content = Vec::new();
    let mut push_arc = |mut v: u64| {
        let mut tmp = vec![(v & 0x7f) as u8];
        v >>= 7;
        while v > 0 {
            tmp.push(0x80 | (v & 0x7f) as u8);
            v >>= 7;
        }
        tmp.reverse();
        content.extend(tmp);
    };
    push_arc(arcs[0] * 40 + arcs[1]);
    for a in &arcs[2..] {
        push_arc(*a);
    }
    Some(encode_tlv(TAG_OID, &content))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oid_round_trip() {
        for oid in ["2.23.140.1.2.1", "1.3.6.1.5.5.7.48.1", "1.2.840.113549.1.1.11"] {
            let enc = encode_oid(oid).unwrap();
            let tlv = Reader::new(&enc).expect(TAG_OID).unwrap();
            assert_eq!(tlv.oid().unwrap(), oid);
        }
    }

    #[test]
    fn structure_errors_name_innermost_element() {
        // SEQUENCE { INTEGER 5, OCTET STRING "abcd" }
        let inner = [encode_uint(&[5]), encode_tlv(TAG_OCTET_STRING, b"abcd")].concat();
        let doc = encode_tlv(TAG_SEQUENCE, &inner);
        assert!(check_structure(&doc).is_ok());
        // cut inside the octet string: offset of the octet string (2 + 3)
        let err = check_structure(&doc[..7]).unwrap_err();
        assert_eq!(err.offset, 5);
        assert_eq!(err.kind, DerErrorKind::Truncated);
        // cut exactly after the integer: only the outer sequence is incomplete
        let err = check_structure(&doc[..5]).unwrap_err();
        assert_eq!(err.offset, 0);
        // trailing data
        let mut extra = doc.clone();
        extra.push(0);
        assert_eq!(check_structure(&extra).unwrap_err().kind, DerErrorKind::TrailingData);
    }

    #[test]
    fn long_form_lengths() {
        let content = vec![7u8; 300];
        let enc = encode_tlv(TAG_OCTET_STRING, &content);
        assert_eq!(&enc[..4], &[0x04, 0x82, 0x01, 0x2c]);
        let tlv = Reader::new(&enc).read().unwrap();
        assert_eq!(tlv.content.len(), 300);
        assert!(check_structure(&[0x30, 0x80, 0, 0]).is_err());
    }

    #[test]
    fn times() {
        let g = encode_tlv(TAG_GENERALIZED_TIME, b"20240102030405Z");
        let t = Reader::new(&g).read().unwrap().time().unwrap();
        assert_eq!(t.to_rfc3339(), "2024-01-02T03:04:05+00:00");
        let u = encode_tlv(TAG_UTC_TIME, b"240102030405Z");
        assert_eq!(Reader::new(&u).read().unwrap().time().unwrap(), t);
    }

    #[test]
    fn uint_encoding() {
        assert_eq!(encode_uint(&[0x80]), vec![0x02, 0x02, 0x00, 0x80]);
        assert_eq!(encode_uint(&[0, 0, 1]), vec![0x02, 0x01, 0x01]);
        assert_eq!(encode_uint(&[]), vec![0x02, 0x01, 0x00]);
    }
}
