//! DNS message codec.
//!
//! Decoding expands compressed names, including those embedded in the rdata
//! of NS, CNAME, SOA, PTR and MX records, so stored rdata never depends on
//! the layout of the message it came from. Encoding never compresses.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("message truncated at offset {0}")]
    Truncated(usize),
    #[error("bad label at offset {0}")]
    BadLabel(usize),
    #[error("compression pointer loop at offset {0}")]
    PointerLoop(usize),
    #[error("name too long")]
    NameTooLong,
    #[error("invalid name {0:?}")]
    InvalidName(String),
}

pub const CLASS_IN: u16 = 1;
pub const TYPE_OPT: u16 = 41;

pub const RCODE_NOERROR: u8 = 0;
pub const RCODE_FORMERR: u8 = 1;
pub const RCODE_SERVFAIL: u8 = 2;
pub const RCODE_NXDOMAIN: u8 = 3;
pub const RCODE_NOTIMP: u8 = 4;
pub const RCODE_REFUSED: u8 = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Header {
    pub id: u16,
    pub qr: bool,
    pub opcode: u8,
    pub aa: bool,
    pub tc: bool,
    pub rd: bool,
    pub ra: bool,
    pub ad: bool,
    pub cd: bool,
    pub rcode: u8,
}

impl Header {
    fn flags(&self) -> u16 {
        (u16::from(self.qr) << 15)
            | (u16::from(self.opcode & 0x0f) << 11)
            | (u16::from(self.aa) << 10)
            | (u16::from(self.tc) << 9)
            | (u16::from(self.rd) << 8)
            | (u16::from(self.ra) << 7)
            | (u16::from(self.ad) << 5)
            | (u16::from(self.cd) << 4)
            | u16::from(self.rcode & 0x0f)
    }

    fn from_parts(id: u16, f: u16) -> Self {
        Header {
            id,
            qr: f & 0x8000 != 0,
            opcode: ((f >> 11) & 0x0f) as u8,
            aa: f & 0x0400 != 0,
            tc: f & 0x0200 != 0,
            rd: f & 0x0100 != 0,
            ra: f & 0x0080 != 0,
            ad: f & 0x0020 != 0,
            cd: f & 0x0010 != 0,
            rcode: (f & 0x0f) as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub name: String,
    pub qtype: u16,
    pub qclass: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceRecord {
    pub name: String,
    pub rtype: u16,
    pub class: u16,
    pub ttl: u32,
    pub rdata: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Message {
    pub header: Header,
    pub questions: Vec<Question>,
    pub answers: Vec<ResourceRecord>,
    pub authority: Vec<ResourceRecord>,
    pub additional: Vec<ResourceRecord>,
}

impl Message {
    pub fn query(id: u16, name: &str, qtype: u16, dnssec: bool) -> Self {
        let mut m = Message {
            header: Header {
                id,
                rd: true,
                ..Default::default()
            },
            questions: vec![Question {
                name: name.to_string(),
                qtype,
                qclass: CLASS_IN,
            }],
            ..Default::default()
        };
        m.additional.push(ResourceRecord {
            name: String::new(),
            rtype: TYPE_OPT,
            class: 1232,
            ttl: if dnssec { 0x8000 } else { 0 },
            rdata: Vec::new(),
        });
        m
    }

    /// Whether the query carried an OPT record with the DO bit.
    pub fn dnssec_ok(&self) -> bool {
        self.additional
            .iter()
            .any(|r| r.rtype == TYPE_OPT && r.ttl & 0x8000 != 0)
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::with_capacity(512);
        out.extend_from_slice(&self.header.id.to_be_bytes());
        out.extend_from_slice(&self.header.flags().to_be_bytes());
        for n in [
            self.questions.len(),
            self.answers.len(),
            self.authority.len(),
            self.additional.len(),
        ] {
            out.extend_from_slice(&(n as u16).to_be_bytes());
        }
        for q in &self.questions {
            encode_name(&q.name, &mut out)?;
            out.extend_from_slice(&q.qtype.to_be_bytes());
            out.extend_from_slice(&q.qclass.to_be_bytes());
        }
        for rr in self.answers.iter().chain(&self.authority).chain(&self.additional) {
            encode_name(&rr.name, &mut out)?;
            out.extend_from_slice(&rr.rtype.to_be_bytes());
            out.extend_from_slice(&rr.class.to_be_bytes());
            out.extend_from_slice(&rr.ttl.to_be_bytes());
            out.extend_from_slice(&(rr.rdata.len() as u16).to_be_bytes());
            out.extend_from_slice(&rr.rdata);
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut pos = 0;
        let id = read_u16(buf, &mut pos)?;
        let flags = read_u16(buf, &mut pos)?;
        let qd = read_u16(buf, &mut pos)?;
        let an = read_u16(buf, &mut pos)?;
        let ns = read_u16(buf, &mut pos)?;
        let ar = read_u16(buf, &mut pos)?;
        let mut m = Message {
            header: Header::from_parts(id, flags),
            ..Default::default()
        };
        for _ in 0..qd {
            let name = read_name(buf, &mut pos)?;
            let qtype = read_u16(buf, &mut pos)?;
            let qclass = read_u16(buf, &mut pos)?;
            m.questions.push(Question { name, qtype, qclass });
        }
        for (count, section) in [(an, &mut m.answers), (ns, &mut m.authority), (ar, &mut m.additional)] {
            for _ in 0..count {
                section.push(read_rr(buf, &mut pos)?);
            }
        }
        Ok(m)
    }
}

fn read_u16(buf: &[u8], pos: &mut usize) -> Result<u16, WireError> {
    let b = buf.get(*pos..*pos + 2).ok_or(WireError::Truncated(*pos))?;
    *pos += 2;
    Ok(u16::from_be_bytes([b[0], b[1]]))
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32, WireError> {
    let b = buf.get(*pos..*pos + 4).ok_or(WireError::Truncated(*pos))?;
    *pos += 4;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_rr(buf: &[u8], pos: &mut usize) -> Result<ResourceRecord, WireError> {
    let name = read_name(buf, pos)?;
    let rtype = read_u16(buf, pos)?;
    let class = read_u16(buf, pos)?;
    let ttl = read_u32(buf, pos)?;
    let len = read_u16(buf, pos)? as usize;
    let start = *pos;
    let end = start + len;
    if end > buf.len() {
        return Err(WireError::Truncated(start));
    }
    let rdata = canonical_rdata(buf, start, end, rtype)?;
    *pos = end;
    Ok(ResourceRecord {
        name,
        rtype,
        class,
        ttl,
        rdata,
    })
}

/// Rdata with any embedded compressed names expanded.
fn canonical_rdata(buf: &[u8], start: usize, end: usize, rtype: u16) -> Result<Vec<u8>, WireError> {
    let names_then_tail: &[bool] = match rtype {
        // NS, CNAME, PTR: one name
        2 | 5 | 12 => &[true],
        // SOA: mname, rname, then 20 octets of counters
        6 => &[true, true],
        // MX: preference then exchange
        15 => {
            let mut out = buf.get(start..start + 2).ok_or(WireError::Truncated(start))?.to_vec();
            let mut pos = start + 2;
            encode_name(&read_name(buf, &mut pos)?, &mut out)?;
            return Ok(out);
        }
        _ => return Ok(buf[start..end].to_vec()),
    };
    let mut pos = start;
    let mut out = Vec::new();
    for _ in names_then_tail {
        let name = read_name(buf, &mut pos)?;
        encode_name(&name, &mut out)?;
    }
    if pos > end {
        return Err(WireError::Truncated(end));
    }
    out.extend_from_slice(&buf[pos..end]);
    Ok(out)
}

/// Reads a possibly compressed name; returns it lowercased-as-sent without
/// a trailing dot (root is the empty string).
pub fn read_name(buf: &[u8], pos: &mut usize) -> Result<String, WireError> {
    let mut labels: Vec<String> = Vec::new();
    let mut cursor = *pos;
    let mut jumped = false;
    let mut hops = 0;
    let mut total = 0;
    loop {
        let len = *buf.get(cursor).ok_or(WireError::Truncated(cursor))?;
        match len & 0xc0 {
            0x00 => {
                if len == 0 {
                    if !jumped {
                        *pos = cursor + 1;
                    }
                    break;
                }
                let l = len as usize;
                let label = buf
                    .get(cursor + 1..cursor + 1 + l)
                    .ok_or(WireError::Truncated(cursor + 1))?;
                total += l + 1;
                if total > 255 {
                    return Err(WireError::NameTooLong);
                }
                labels.push(escape_label(label));
                cursor += 1 + l;
            }
            0xc0 => {
                let lo = *buf.get(cursor + 1).ok_or(WireError::Truncated(cursor + 1))?;
                if !jumped {
                    *pos = cursor + 2;
                }
                jumped = true;
                hops += 1;
                if hops > 64 {
                    return Err(WireError::PointerLoop(cursor));
                }
                cursor = (((len & 0x3f) as usize) << 8) | lo as usize;
            }
            _ => return Err(WireError::BadLabel(cursor)),
        }
    }
    Ok(labels.join("."))
}

fn escape_label(label: &[u8]) -> String {
    let mut s = String::with_capacity(label.len());
    for &b in label {
        match b {
            b'.' | b'\\' => {
                s.push('\\');
                s.push(b as char);
            }
            0x21..=0x7e => s.push(b as char),
            _ => s.push_str(&format!("\\{b:03}")),
        }
    }
    s
}

/// Encodes a dotted name (trailing dot optional, `\.` and `\DDD` escapes
/// honoured) in uncompressed wire form.
pub fn encode_name(name: &str, out: &mut Vec<u8>) -> Result<(), WireError> {
    let name = name.strip_suffix('.').unwrap_or(name);
    let start = out.len();
    if !name.is_empty() {
        for label in split_labels(name)? {
            if label.is_empty() || label.len() > 63 {
                return Err(WireError::InvalidName(name.to_string()));
            }
            out.push(label.len() as u8);
            out.extend_from_slice(&label);
        }
    }
    out.push(0);
    if out.len() - start > 255 {
        return Err(WireError::NameTooLong);
    }
    Ok(())
}

fn split_labels(name: &str) -> Result<Vec<Vec<u8>>, WireError> {
    let mut labels = vec![Vec::new()];
    let bytes = name.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'.' => labels.push(Vec::new()),
            b'\\' => {
                let rest = &bytes[i + 1..];
                if rest.len() >= 3 && rest[..3].iter().all(u8::is_ascii_digit) {
                    let code: u16 = std::str::from_utf8(&rest[..3])
                        .ok()
                        .and_then(|s| s.parse().ok())
                        .unwrap_or(256);
                    let b = u8::try_from(code).map_err(|_| WireError::InvalidName(name.into()))?;
                    labels.last_mut().unwrap_or(&mut Vec::new()).push(b);
                    i += 3;
                } else if let Some(&c) = rest.first() {
                    if let Some(l) = labels.last_mut() {
                        l.push(c);
                    }
                    i += 1;
                } else {
                    return Err(WireError::InvalidName(name.into()));
                }
            }
            b => {
                if let Some(l) = labels.last_mut() {
                    l.push(b);
                }
            }
        }
        i += 1;
    }
    Ok(labels)
}

/// Case-insensitive name comparison on the dotted form.
pub fn names_equal(a: &str, b: &str) -> bool {
    a.trim_end_matches('.').eq_ignore_ascii_case(b.trim_end_matches('.'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_round_trip() {
        let q = Message::query(0x1234, "example.com", 1, true);
        let bytes = q.encode().unwrap();
        let back = Message::decode(&bytes).unwrap();
        assert_eq!(back, q);
        assert!(back.dnssec_ok());
        assert!(back.header.rd);
    }

    #[test]
    fn expands_compressed_names_in_rdata() {
        // header, one question for a.test A, one CNAME answer pointing back
        // into the question name
        let mut buf = vec![0, 1, 0x81, 0x80, 0, 1, 0, 1, 0, 0, 0, 0];
        buf.extend_from_slice(b"\x01a\x04test\x00\x00\x05\x00\x01");
        buf.extend_from_slice(&[0xc0, 12, 0, 5, 0, 1, 0, 0, 0, 60, 0, 6]);
        buf.extend_from_slice(&[3, b'w', b'w', b'w', 0xc0, 12]);
        let m = Message::decode(&buf).unwrap();
        assert_eq!(m.answers[0].name, "a.test");
        assert_eq!(m.answers[0].rdata, b"\x03www\x01a\x04test\x00");
    }

    #[test]
    fn pointer_loop_rejected() {
        let mut buf = vec![0, 1, 0x81, 0x80, 0, 1, 0, 0, 0, 0, 0, 0];
        buf.extend_from_slice(&[0xc0, 12, 0, 1, 0, 1]);
        assert!(matches!(Message::decode(&buf), Err(WireError::PointerLoop(_))));
    }

    #[test]
    fn truncated_message() {
        let bytes = Message::query(1, "example.com", 1, false).encode().unwrap();
        assert!(Message::decode(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn escaped_names() {
        let mut out = Vec::new();
        encode_name("a\\.b.c.", &mut out).unwrap();
        assert_eq!(out, b"\x03a.b\x01c\x00");
        let mut pos = 0;
        assert_eq!(read_name(&out, &mut pos).unwrap(), "a\\.b.c");
        assert!(names_equal("A.Test.", "a.test"));
    }
}
