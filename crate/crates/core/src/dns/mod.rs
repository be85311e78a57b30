//! DNS snapshot collection and CAA classification.

pub mod caa;
pub mod rdata;
pub mod wire;
pub mod zone;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream, UdpSocket};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Timestamp};
use crate::encoding::b64;

pub use caa::{encode_caa_rdata, parse_caa, parse_caa_text, parse_caa_wire, CaaInput, CaaParseStatus, CaaRecord};
pub use rdata::{format_rdata, RecordType, RrsigSummary, TlsaRecord};
pub use wire::Message;
pub use zone::{parse_zone, Lookup, Zone, ZoneError, ZoneRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionStatus {
    Resolved,
    Nxdomain,
    /// The name exists but has no address records.
    NoData,
    Timeout,
    Servfail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReachabilityClass {
    Usable,
    Unresolved,
    TransientFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordWithTtl {
    pub owner: String,
    pub ttl: u32,
    #[serde(with = "b64")]
    pub rdata: Vec<u8>,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureWindow {
    pub inception: Timestamp,
    pub expiration: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsSnapshot {
    pub target: String,
    pub resolver: String,
    pub collected_at: Timestamp,
    pub resolution_status: ResolutionStatus,
    pub records: BTreeMap<RecordType, Vec<RecordWithTtl>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rrsig_windows: Option<BTreeMap<RecordType, SignatureWindow>>,
    /// Set when some query of the burst failed; the records that did arrive
    /// are kept.
    #[serde(default)]
    pub partial: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub query_errors: BTreeMap<RecordType, String>,
    /// Owner name the CAA set was found at when climbing is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caa_owner: Option<String>,
    /// Types whose query was answered, with or without records.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub answered: BTreeSet<RecordType>,
}

impl DnsSnapshot {
    pub fn records_of(&self, t: RecordType) -> &[RecordWithTtl] {
        self.records.get(&t).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn addresses(&self) -> Vec<std::net::IpAddr> {
        let mut out = Vec::new();
        for r in self.records_of(RecordType::A) {
            if let Ok(o) = <[u8; 4]>::try_from(r.rdata.as_slice()) {
                out.push(std::net::IpAddr::from(o));
            }
        }
        for r in self.records_of(RecordType::Aaaa) {
            if let Ok(o) = <[u8; 16]>::try_from(r.rdata.as_slice()) {
                out.push(std::net::IpAddr::from(o));
            }
        }
        out
    }

    pub fn caa_records(&self) -> Vec<CaaRecord> {
        self.records_of(RecordType::Caa)
            .iter()
            .map(|r| parse_caa_wire(&r.rdata))
            .collect()
    }

    pub fn tlsa_records(&self) -> Vec<TlsaRecord> {
        self.records_of(RecordType::Tlsa)
            .iter()
            .filter_map(|r| TlsaRecord::from_rdata(&r.rdata))
            .collect()
    }
}

pub fn classify_resolution(snapshot: &DnsSnapshot) -> ReachabilityClass {
    match snapshot.resolution_status {
        ResolutionStatus::Resolved => ReachabilityClass::Usable,
        ResolutionStatus::Nxdomain | ResolutionStatus::NoData => ReachabilityClass::Unresolved,
        ResolutionStatus::Timeout | ResolutionStatus::Servfail => ReachabilityClass::TransientFailure,
    }
}

pub const DEFAULT_RESOLVER: &str = "8.8.8.8:53";

#[derive(Debug, Clone)]
pub struct DnsQueryConfig {
    pub types: BTreeSet<RecordType>,
    pub resolver: SocketAddr,
    pub timeout: Duration,
    /// Sets the DO bit and records RRSIG validity windows.
    pub dnssec: bool,
    /// Walk towards the root until a CAA set is found.
    pub caa_climb: bool,
    pub tlsa_port: u16,
}

impl DnsQueryConfig {
    pub fn new(resolver: SocketAddr) -> Self {
        DnsQueryConfig {
            types: BTreeSet::from([RecordType::A]),
            resolver,
            timeout: Duration::from_secs(5),
            dnssec: false,
            caa_climb: false,
            tlsa_port: 443,
        }
    }

    pub fn supported_types() -> BTreeSet<RecordType> {
        BTreeSet::from([
            RecordType::A,
            RecordType::Aaaa,
            RecordType::Soa,
            RecordType::Ns,
            RecordType::Tlsa,
            RecordType::Caa,
        ])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("query timed out")]
    Timeout,
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed response: {0}")]
    Malformed(#[from] wire::WireError),
    #[error("response id or question mismatch")]
    Mismatch,
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)
}

fn query_id() -> u16 {
    let mut b = [0u8; 2];
    let rng = ring::rand::SystemRandom::new();
    if ring::rand::SecureRandom::fill(&rng, &mut b).is_err() {
        return 0x5a5a;
    }
    u16::from_be_bytes(b)
}

/// One query over UDP, retried over TCP when the answer is truncated.
pub fn query(
    resolver: SocketAddr,
    name: &str,
    rtype: RecordType,
    dnssec: bool,
    timeout: Duration,
) -> Result<Message, QueryError> {
    let id = query_id();
    let q = Message::query(id, name, rtype.code(), dnssec);
    let bytes = q.encode()?;
    let bind: SocketAddr = if resolver.is_ipv4() {
        "0.0.0.0:0".parse().unwrap_or(resolver)
    } else {
        "[::]:0".parse().unwrap_or(resolver)
    };
    let sock = UdpSocket::bind(bind)?;
    sock.set_read_timeout(Some(timeout))?;
    sock.connect(resolver)?;
    sock.send(&bytes)?;
    let mut buf = vec![0u8; 65535];
    let resp = loop {
        let n = match sock.recv(&mut buf) {
            Ok(n) => n,
            Err(e) if is_timeout(&e) => return Err(QueryError::Timeout),
            Err(e) => return Err(e.into()),
        };
        let m = Message::decode(&buf[..n])?;
        // ignore stray datagrams for other ids
        if m.header.id == id && m.header.qr {
            break m;
        }
    };
    check_question(&q, &resp)?;
    if resp.header.tc {
        return query_tcp(resolver, &q, &bytes, timeout);
    }
    Ok(resp)
}

fn check_question(q: &Message, resp: &Message) -> Result<(), QueryError> {
    match (q.questions.first(), resp.questions.first()) {
        (Some(a), Some(b)) if wire::names_equal(&a.name, &b.name) && a.qtype == b.qtype => Ok(()),
        (_, None) => Ok(()),
        _ => Err(QueryError::Mismatch),
    }
}

fn query_tcp(resolver: SocketAddr, q: &Message, bytes: &[u8], timeout: Duration) -> Result<Message, QueryError> {
    let mut s = TcpStream::connect_timeout(&resolver, timeout).map_err(|e| {
        if is_timeout(&e) {
            QueryError::Timeout
        } else {
            e.into()
        }
    })?;
    s.set_read_timeout(Some(timeout))?;
    s.set_write_timeout(Some(timeout))?;
    let mut framed = (bytes.len() as u16).to_be_bytes().to_vec();
    framed.extend_from_slice(bytes);
    s.write_all(&framed)?;
    let mut len = [0u8; 2];
    let read = |s: &mut TcpStream, buf: &mut [u8]| -> Result<(), QueryError> {
        s.read_exact(buf)
            .map_err(|e| if is_timeout(&e) { QueryError::Timeout } else { e.into() })
    };
    read(&mut s, &mut len)?;
    let mut buf = vec![0u8; u16::from_be_bytes(len) as usize];
    read(&mut s, &mut buf)?;
    let m = Message::decode(&buf)?;
    if m.header.id != q.header.id {
        return Err(QueryError::Mismatch);
    }
    check_question(q, &m)?;
    Ok(m)
}

/// Outcome of one query of the burst.
enum Answer {
    Records(Message),
    Nx,
    Fail(ResolutionStatus, String),
}

fn ask(cfg: &DnsQueryConfig, name: &str, rtype: RecordType) -> Answer {
    match query(cfg.resolver, name, rtype, cfg.dnssec, cfg.timeout) {
        Ok(m) => match m.header.rcode {
            wire::RCODE_NOERROR => Answer::Records(m),
            wire::RCODE_NXDOMAIN => Answer::Nx,
            rc => Answer::Fail(ResolutionStatus::Servfail, format!("rcode {rc}")),
        },
        Err(QueryError::Timeout) => Answer::Fail(ResolutionStatus::Timeout, "timeout".into()),
        Err(e) => Answer::Fail(ResolutionStatus::Servfail, e.to_string()),
    }
}

fn to_record(rr: &wire::ResourceRecord) -> RecordWithTtl {
    let rtype = RecordType::from_code(rr.rtype);
    RecordWithTtl {
        owner: rr.name.to_ascii_lowercase(),
        ttl: rr.ttl,
        text: format_rdata(rtype, &rr.rdata),
        rdata: rr.rdata.clone(),
    }
}

pub fn tlsa_owner(target: &str, port: u16) -> String {
    format!("_{port}._tcp.{}", target.trim_end_matches('.'))
}

/// Queries every requested type for `target` in one burst. `collected_at`
/// is taken once, before the first query, and shared by all records.
pub fn collect_snapshot(target: &str, cfg: &DnsQueryConfig, clock: &dyn Clock) -> DnsSnapshot {
    let collected_at = clock.now();
    let mut snap = DnsSnapshot {
        target: target.to_string(),
        resolver: cfg.resolver.to_string(),
        collected_at,
        resolution_status: ResolutionStatus::NoData,
        records: BTreeMap::new(),
        rrsig_windows: cfg.dnssec.then(BTreeMap::new),
        partial: false,
        query_errors: BTreeMap::new(),
        caa_owner: None,
        answered: BTreeSet::new(),
    };
    let mut types: Vec<RecordType> = cfg.types.iter().copied().collect();
    if !types.contains(&RecordType::A) {
        types.insert(0, RecordType::A);
    }
    let mut address_status = None;
    for rtype in types {
        let owner = match rtype {
            RecordType::Tlsa => tlsa_owner(target, cfg.tlsa_port),
            _ => target.to_string(),
        };
        let answer = if rtype == RecordType::Caa && cfg.caa_climb {
            climb_caa(cfg, target, &mut snap)
        } else {
            ask(cfg, &owner, rtype)
        };
        let status = match answer {
            Answer::Records(m) => {
                snap.answered.insert(rtype);
                absorb(&mut snap, &m, rtype);
                if rtype == RecordType::Caa && !snap.records_of(RecordType::Caa).is_empty() && snap.caa_owner.is_none()
                {
                    snap.caa_owner = Some(owner.clone());
                }
                None
            }
            Answer::Nx => {
                snap.answered.insert(rtype);
                Some(ResolutionStatus::Nxdomain)
            }
            Answer::Fail(s, reason) => {
                snap.partial = true;
                snap.query_errors.insert(rtype, reason);
                Some(s)
            }
        };
        if rtype == RecordType::A {
            address_status = status;
        }
    }
    let has_address = snap.records.keys().any(|t| t.is_address());
    snap.resolution_status = match address_status {
        _ if has_address => ResolutionStatus::Resolved,
        Some(s) => s,
        None => ResolutionStatus::NoData,
    };
    snap
}

fn climb_caa(cfg: &DnsQueryConfig, target: &str, snap: &mut DnsSnapshot) -> Answer {
    let mut name = target.trim_end_matches('.').to_string();
    loop {
        let answer = ask(cfg, &name, RecordType::Caa);
        match &answer {
            Answer::Records(m) if m.answers.iter().any(|r| r.rtype == RecordType::Caa.code()) => {
                snap.caa_owner = Some(name);
                return answer;
            }
            Answer::Fail(..) => return answer,
            _ => {}
        }
        match name.split_once('.') {
            Some((_, parent)) if !parent.is_empty() => name = parent.to_string(),
            _ => return Answer::Records(Message::default()),
        }
    }
}

fn absorb(snap: &mut DnsSnapshot, m: &Message, rtype: RecordType) {
    for rr in &m.answers {
        let t = RecordType::from_code(rr.rtype);
        if t == rtype || t == RecordType::Cname {
            let list = snap.records.entry(t).or_default();
            let rec = to_record(rr);
            if !list.contains(&rec) {
                list.push(rec);
            }
        } else if t == RecordType::Rrsig {
            if let (Some(windows), Some(sig)) = (snap.rrsig_windows.as_mut(), RrsigSummary::from_rdata(&rr.rdata)) {
                if sig.inception < sig.expiration && sig.type_covered == rtype {
                    windows.insert(
                        sig.type_covered,
                        SignatureWindow {
                            inception: sig.inception,
                            expiration: sig.expiration,
                        },
                    );
                }
            }
        }
    }
}
