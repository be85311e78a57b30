//! In-process authoritative DNS responder over UDP and TCP.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::{DateTime, TimeDelta, Utc};

use pkiscope_core::dns::rdata::RecordType;
use pkiscope_core::dns::wire::{self, Message, ResourceRecord};
use pkiscope_core::dns::zone::{Lookup, Zone};

use crate::scenario::{DnsBehavior, DnsFixture};

pub(crate) struct DnsData {
    pub zone: Zone,
    pub fixture: DnsFixture,
    pub now: DateTime<Utc>,
}

fn override_for(data: &DnsData, name: &str) -> Option<DnsBehavior> {
    let name = name.trim_end_matches('.');
    data.fixture
        .overrides
        .iter()
        .find(|o| o.name.trim_end_matches('.').eq_ignore_ascii_case(name))
        .map(|o| o.behavior)
}

fn rrsig(owner: &str, covered: u16, ttl: u32, signer: &str, window: (DateTime<Utc>, DateTime<Utc>)) -> ResourceRecord {
    let mut rdata = Vec::new();
    rdata.extend_from_slice(&covered.to_be_bytes());
    rdata.push(15);
    rdata.push(owner.trim_end_matches('.').split('.').count() as u8);
    rdata.extend_from_slice(&ttl.to_be_bytes());
    rdata.extend_from_slice(&(window.1.timestamp() as u32).to_be_bytes());
    rdata.extend_from_slice(&(window.0.timestamp() as u32).to_be_bytes());
    rdata.extend_from_slice(&0u16.to_be_bytes());
    let _ = wire::encode_name(signer, &mut rdata);
    rdata.extend_from_slice(&[0u8; 64]);
    ResourceRecord {
        name: owner.to_string(),
        rtype: RecordType::Rrsig.code(),
        class: wire::CLASS_IN,
        ttl,
        rdata,
    }
}

/// Builds the reply to `query`; `None` means stay silent.
pub(crate) fn answer(data: &DnsData, query: &Message, udp: bool) -> Option<Message> {
    let q = query.questions.first()?;
    let mut resp = Message {
        header: wire::Header {
            id: query.header.id,
            qr: true,
            aa: true,
            rd: query.header.rd,
            ra: true,
            ..Default::default()
        },
        questions: query.questions.clone(),
        ..Default::default()
    };
    if let Some(opt) = query.additional.iter().find(|r| r.rtype == wire::TYPE_OPT) {
        resp.additional.push(ResourceRecord {
            name: String::new(),
            rtype: wire::TYPE_OPT,
            class: 1232,
            ttl: opt.ttl & 0x8000,
            rdata: Vec::new(),
        });
    }
    match override_for(data, &q.name) {
        Some(DnsBehavior::Drop) => return None,
        Some(DnsBehavior::Servfail) => {
            resp.header.rcode = wire::RCODE_SERVFAIL;
            return Some(resp);
        }
        Some(DnsBehavior::Refused) => {
            resp.header.rcode = wire::RCODE_REFUSED;
            return Some(resp);
        }
        Some(DnsBehavior::Truncate) if udp => {
            resp.header.tc = true;
            return Some(resp);
        }
        _ => {}
    }
    let rtype = RecordType::from_code(q.qtype);
    match data.zone.lookup(&q.name, rtype) {
        Lookup::NxDomain => resp.header.rcode = wire::RCODE_NXDOMAIN,
        Lookup::NoData => {}
        Lookup::Answer(records) => {
            let mut sets: Vec<(String, u16, u32)> = Vec::new();
            for r in records {
                let name = if r.owner.eq_ignore_ascii_case(q.name.trim_end_matches('.')) {
                    q.name.trim_end_matches('.').to_string()
                } else {
                    r.owner.clone()
                };
                if !sets.iter().any(|(o, t, _)| o == &name && *t == r.rtype.code()) {
                    sets.push((name.clone(), r.rtype.code(), r.ttl));
                }
                resp.answers.push(ResourceRecord {
                    name,
                    rtype: r.rtype.code(),
                    class: wire::CLASS_IN,
                    ttl: r.ttl,
                    rdata: r.rdata.clone(),
                });
            }
            if let (true, Some((from, to))) = (query.dnssec_ok(), data.fixture.rrsig_window_days) {
                let window = (data.now + TimeDelta::days(from), data.now + TimeDelta::days(to));
                for (owner, t, ttl) in sets {
                    resp.answers.push(rrsig(&owner, t, ttl, &data.fixture.origin, window));
                }
            }
        }
    }
    Some(resp)
}

pub(crate) struct DnsServer {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

fn bind_pair() -> std::io::Result<(UdpSocket, TcpListener)> {
    let mut last = None;
    for _ in 0..20 {
        let udp = UdpSocket::bind("127.0.0.1:0")?;
        match TcpListener::bind(udp.local_addr()?) {
            Ok(tcp) => return Ok((udp, tcp)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| std::io::Error::other("no port pair")))
}

fn serve_tcp(data: &DnsData, mut s: TcpStream) {
    let _ = s.set_read_timeout(Some(Duration::from_secs(5)));
    let mut len = [0u8; 2];
    while s.read_exact(&mut len).is_ok() {
        let mut buf = vec![0u8; u16::from_be_bytes(len) as usize];
        if s.read_exact(&mut buf).is_err() {
            return;
        }
        let Ok(q) = Message::decode(&buf) else { return };
        let Some(resp) = answer(data, &q, false) else { return };
        let Ok(bytes) = resp.encode() else { return };
        let mut framed = (bytes.len() as u16).to_be_bytes().to_vec();
        framed.extend_from_slice(&bytes);
        if s.write_all(&framed).is_err() {
            return;
        }
    }
}

impl DnsServer {
    pub fn start(data: DnsData) -> std::io::Result<Self> {
        let data = Arc::new(data);
        let (udp, tcp) = bind_pair()?;
        let addr = udp.local_addr()?;
        udp.set_read_timeout(Some(Duration::from_millis(100)))?;
        let stop = Arc::new(AtomicBool::new(false));
        let mut handles = Vec::new();
        {
            let (data, stop) = (data.clone(), stop.clone());
            handles.push(thread::spawn(move || {
                let mut buf = vec![0u8; 4096];
                while !stop.load(Ordering::SeqCst) {
                    let Ok((n, peer)) = udp.recv_from(&mut buf) else {
                        continue;
                    };
                    let Ok(q) = Message::decode(&buf[..n]) else { continue };
                    if let Some(bytes) = answer(&data, &q, true).and_then(|r| r.encode().ok()) {
                        let _ = udp.send_to(&bytes, peer);
                    }
                }
            }));
        }
        {
            let (data, stop) = (data.clone(), stop.clone());
            handles.push(thread::spawn(move || {
                for conn in tcp.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    if let Ok(s) = conn {
                        let data = data.clone();
                        thread::spawn(move || serve_tcp(&data, s));
                    }
                }
            }));
        }
        Ok(DnsServer { addr, stop, handles })
    }
}

impl Drop for DnsServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}
