//! Scripted TLS, HTTPS and HTTP listeners.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use rustls::server::{
    Acceptor, NoServerSessionStorage, ProducesTickets, ServerSessionMemoryCache, StoresServerSessions,
};
use rustls::{HandshakeKind, ServerConfig, SupportedProtocolVersion};
use serde::{Deserialize, Serialize};

use pkiscope_core::clock::Clock;
use pkiscope_core::tls::TlsVersion;

use crate::ocsp::build_ocsp_response;
use crate::pki::MaterializedPki;
use crate::scenario::{HttpAction, ListenerKind, ListenerSpec, StaplePolicy, TicketSpec, TlsAction};

const IO_TIMEOUT: Duration = Duration::from_secs(10);

/// One served connection, as seen by the fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionRecord {
    pub listener: String,
    pub port: u16,
    pub probe_index: u64,
    pub sni: Option<String>,
    pub tls_rule: Option<usize>,
    pub http_rule: Option<usize>,
    pub action: String,
    pub resumed: Option<bool>,
    pub version: Option<String>,
    pub staple_configured: bool,
    pub path: Option<String>,
    pub host: Option<String>,
    pub error: Option<String>,
}

pub(crate) struct Shared {
    pub pki: Option<Arc<MaterializedPki>>,
    pub clock: Arc<dyn Clock>,
    pub groups: Mutex<BTreeMap<String, Arc<dyn ProducesTickets>>>,
    pub log: Mutex<Vec<ConnectionRecord>>,
    pub stop: AtomicBool,
}

pub(crate) struct ListenerState {
    pub spec: ListenerSpec,
    counter: Mutex<u64>,
    serve_counts: Mutex<BTreeMap<usize, u64>>,
    session_cache: Arc<dyn StoresServerSessions>,
    isolated_ticketer: Arc<dyn ProducesTickets>,
}

impl ListenerState {
    pub fn new(spec: ListenerSpec) -> io::Result<Self> {
        Ok(ListenerState {
            spec,
            counter: Mutex::new(0),
            serve_counts: Mutex::new(BTreeMap::new()),
            session_cache: ServerSessionMemoryCache::new(256),
            isolated_ticketer: rustls::crypto::ring::Ticketer::new().map_err(io::Error::other)?,
        })
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Ticket keys from `inner`, with the stored server name replaced by the
/// current connection's SNI on decryption so that a ticket issued under one
/// host name resumes under another.
#[derive(Debug)]
struct FixtureTicketer {
    inner: Arc<dyn ProducesTickets>,
    lifetime: u32,
    rewrite_sni: Option<Option<String>>,
}

fn rewrite_stored_sni(plain: Vec<u8>, sni: Option<&str>) -> Vec<u8> {
    let rest = match plain.first() {
        Some(1) => match plain.get(1) {
            Some(&len) if plain.len() >= 2 + len as usize => &plain[2 + len as usize..],
            _ => return plain,
        },
        Some(0) => &plain[1..],
        _ => return plain,
    };
    let mut out = Vec::with_capacity(plain.len());
    match sni {
        Some(s) if s.len() < 256 => {
            out.push(1);
            out.push(s.len() as u8);
            out.extend_from_slice(s.as_bytes());
        }
        _ => out.push(0),
    }
    out.extend_from_slice(rest);
    out
}

impl ProducesTickets for FixtureTicketer {
    fn enabled(&self) -> bool {
        true
    }

    fn lifetime(&self) -> u32 {
        self.lifetime
    }

    fn encrypt(&self, plain: &[u8]) -> Option<Vec<u8>> {
        self.inner.encrypt(plain)
    }

    fn decrypt(&self, cipher: &[u8]) -> Option<Vec<u8>> {
        let plain = self.inner.decrypt(cipher)?;
        Some(match &self.rewrite_sni {
            Some(sni) => rewrite_stored_sni(plain, sni.as_deref()),
            None => plain,
        })
    }
}

pub(crate) fn spawn_listener(shared: Arc<Shared>, state: Arc<ListenerState>, listener: TcpListener) -> JoinHandle<()> {
    thread::spawn(move || {
        for conn in listener.incoming() {
            if shared.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let (shared, state) = (shared.clone(), state.clone());
            thread::spawn(move || handle(&shared, &state, stream));
        }
    })
}

fn handle(shared: &Shared, state: &ListenerState, stream: TcpStream) {
    let _ = stream.set_read_timeout(Some(IO_TIMEOUT));
    let _ = stream.set_write_timeout(Some(IO_TIMEOUT));
    let _ = stream.set_nodelay(true);
    let index = {
        let mut c = lock(&state.counter);
        let i = *c;
        *c += 1;
        i
    };
    let mut rec = ConnectionRecord {
        listener: state.spec.alias().to_string(),
        port: state.spec.port,
        probe_index: index,
        sni: None,
        tls_rule: None,
        http_rule: None,
        action: String::new(),
        resumed: None,
        version: None,
        staple_configured: false,
        path: None,
        host: None,
        error: None,
    };
    match state.spec.kind {
        ListenerKind::Http => {
            let mut s = stream;
            http_exchange(shared, state, &mut s, index, None, &mut rec);
            let _ = s.shutdown(Shutdown::Both);
            lock(&shared.log).push(rec);
        }
        ListenerKind::Tls | ListenerKind::Https => tls_connection(shared, state, stream, index, rec),
    }
}

fn read_client_hello(stream: &mut TcpStream) -> Result<rustls::server::Accepted, String> {
    let mut acceptor = Acceptor::default();
    loop {
        match acceptor.read_tls(stream) {
            Ok(0) => return Err("closed before ClientHello".into()),
            Ok(_) => {}
            Err(e) => return Err(e.to_string()),
        }
        match acceptor.accept() {
            Ok(Some(a)) => return Ok(a),
            Ok(None) => continue,
            Err((e, mut alert)) => {
                let _ = alert.write_all(stream);
                return Err(e.to_string());
            }
        }
    }
}

fn server_config(
    shared: &Shared,
    state: &ListenerState,
    rule_index: usize,
    action: &TlsAction,
    sni: Option<&str>,
) -> Result<(ServerConfig, bool), String> {
    let TlsAction::ServeChain {
        chain,
        staple,
        ocsp,
        ticket,
        session_cache,
        versions,
    } = action
    else {
        return Err("not a serve-chain action".into());
    };
    let pki = shared.pki.as_ref().ok_or("scenario has no PKI")?;
    let certs = chain
        .iter()
        .map(|m| pki.der(m).map(CertificateDer::from).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let leaf = pki.resolve(&chain[0]).map_err(|e| e.to_string())?;
    let key = pki.key_pkcs8(&leaf.subject).ok_or("leaf key missing")?;
    let key = PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(key.to_vec()));

    let served_before = {
        let mut counts = lock(&state.serve_counts);
        let n = counts.entry(rule_index).or_insert(0);
        let before = *n;
        *n += 1;
        before
    };
    let with_staple = match staple {
        StaplePolicy::None => false,
        StaplePolicy::Always => true,
        StaplePolicy::AfterFirstRequest => served_before > 0,
    };
    let staple_der = if with_staple {
        build_ocsp_response(pki, &leaf.id, ocsp).map_err(|e| e.to_string())?
    } else {
        Vec::new()
    };

    let wanted = versions
        .clone()
        .unwrap_or_else(|| vec![TlsVersion::Tls12, TlsVersion::Tls13]);
    let proto: Vec<&'static SupportedProtocolVersion> = wanted
        .iter()
        .map(|v| match v {
            TlsVersion::Tls12 => &rustls::version::TLS12,
            TlsVersion::Tls13 => &rustls::version::TLS13,
        })
        .collect();
    let provider = Arc::new(rustls::crypto::ring::default_provider());
    let mut cfg = ServerConfig::builder_with_provider(provider)
        .with_protocol_versions(&proto)
        .map_err(|e| e.to_string())?
        .with_no_client_auth()
        .with_single_cert_with_ocsp(certs, key, staple_der)
        .map_err(|e| e.to_string())?;
    cfg.send_tls13_tickets = 1;
    cfg.session_storage = if *session_cache {
        state.session_cache.clone()
    } else {
        Arc::new(NoServerSessionStorage {})
    };
    if let Some(TicketSpec { lifetime, group }) = ticket {
        let (inner, rewrite_sni) = match group {
            Some(g) => {
                let mut groups = lock(&shared.groups);
                let t = match groups.get(g) {
                    Some(t) => t.clone(),
                    None => {
                        let t = rustls::crypto::ring::Ticketer::new().map_err(|e| e.to_string())?;
                        groups.insert(g.clone(), t.clone());
                        t
                    }
                };
                (t, Some(sni.map(str::to_string)))
            }
            None => (state.isolated_ticketer.clone(), None),
        };
        cfg.ticketer = Arc::new(FixtureTicketer {
            inner,
            lifetime: *lifetime,
            rewrite_sni,
        });
    }
    Ok((cfg, with_staple))
}

fn tls_connection(
    shared: &Shared,
    state: &ListenerState,
    mut stream: TcpStream,
    index: u64,
    mut rec: ConnectionRecord,
) {
    let finish = |rec: ConnectionRecord| lock(&shared.log).push(rec);
    let accepted = match read_client_hello(&mut stream) {
        Ok(a) => a,
        Err(e) => {
            rec.error = Some(e);
            return finish(rec);
        }
    };
    let sni = accepted.client_hello().server_name().map(str::to_string);
    rec.sni = sni.clone();
    let Some((ri, rule)) = state
        .spec
        .tls_rules
        .iter()
        .enumerate()
        .find(|(_, r)| r.when.matches(sni.as_deref(), index, None, None))
    else {
        rec.error = Some("no rule matched".into());
        return finish(rec);
    };
    rec.tls_rule = Some(ri);
    if rule.delay_ms > 0 {
        shared.clock.sleep(Duration::from_millis(rule.delay_ms));
    }
    match &rule.action {
        TlsAction::Alert { code } => {
            rec.action = format!("alert-{code}");
            let _ = stream.write_all(&[0x15, 0x03, 0x03, 0x00, 0x02, 0x02, *code]);
            let _ = stream.flush();
            finish(rec);
            linger_close(stream);
        }
        TlsAction::Stall { ms } => {
            rec.action = "stall".into();
            finish(rec);
            shared.clock.sleep(Duration::from_millis(*ms));
            let _ = stream.shutdown(Shutdown::Both);
        }
        TlsAction::Close => {
            rec.action = "close".into();
            finish(rec);
            let _ = stream.shutdown(Shutdown::Both);
        }
        action @ TlsAction::ServeChain { .. } => {
            rec.action = "serve-chain".into();
            let cfg = match server_config(shared, state, ri, action, sni.as_deref()) {
                Ok((cfg, stapled)) => {
                    rec.staple_configured = stapled;
                    cfg
                }
                Err(e) => {
                    rec.error = Some(e);
                    return finish(rec);
                }
            };
            let conn = match accepted.into_connection(Arc::new(cfg)) {
                Ok(c) => c,
                Err((e, mut alert)) => {
                    let _ = alert.write_all(&mut stream);
                    rec.error = Some(e.to_string());
                    finish(rec);
                    return linger_close(stream);
                }
            };
            let mut tls = rustls::StreamOwned::new(conn, stream);
            while tls.conn.is_handshaking() {
                if let Err(e) = tls.conn.complete_io(&mut tls.sock) {
                    rec.error = Some(e.to_string());
                    finish(rec);
                    return linger_close(tls.sock);
                }
            }
            while tls.conn.wants_write() {
                if tls.conn.write_tls(&mut tls.sock).is_err() {
                    break;
                }
            }
            rec.resumed = Some(tls.conn.handshake_kind() == Some(HandshakeKind::Resumed));
            rec.version = tls.conn.protocol_version().map(|v| match v {
                rustls::ProtocolVersion::TLSv1_3 => "1.3".to_string(),
                rustls::ProtocolVersion::TLSv1_2 => "1.2".to_string(),
                other => format!("{other:?}"),
            });
            if state.spec.kind == ListenerKind::Https {
                http_exchange(shared, state, &mut tls, index, sni.as_deref(), &mut rec);
                finish(rec);
            } else {
                finish(rec);
                let mut buf = [0u8; 4096];
                loop {
                    match tls.read(&mut buf) {
                        Ok(0) | Err(_) => break,
                        Ok(_) => {}
                    }
                }
            }
            tls.conn.send_close_notify();
            while tls.conn.wants_write() {
                if tls.conn.write_tls(&mut tls.sock).is_err() {
                    break;
                }
            }
            let _ = tls.sock.shutdown(Shutdown::Write);
        }
    }
}

/// Half-closes and drains briefly so the peer reads what was written
/// instead of a reset.
fn linger_close(mut stream: TcpStream) {
    let _ = stream.shutdown(Shutdown::Write);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(500)));
    let mut buf = [0u8; 1024];
    while matches!(stream.read(&mut buf), Ok(n) if n > 0) {}
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        301 => "Moved Permanently",
        302 => "Found",
        303 => "See Other",
        307 => "Temporary Redirect",
        308 => "Permanent Redirect",
        403 => "Forbidden",
        404 => "Not Found",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    }
}

fn strip_port(host: &str) -> &str {
    if let Some(rest) = host.strip_prefix('[') {
        return rest.split(']').next().unwrap_or(rest);
    }
    host.split(':').next().unwrap_or(host)
}

fn read_request_head<S: Read>(s: &mut S) -> Option<String> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    while !buf.windows(4).any(|w| w == b"\r\n\r\n") {
        match s.read(&mut chunk) {
            Ok(0) | Err(_) => return None,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
        }
        if buf.len() > 64 * 1024 {
            return None;
        }
    }
    Some(String::from_utf8_lossy(&buf).into_owned())
}

fn http_exchange<S: Read + Write>(
    shared: &Shared,
    state: &ListenerState,
    s: &mut S,
    index: u64,
    sni: Option<&str>,
    rec: &mut ConnectionRecord,
) {
    let Some(head) = read_request_head(s) else {
        rec.error = Some("no request".into());
        return;
    };
    let mut lines = head.split("\r\n");
    let path = lines
        .next()
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap_or("/")
        .to_string();
    let host = lines
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| k.trim().eq_ignore_ascii_case("host"))
        .map(|(_, v)| strip_port(v.trim()).to_string());
    rec.path = Some(path.clone());
    rec.host = host.clone();
    let Some((ri, rule)) = state
        .spec
        .http_rules
        .iter()
        .enumerate()
        .find(|(_, r)| r.when.matches(sni, index, Some(&path), host.as_deref()))
    else {
        rec.error = Some("no rule matched".into());
        return;
    };
    rec.http_rule = Some(ri);
    if rule.delay_ms > 0 {
        shared.clock.sleep(Duration::from_millis(rule.delay_ms));
    }
    let response = match &rule.action {
        HttpAction::Redirect {
            status,
            location,
            headers,
        } => {
            rec.action = format!("redirect-{status}");
            let location = location.replace("{n}", &(index + 1).to_string());
            let mut r = format!("HTTP/1.1 {status} {}\r\nLocation: {location}\r\n", reason(*status));
            for (k, v) in headers {
                r.push_str(&format!("{k}: {v}\r\n"));
            }
            r.push_str("Content-Length: 0\r\nConnection: close\r\n\r\n");
            r
        }
        HttpAction::MetaRedirect { location } => {
            rec.action = "meta-redirect".into();
            let body = format!(
                "<!DOCTYPE html>\n<html><head><meta http-equiv=\"refresh\" content=\"0; url={location}\"></head><body>Moved</body></html>\n"
            );
            format!(
                "HTTP/1.1 200 OK\r\nContent-Type: text/html; charset=utf-8\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
        }
        HttpAction::Respond {
            status,
            body,
            content_type,
            headers,
        } => {
            rec.action = format!("respond-{status}");
            let mut r = format!(
                "HTTP/1.1 {status} {}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\n",
                reason(*status),
                body.len()
            );
            for (k, v) in headers {
                r.push_str(&format!("{k}: {v}\r\n"));
            }
            r.push_str("Connection: close\r\n\r\n");
            r.push_str(body);
            r
        }
        HttpAction::Stall { ms } => {
            rec.action = "stall".into();
            shared.clock.sleep(Duration::from_millis(*ms));
            return;
        }
        HttpAction::Close => {
            rec.action = "close".into();
            return;
        }
    };
    let _ = s.write_all(response.as_bytes());
    let _ = s.flush();
}

pub(crate) fn bind_local() -> io::Result<(TcpListener, SocketAddr)> {
    let l = TcpListener::bind("127.0.0.1:0")?;
    let a = l.local_addr()?;
    Ok((l, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewrites_sni_prefix() {
        let plain = [&[1u8, 3][..], b"a.x", &[9, 9]].concat();
        assert_eq!(
            rewrite_stored_sni(plain.clone(), Some("bb.x")),
            [&[1u8, 4][..], b"bb.x", &[9, 9]].concat()
        );
        assert_eq!(rewrite_stored_sni(plain, None), vec![0, 9, 9]);
        assert_eq!(rewrite_stored_sni(vec![0, 7], Some("c")), vec![1, 1, b'c', 7]);
    }
}
