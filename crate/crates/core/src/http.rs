//! Minimal HTTP/1.1 GET client over plain TCP or the probe TLS client.

use std::io::{self, Read, Write};
use std::net::{IpAddr, TcpStream};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::encoding::Fingerprint;
use crate::net::NetContext;
use crate::tls::client::establish;
use crate::tls::{Outcome, ProbeConfig};

/// Bodies are read up to this many bytes.
pub const MAX_BODY: usize = 512 * 1024;
const MAX_HEAD: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    #[serde(skip)]
    pub body: Vec<u8>,
    pub body_truncated: bool,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn is_redirect(&self) -> bool {
        (300..400).contains(&self.status)
    }

    pub fn is_html(&self) -> bool {
        self.header("content-type")
            .is_some_and(|c| c.to_ascii_lowercase().starts_with("text/html"))
    }

    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

/// TLS details of an HTTPS fetch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsStep {
    pub outcome: Outcome,
    pub chain: Vec<Vec<u8>>,
}

impl TlsStep {
    /// Leaf fingerprint, only when the handshake completed.
    pub fn leaf_fingerprint(&self) -> Option<Fingerprint> {
        match self.outcome {
            Outcome::Established => self.chain.first().map(|c| Fingerprint::of(c)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    #[error("unsupported URL: {0}")]
    BadUrl(String),
    #[error("resolution failed: {0}")]
    Resolve(String),
    #[error("connect: {0}")]
    Connect(String),
    #[error("timed out")]
    Timeout,
    #[error("tls: {0:?}")]
    Tls(Outcome),
    #[error("http: {0}")]
    Http(String),
}

impl FetchError {
    /// Short class label used in termination records.
    pub fn class(&self) -> String {
        match self {
            FetchError::BadUrl(_) => "bad-url".into(),
            FetchError::Resolve(_) => "dns".into(),
            FetchError::Connect(k) => k.clone(),
            FetchError::Timeout => "timeout".into(),
            FetchError::Tls(Outcome::Alert { code }) => format!("tls-alert-{code}"),
            FetchError::Tls(Outcome::Timeout) => "timeout".into(),
            FetchError::Tls(Outcome::ProtocolError { class }) => format!("tls-{class}"),
            FetchError::Tls(Outcome::Established) => "tls".into(),
            FetchError::Http(_) => "http-malformed".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fetch {
    pub url: Url,
    pub address: Option<IpAddr>,
    pub tls: Option<TlsStep>,
    pub result: Result<HttpResponse, FetchError>,
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub timeout: Duration,
    pub user_agent: String,
    pub max_body: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            timeout: Duration::from_secs(10),
            user_agent: concat!("pkiscope/", env!("CARGO_PKG_VERSION")).to_string(),
            max_body: MAX_BODY,
        }
    }
}

fn request_bytes(url: &Url, host: &str, cfg: &HttpConfig) -> Vec<u8> {
    let mut path = url.path().to_string();
    if let Some(q) = url.query() {
        path.push('?');
        path.push_str(q);
    }
    let host_header = match url.port() {
        Some(p) => format!("{host}:{p}"),
        None => host.to_string(),
    };
    format!(
        "GET {path} HTTP/1.1\r\nHost: {host_header}\r\nUser-Agent: {}\r\nAccept: */*\r\nConnection: close\r\n\r\n",
        cfg.user_agent
    )
    .into_bytes()
}

fn io_class(e: &io::Error) -> FetchError {
    match e.kind() {
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => FetchError::Timeout,
        _ => FetchError::Http(e.to_string()),
    }
}

/// Reads a whole response, stopping early once the body reaches `max_body`.
fn read_response<R: Read>(r: &mut R, max_body: usize, deadline: Instant) -> Result<HttpResponse, FetchError> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    let mut head_end = None;
    loop {
        if Instant::now() > deadline {
            return Err(FetchError::Timeout);
        }
        if head_end.is_none() {
            head_end = buf.windows(4).position(|w| w == b"\r\n\r\n").map(|p| p + 4);
            if head_end.is_none() && buf.len() > MAX_HEAD {
                return Err(FetchError::Http("header too large".into()));
            }
        }
        if let Some(h) = head_end {
            let partial = parse_response(&buf[..h], &[], max_body).map_err(FetchError::Http)?;
            let body_len = buf.len() - h;
            let enough = match partial
                .header("content-length")
                .and_then(|v| v.trim().parse::<usize>().ok())
            {
                Some(n) => body_len >= n,
                None => false,
            };
            let no_body = partial.status == 204 || partial.status == 304 || (100..200).contains(&partial.status);
            if enough || no_body || body_len > max_body + 64 * 1024 {
                break;
            }
        }
        match r.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(e) if head_end.is_some() && e.kind() != io::ErrorKind::TimedOut => break,
            Err(e) => return Err(io_class(&e)),
        }
    }
    let Some(h) = head_end else {
        return Err(FetchError::Http("incomplete response head".into()));
    };
    parse_response(&buf[..h], &buf[h..], max_body).map_err(FetchError::Http)
}

fn dechunk(raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < raw.len() {
        let Some(eol) = raw[pos..].windows(2).position(|w| w == b"\r\n") else {
            break;
        };
        let line = String::from_utf8_lossy(&raw[pos..pos + eol]);
        let Ok(size) = usize::from_str_radix(line.split(';').next().unwrap_or("").trim(), 16) else {
            break;
        };
        pos += eol + 2;
        if size == 0 {
            break;
        }
        let end = (pos + size).min(raw.len());
        out.extend_from_slice(&raw[pos..end]);
        pos = end + 2;
    }
    out
}

/// Parses a response head plus whatever body bytes arrived.
pub fn parse_response(head: &[u8], body: &[u8], max_body: usize) -> Result<HttpResponse, String> {
    let text = String::from_utf8_lossy(head);
    let mut lines = text.split("\r\n");
    let status_line = lines.next().ok_or("empty response")?;
    let mut parts = status_line.splitn(3, ' ');
    let version = parts.next().unwrap_or_default();
    if !version.starts_with("HTTP/") {
        return Err(format!("bad status line {status_line:?}"));
    }
    let status: u16 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format!("bad status line {status_line:?}"))?;
    let headers: Vec<(String, String)> = lines
        .filter(|l| !l.is_empty())
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    let mut resp = HttpResponse {
        status,
        headers,
        body: Vec::new(),
        body_truncated: false,
    };
    let mut body = if resp
        .header("transfer-encoding")
        .is_some_and(|t| t.to_ascii_lowercase().contains("chunked"))
    {
        dechunk(body)
    } else {
        body.to_vec()
    };
    if let Some(n) = resp
        .header("content-length")
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        body.truncate(n);
    }
    if body.len() > max_body {
        body.truncate(max_body);
        resp.body_truncated = true;
    }
    resp.body = body;
    Ok(resp)
}

fn meta_regexes() -> &'static (Regex, Regex) {
    static RE: OnceLock<(Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        (
            Regex::new(r#"(?is)<meta\b[^>]*http-equiv\s*=\s*["']?\s*refresh\b[^>]*>"#).expect("static regex"),
            Regex::new(r#"(?is)\bcontent\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s>]+))"#).expect("static regex"),
        )
    })
}

/// Target of the first meta-refresh tag, if any.
pub fn find_meta_refresh(html: &str) -> Option<String> {
    let (tag_re, content_re) = meta_regexes();
    for tag in tag_re.find_iter(html) {
        let Some(c) = content_re.captures(tag.as_str()) else {
            continue;
        };
        let content = c.get(1).or(c.get(2)).or(c.get(3))?.as_str();
        let after_delay = content.split_once(';').map(|(_, rest)| rest).unwrap_or("");
        let target = after_delay.trim();
        let lower = target.to_ascii_lowercase();
        let target = if lower.starts_with("url") {
            target[3..]
                .trim_start()
                .strip_prefix('=')
                .unwrap_or(&target[3..])
                .trim()
        } else {
            target
        };
        let target = target.trim_matches(|c| c == '\'' || c == '"');
        if !target.is_empty() {
            return Some(target.to_string());
        }
    }
    None
}

const CHALLENGE_MARKERS: &[&str] = &[
    "captcha",
    "cf-chl",
    "challenge-platform",
    "are you a robot",
    "automated access",
    "access denied",
    "bot detection",
    "verify you are human",
];

/// Known bot-challenge phrases present in `body`, lowercased.
pub fn challenge_markers(body: &str) -> Vec<String> {
    let lower = body.to_ascii_lowercase();
    CHALLENGE_MARKERS
        .iter()
        .filter(|m| lower.contains(*m))
        .map(|m| m.to_string())
        .collect()
}

/// Whether the body contains script that a browser would have run.
pub fn has_script(html: &str) -> bool {
    html.to_ascii_lowercase().contains("<script")
}

/// Fetches `url` with a single GET. Certificates are captured but not
/// validated.
pub fn fetch(net: &NetContext, url: &Url, cfg: &HttpConfig) -> Fetch {
    let mut out = Fetch {
        url: url.clone(),
        address: None,
        tls: None,
        result: Err(FetchError::BadUrl(url.to_string())),
    };
    let https = match url.scheme() {
        "http" => false,
        "https" => true,
        _ => return out,
    };
    let Some(host) = url
        .host_str()
        .map(|h| h.trim_start_matches('[').trim_end_matches(']').to_string())
    else {
        return out;
    };
    let port = url.port_or_known_default().unwrap_or(if https { 443 } else { 80 });
    let deadline = Instant::now() + cfg.timeout;
    let (stream, ip) = match connect(net, &host, port, cfg.timeout) {
        Ok(v) => v,
        Err(e) => {
            out.result = Err(e);
            return out;
        }
    };
    out.address = Some(ip);
    let req = request_bytes(url, url.host_str().unwrap_or(&host), cfg);
    if !https {
        let mut s = stream;
        let _ = s.set_read_timeout(Some(cfg.timeout));
        let _ = s.set_write_timeout(Some(cfg.timeout));
        out.result = s
            .write_all(&req)
            .map_err(|e| io_class(&e))
            .and_then(|_| read_response(&mut s, cfg.max_body, deadline));
        return out;
    }
    let sni = host.parse::<IpAddr>().is_err().then(|| host.clone());
    let probe = ProbeConfig {
        sni,
        alpn: Some(vec!["http/1.1".to_string()]),
        ..ProbeConfig::default()
    };
    let (captured, result) = establish(stream, &probe, &host, net.clock.now(), Some(deadline));
    match result {
        Ok(mut conn) => {
            out.tls = Some(TlsStep {
                outcome: Outcome::Established,
                chain: captured.chain,
            });
            out.result = conn
                .write_all(&req)
                .map_err(|e| io_class(&e))
                .and_then(|_| read_response(&mut conn, cfg.max_body, deadline));
            conn.close_and_drain(Instant::now());
        }
        Err(outcome) => {
            out.tls = Some(TlsStep {
                outcome: outcome.clone(),
                chain: captured.chain,
            });
            out.result = Err(FetchError::Tls(outcome));
        }
    }
    out
}

fn connect(net: &NetContext, host: &str, port: u16, timeout: Duration) -> Result<(TcpStream, IpAddr), FetchError> {
    let addrs = net.lookup(host).map_err(|e| FetchError::Resolve(e.to_string()))?;
    let mut last = FetchError::Connect("connect-failed".into());
    for ip in addrs {
        match net.dialer.connect(std::net::SocketAddr::new(ip, port), timeout) {
            Ok(s) => return Ok((s, ip)),
            Err(e) => {
                last = match e.kind() {
                    io::ErrorKind::ConnectionRefused => FetchError::Connect("connection-refused".into()),
                    io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => FetchError::Timeout,
                    _ => FetchError::Connect("connect-failed".into()),
                }
            }
        }
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_head_and_chunked_body() {
        let head = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\nContent-Type: text/html\r\n\r\n";
        let body = b"5\r\nhello\r\n6\r\n world\r\n0\r\n\r\n";
        let r = parse_response(head, body, MAX_BODY).unwrap();
        assert_eq!(r.status, 200);
        assert_eq!(r.body, b"hello world");
        assert!(r.is_html());
    }

    #[test]
    fn body_is_capped() {
        let head = b"HTTP/1.1 200 OK\r\n\r\n";
        let r = parse_response(head, &[b'x'; 100], 10).unwrap();
        assert_eq!(r.body.len(), 10);
        assert!(r.body_truncated);
    }

    #[test]
    fn meta_refresh_variants() {
        let cases = [
            (
                r#"<meta http-equiv="refresh" content="0; url=https://b.test/">"#,
                Some("https://b.test/"),
            ),
            (r#"<META HTTP-EQUIV=Refresh CONTENT="5;URL='/next'">"#, Some("/next")),
            (r#"<meta content="0;url=/x" http-equiv="refresh" />"#, Some("/x")),
            (r#"<meta http-equiv="refresh" content="30">"#, None),
            (r#"<meta name="viewport" content="width=device-width">"#, None),
        ];
        for (html, want) in cases {
            assert_eq!(find_meta_refresh(html).as_deref(), want, "{html}");
        }
    }

    #[test]
    fn error_classes() {
        assert_eq!(FetchError::Tls(Outcome::Alert { code: 40 }).class(), "tls-alert-40");
        assert_eq!(FetchError::Resolve("x".into()).class(), "dns");
    }
}
