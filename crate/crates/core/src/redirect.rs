//! Port reachability and redirect-chain resolution.

use std::collections::BTreeSet;
use std::io;
use std::net::SocketAddr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::clock::Timestamp;
use crate::encoding::{duration_ms, Fingerprint};
use crate::http::{challenge_markers, fetch, find_meta_refresh, has_script, HttpConfig, HttpResponse, MAX_BODY};
use crate::net::NetContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PortState {
    Open,
    Closed,
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortStatus {
    pub host: String,
    pub port_80: PortState,
    pub port_443: PortState,
    pub probed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RedirectError {
    /// Reachability was asked for a name that does not resolve; DNS
    /// collection must run first.
    #[error("{0} does not resolve; collect DNS before probing ports")]
    Unresolved(String),
    #[error("redirect limit must be at least 1")]
    ZeroLimit,
    #[error("invalid origin URL {0}")]
    BadOrigin(String),
}

fn probe_port(net: &NetContext, addrs: &[std::net::IpAddr], port: u16, timeout: Duration) -> PortState {
    let mut refused = false;
    for ip in addrs {
        match net.dialer.connect(SocketAddr::new(*ip, port), timeout) {
            Ok(_) => return PortState::Open,
            Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => refused = true,
            Err(_) => {}
        }
    }
    if refused {
        PortState::Closed
    } else {
        PortState::Filtered
    }
}

/// TCP connect to ports 80 and 443. A port that accepts is open even if
/// it speaks something else.
pub fn probe_ports(net: &NetContext, host: &str, timeout: Duration) -> Result<PortStatus, RedirectError> {
    let addrs = net
        .lookup(host)
        .map_err(|_| RedirectError::Unresolved(host.to_string()))?;
    let probed_at = net.clock.now();
    Ok(PortStatus {
        host: host.to_string(),
        port_80: probe_port(net, &addrs, 80, timeout),
        port_443: probe_port(net, &addrs, 443, timeout),
        probed_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Mechanism {
    HttpStatus {
        code: u16,
    },
    HtmlMeta,
    /// A client-manufactured 307 upgrade for a host known to send HSTS.
    SyntheticHsts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedirectStep {
    pub url: String,
    /// How the previous URL led here.
    pub mechanism: Mechanism,
    pub tls_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cert_fingerprint: Option<Fingerprint>,
    /// Response status at this URL, when it was fetched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terminal {
    pub url: String,
    pub status: u16,
    #[serde(default)]
    pub body_length: usize,
    /// Bot-challenge markers found in the body.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub challenge_markers: Vec<String>,
}

impl Terminal {
    fn from_response(url: &str, resp: &HttpResponse) -> Self {
        Terminal {
            url: url.to_string(),
            status: resp.status,
            body_length: resp.body.len(),
            challenge_markers: challenge_markers(&resp.body_text()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Termination {
    Completed,
    LoopDetected,
    LimitExceeded,
    Error { class: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedirectChain {
    pub origin: String,
    pub origin_tls_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_cert_fingerprint: Option<Fingerprint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_status: Option<u16>,
    pub steps: Vec<RedirectStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<Terminal>,
    pub termination: Termination,
    /// The terminal body carried script that was not executed.
    #[serde(default)]
    pub terminal_script_unexecuted: bool,
}

fn default_limit() -> u32 {
    10
}

fn yes() -> bool {
    true
}

fn default_timeout() -> Duration {
    Duration::from_secs(10)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedirectConfig {
    #[serde(default = "default_limit")]
    pub limit: u32,
    #[serde(default = "yes")]
    pub follow_html: bool,
    /// Emulate a browser's HSTS upgrade of http:// URLs on hosts that sent
    /// Strict-Transport-Security earlier in the chain.
    #[serde(default)]
    pub emulate_hsts: bool,
    #[serde(with = "duration_ms", default = "default_timeout")]
    pub timeout: Duration,
}

impl Default for RedirectConfig {
    fn default() -> Self {
        RedirectConfig {
            limit: default_limit(),
            follow_html: true,
            emulate_hsts: false,
            timeout: default_timeout(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStats {
    pub length: usize,
    pub unique_certs: usize,
    pub unique_hosts: usize,
}

fn host_of(u: &str) -> Option<String> {
    Url::parse(u)
        .ok()
        .and_then(|u| u.host_str().map(|h| h.to_ascii_lowercase()))
}

/// Length excludes synthetic HSTS hops; certificates and hosts are counted
/// over the origin and every step.
pub fn chain_stats(chain: &RedirectChain) -> ChainStats {
    let length = chain
        .steps
        .iter()
        .filter(|s| s.mechanism != Mechanism::SyntheticHsts)
        .count();
    let certs: BTreeSet<Fingerprint> = chain
        .origin_cert_fingerprint
        .iter()
        .chain(chain.steps.iter().filter_map(|s| s.cert_fingerprint.as_ref()))
        .copied()
        .collect();
    let hosts: BTreeSet<String> = std::iter::once(chain.origin.as_str())
        .chain(chain.steps.iter().map(|s| s.url.as_str()))
        .filter_map(host_of)
        .collect();
    ChainStats {
        length,
        unique_certs: certs.len(),
        unique_hosts: hosts.len(),
    }
}

#[derive(Default)]
struct Hsts {
    hosts: Vec<(String, bool)>,
}

impl Hsts {
    fn record(&mut self, host: &str, header: &str) {
        let lower = header.to_ascii_lowercase();
        let max_age = lower
            .split(';')
            .filter_map(|p| p.trim().strip_prefix("max-age="))
            .find_map(|v| v.trim_matches('"').parse::<u64>().ok());
        if max_age.is_some_and(|a| a > 0) {
            self.hosts.push((host.to_string(), lower.contains("includesubdomains")));
        }
    }

    fn covers(&self, host: &str) -> bool {
        self.hosts
            .iter()
            .any(|(h, sub)| host == h || (*sub && host.ends_with(&format!(".{h}"))))
    }
}

/// Follows redirects from `origin`. Errors mid-chain end it with an
/// error termination; the partial chain is kept.
pub fn resolve_chain(net: &NetContext, origin: &str, cfg: &RedirectConfig) -> Result<RedirectChain, RedirectError> {
    if cfg.limit == 0 {
        return Err(RedirectError::ZeroLimit);
    }
    let origin_url = Url::parse(origin).map_err(|_| RedirectError::BadOrigin(origin.to_string()))?;
    if !matches!(origin_url.scheme(), "http" | "https") {
        return Err(RedirectError::BadOrigin(origin.to_string()));
    }
    let http_cfg = HttpConfig {
        timeout: cfg.timeout,
        max_body: MAX_BODY,
        ..HttpConfig::default()
    };
    let mut chain = RedirectChain {
        origin: origin_url.to_string(),
        origin_tls_used: origin_url.scheme() == "https",
        origin_cert_fingerprint: None,
        origin_status: None,
        steps: Vec::new(),
        terminal: None,
        termination: Termination::Completed,
        terminal_script_unexecuted: false,
    };
    let mut visited = vec![origin_url.to_string()];
    let mut hsts = Hsts::default();
    let mut current = origin_url;
    loop {
        let f = fetch(net, &current, &http_cfg);
        let fp = f.tls.as_ref().and_then(|t| t.leaf_fingerprint());
        let status = f.result.as_ref().ok().map(|r| r.status);
        match chain.steps.last_mut() {
            Some(step) => {
                step.cert_fingerprint = fp;
                step.status = status;
            }
            None => {
                chain.origin_cert_fingerprint = fp;
                chain.origin_status = status;
            }
        }
        let resp = match f.result {
            Ok(r) => r,
            Err(e) => {
                chain.termination = Termination::Error { class: e.class() };
                return Ok(chain);
            }
        };
        if current.scheme() == "https" {
            if let (Some(h), Some(sts)) = (current.host_str(), resp.header("strict-transport-security")) {
                hsts.record(&h.to_ascii_lowercase(), sts);
            }
        }
        let next = if resp.is_redirect() {
            match resp.header("location") {
                Some(loc) => match current.join(loc.trim()) {
                    Ok(u) => Some((u, Mechanism::HttpStatus { code: resp.status })),
                    Err(_) => {
                        chain.termination = Termination::Error {
                            class: "bad-location".into(),
                        };
                        return Ok(chain);
                    }
                },
                None => {
                    chain.termination = Termination::Error {
                        class: "redirect-without-location".into(),
                    };
                    return Ok(chain);
                }
            }
        } else if cfg.follow_html && resp.is_html() {
            find_meta_refresh(&resp.body_text())
                .and_then(|t| current.join(&t).ok())
                .map(|u| (u, Mechanism::HtmlMeta))
        } else {
            None
        };
        let Some((mut next_url, mechanism)) = next else {
            chain.terminal = Some(Terminal::from_response(current.as_str(), &resp));
            chain.terminal_script_unexecuted = resp.is_html() && has_script(&resp.body_text());
            chain.termination = Termination::Completed;
            return Ok(chain);
        };
        let followed = chain
            .steps
            .iter()
            .filter(|s| s.mechanism != Mechanism::SyntheticHsts)
            .count();
        if followed as u32 >= cfg.limit {
            chain.terminal = Some(Terminal::from_response(current.as_str(), &resp));
            chain.termination = Termination::LimitExceeded;
            return Ok(chain);
        }
        let mut pending = vec![(next_url.clone(), mechanism)];
        if cfg.emulate_hsts && next_url.scheme() == "http" {
            if let Some(h) = next_url.host_str().map(str::to_ascii_lowercase) {
                if hsts.covers(&h) {
                    let mut upgraded = next_url.clone();
                    let default_port = upgraded.port().is_none();
                    if upgraded.set_scheme("https").is_ok() {
                        if !default_port && upgraded.port() == Some(80) {
                            let _ = upgraded.set_port(None);
                        }
                        pending.push((upgraded.clone(), Mechanism::SyntheticHsts));
                        next_url = upgraded;
                    }
                }
            }
        }
        for (u, m) in pending {
            let key = u.to_string();
            let tls_used = u.scheme() == "https";
            if let Some(prev) = visited.iter().position(|v| v == &key) {
                // Revisit: carry what was observed at the first visit.
                let (fp, status) = if prev == 0 {
                    (chain.origin_cert_fingerprint, chain.origin_status)
                } else {
                    let s = &chain.steps[prev - 1];
                    (s.cert_fingerprint, s.status)
                };
                chain.steps.push(RedirectStep {
                    url: key,
                    mechanism: m,
                    tls_used,
                    cert_fingerprint: fp,
                    status,
                });
                chain.terminal = Some(Terminal::from_response(current.as_str(), &resp));
                chain.termination = Termination::LoopDetected;
                return Ok(chain);
            }
            visited.push(key.clone());
            chain.steps.push(RedirectStep {
                url: key,
                mechanism: m,
                tls_used,
                cert_fingerprint: None,
                status: None,
            });
        }
        current = next_url;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(b: u8) -> Option<Fingerprint> {
        Some(Fingerprint([b; 32]))
    }

    fn step(url: &str, mechanism: Mechanism, cert: Option<Fingerprint>) -> RedirectStep {
        RedirectStep {
            url: url.into(),
            mechanism,
            tls_used: cert.is_some(),
            cert_fingerprint: cert,
            status: Some(200),
        }
    }

    fn chain(origin_cert: Option<Fingerprint>, steps: Vec<RedirectStep>) -> RedirectChain {
        RedirectChain {
            origin: "https://a.test/".into(),
            origin_tls_used: origin_cert.is_some(),
            origin_cert_fingerprint: origin_cert,
            origin_status: Some(200),
            steps,
            terminal: None,
            termination: Termination::Completed,
            terminal_script_unexecuted: false,
        }
    }

    #[test]
    fn zero_step_chain() {
        let s = chain_stats(&chain(fp(1), vec![]));
        assert_eq!((s.length, s.unique_certs, s.unique_hosts), (0, 1, 1));
    }

    #[test]
    fn synthetic_hops_do_not_count_toward_length() {
        let c = chain(
            None,
            vec![
                step("http://b.test/", Mechanism::HttpStatus { code: 301 }, None),
                step("https://b.test/", Mechanism::SyntheticHsts, fp(2)),
            ],
        );
        let s = chain_stats(&c);
        assert_eq!((s.length, s.unique_certs, s.unique_hosts), (1, 1, 2));
    }

    #[test]
    fn hsts_coverage() {
        let mut h = Hsts::default();
        h.record("a.test", "max-age=31536000; includeSubDomains");
        h.record("b.test", "max-age=0");
        assert!(h.covers("a.test") && h.covers("www.a.test"));
        assert!(!h.covers("b.test"));
    }
}
