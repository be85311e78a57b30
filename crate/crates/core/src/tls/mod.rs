//! Configurable TLS 1.2/1.3 probing and stateful probe plans.

pub mod client;
pub mod codec;
pub mod crypto;
mod plan;
pub mod record;

use std::collections::BTreeSet;
use std::fmt;
use std::net::{IpAddr, SocketAddr};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::encoding::{b64, b64_vec};
use crate::net::NetContext;

pub use client::{establish, Established, TlsConnection};
pub use plan::{run_stateful_plan, PlanError, PlanMode, PlanRun, StatefulPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TlsVersion {
    Tls12,
    Tls13,
}

impl TlsVersion {
    pub fn wire(self) -> u16 {
        match self {
            TlsVersion::Tls12 => codec::VERSION_TLS12,
            TlsVersion::Tls13 => codec::VERSION_TLS13,
        }
    }

    pub fn from_wire(v: u16) -> Option<Self> {
        match v {
            codec::VERSION_TLS12 => Some(TlsVersion::Tls12),
            codec::VERSION_TLS13 => Some(TlsVersion::Tls13),
            _ => None,
        }
    }
}

impl fmt::Display for TlsVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TlsVersion::Tls12 => "1.2",
            TlsVersion::Tls13 => "1.3",
        })
    }
}

impl FromStr for TlsVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "1.2" => Ok(TlsVersion::Tls12),
            "1.3" => Ok(TlsVersion::Tls13),
            other => Err(format!("unsupported TLS version {other:?}")),
        }
    }
}

impl Serialize for TlsVersion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TlsVersion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "policy", content = "suites")]
pub enum CipherPolicy {
    #[default]
    Default,
    LegacyInclusive,
    NamedList(Vec<u16>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionKind {
    SessionId,
    Ticket,
}

/// Resumable session state. `secret` is the TLS 1.2 master secret or the
/// TLS 1.3 resumption PSK.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub kind: SessionKind,
    #[serde(with = "b64")]
    pub opaque_state: Vec<u8>,
    pub issued_at: Timestamp,
    pub lifetime_hint: u32,
    pub origin_host: String,
    pub version: TlsVersion,
    pub cipher_suite: u16,
    #[serde(with = "b64")]
    pub secret: Vec<u8>,
    #[serde(default)]
    pub age_add: u32,
    #[serde(default)]
    pub extended_master_secret: bool,
}

impl SessionState {
    /// Copy with the given bit positions of `opaque_state` flipped
    /// (positions wrap around the state length).
    pub fn mutated(&self, bits: &[u32]) -> SessionState {
        let mut out = self.clone();
        let n = out.opaque_state.len() * 8;
        if n == 0 {
            return out;
        }
        for b in bits {
            let pos = *b as usize % n;
            out.opaque_state[pos / 8] ^= 0x80 >> (pos % 8);
        }
        out
    }
}

fn default_versions() -> BTreeSet<TlsVersion> {
    [TlsVersion::Tls12, TlsVersion::Tls13].into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeConfig {
    #[serde(default)]
    pub sni: Option<String>,
    #[serde(default = "default_versions")]
    pub versions_offered: BTreeSet<TlsVersion>,
    #[serde(default)]
    pub alpn: Option<Vec<String>>,
    #[serde(default)]
    pub cipher_policy: CipherPolicy,
    #[serde(default)]
    pub request_stapled_ocsp: bool,
    #[serde(default)]
    pub session_in: Option<SessionState>,
    #[serde(default)]
    pub capture_timing: bool,
    /// Bits of the presented session's opaque state to flip before sending.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mutate_session_bits: Vec<u32>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            sni: None,
            versions_offered: default_versions(),
            alpn: None,
            cipher_policy: CipherPolicy::Default,
            request_stapled_ocsp: false,
            session_in: None,
            capture_timing: false,
            mutate_session_bits: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("versions_offered is empty")]
    NoVersions,
    #[error("session_in is TLS {0} which is not offered")]
    SessionVersion(TlsVersion),
    #[error("session_in has empty opaque state")]
    EmptySession,
    #[error("named cipher list is empty")]
    NoSuites,
}

impl ProbeConfig {
    pub fn with_sni(name: &str) -> Self {
        ProbeConfig {
            sni: Some(name.to_string()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.versions_offered.is_empty() {
            return Err(ConfigError::NoVersions);
        }
        if let Some(s) = &self.session_in {
            if !self.versions_offered.contains(&s.version) {
                return Err(ConfigError::SessionVersion(s.version));
            }
            if s.opaque_state.is_empty() {
                return Err(ConfigError::EmptySession);
            }
        }
        if let CipherPolicy::NamedList(l) = &self.cipher_policy {
            if l.is_empty() {
                return Err(ConfigError::NoSuites);
            }
        }
        Ok(())
    }

    pub fn offers(&self, v: TlsVersion) -> bool {
        self.versions_offered.contains(&v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub host: String,
    pub address: IpAddr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(host: &str, address: IpAddr, port: u16) -> Self {
        Endpoint {
            host: host.to_string(),
            address,
            port,
        }
    }

    pub fn socket_addr(&self) -> SocketAddr {
        SocketAddr::new(self.address, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Outcome {
    Established,
    Alert { code: u8 },
    Timeout,
    ProtocolError { class: String },
}

impl Outcome {
    pub fn protocol(class: &str) -> Self {
        Outcome::ProtocolError {
            class: class.to_string(),
        }
    }

    pub fn is_established(&self) -> bool {
        matches!(self, Outcome::Established)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Negotiated {
    pub version: TlsVersion,
    pub cipher_suite: u16,
    /// Extension types seen from the server (ServerHello, then
    /// EncryptedExtensions), in order.
    pub extensions: Vec<u16>,
    #[serde(default)]
    pub alpn: Option<String>,
    #[serde(default)]
    pub group: Option<u16>,
    #[serde(default)]
    pub extended_master_secret: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StapledOcsp {
    #[serde(with = "b64")]
    pub raw: Vec<u8>,
    pub this_update: Option<Timestamp>,
    pub next_update: Option<Timestamp>,
}

impl StapledOcsp {
    pub fn from_raw(raw: Vec<u8>) -> Self {
        let (this_update, next_update) = match crate::x509::revocation::parse_ocsp_response(&raw) {
            Ok(r) => match r.window() {
                Some((this, next)) => (Some(this), next),
                None => (None, None),
            },
            Err(_) => (None, None),
        };
        StapledOcsp {
            raw,
            this_update,
            next_update,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsObservation {
    pub endpoint: Endpoint,
    pub config_used: ProbeConfig,
    pub started_at: Timestamp,
    pub outcome: Outcome,
    pub negotiated: Option<Negotiated>,
    #[serde(with = "b64_vec")]
    pub chain_presented: Vec<Vec<u8>>,
    pub stapled_ocsp: Option<StapledOcsp>,
    pub session_out: Option<SessionState>,
    pub resumed: bool,
    #[serde(default)]
    pub tickets_received: u32,
    #[serde(default)]
    pub handshake_ms: Option<u64>,
}

impl TlsObservation {
    pub fn leaf(&self) -> Option<&[u8]> {
        self.chain_presented.first().map(Vec::as_slice)
    }
}

/// Everything the handshake captured, whether or not it completed.
#[derive(Debug, Clone, Default)]
pub struct Captured {
    pub negotiated: Option<Negotiated>,
    pub chain: Vec<Vec<u8>>,
    pub staple: Option<Vec<u8>>,
    pub resumed: bool,
    pub sessions: Vec<SessionState>,
}

/// How long to wait for post-handshake tickets after sending close_notify.
const DRAIN_LIMIT: Duration = Duration::from_secs(2);

/// Performs one handshake, then closes the connection while collecting any
/// session tickets the server sends.
pub fn handshake(net: &NetContext, endpoint: &Endpoint, config: &ProbeConfig, timeout: Duration) -> TlsObservation {
    let started_at = net.clock.now();
    let mut obs = TlsObservation {
        endpoint: endpoint.clone(),
        config_used: config.clone(),
        started_at,
        outcome: Outcome::Established,
        negotiated: None,
        chain_presented: Vec::new(),
        stapled_ocsp: None,
        session_out: None,
        resumed: false,
        tickets_received: 0,
        handshake_ms: None,
    };
    if let Err(e) = config.validate() {
        obs.outcome = Outcome::protocol(&format!("invalid-config: {e}"));
        return obs;
    }
    let t0 = Instant::now();
    let stream = match net.dialer.connect(endpoint.socket_addr(), timeout) {
        Ok(s) => s,
        Err(e) => {
            obs.outcome = match e.kind() {
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => Outcome::Timeout,
                std::io::ErrorKind::ConnectionRefused => Outcome::protocol("connection-refused"),
                _ => Outcome::protocol("connect-failed"),
            };
            return obs;
        }
    };
    let deadline = Instant::now() + timeout;
    let (captured, result) = establish(stream, config, &endpoint.host, net.clock.now(), Some(deadline));
    let mut sessions = captured.sessions.clone();
    match result {
        Ok(mut conn) => {
            if config.capture_timing {
                obs.handshake_ms = Some(t0.elapsed().as_millis() as u64);
            }
            let drain = Instant::now() + timeout.min(DRAIN_LIMIT);
            conn.close_and_drain(drain);
            sessions.extend(conn.take_sessions());
        }
        Err(outcome) => obs.outcome = outcome,
    }
    obs.negotiated = captured.negotiated;
    obs.chain_presented = captured.chain;
    if config.request_stapled_ocsp {
        obs.stapled_ocsp = captured.staple.map(StapledOcsp::from_raw);
    }
    obs.resumed = captured.resumed && config.session_in.is_some();
    obs.tickets_received = sessions.iter().filter(|s| s.kind == SessionKind::Ticket).count() as u32;
    obs.session_out = sessions.pop();
    obs
}

/// IANA names for the suites the client knows about.
pub fn suite_name(id: u16) -> Option<&'static str> {
    Some(match id {
        0x1301 => "TLS_AES_128_GCM_SHA256",
        0x1302 => "TLS_AES_256_GCM_SHA384",
        0x1303 => "TLS_CHACHA20_POLY1305_SHA256",
        0xc02b => "TLS_ECDHE_ECDSA_WITH_AES_128_GCM_SHA256",
        0xc02f => "TLS_ECDHE_RSA_WITH_AES_128_GCM_SHA256",
        0xc02c => "TLS_ECDHE_ECDSA_WITH_AES_256_GCM_SHA384",
        0xc030 => "TLS_ECDHE_RSA_WITH_AES_256_GCM_SHA384",
        0xcca9 => "TLS_ECDHE_ECDSA_WITH_CHACHA20_POLY1305_SHA256",
        0xcca8 => "TLS_ECDHE_RSA_WITH_CHACHA20_POLY1305_SHA256",
        0xc013 => "TLS_ECDHE_RSA_WITH_AES_128_CBC_SHA",
        0xc014 => "TLS_ECDHE_RSA_WITH_AES_256_CBC_SHA",
        0xc009 => "TLS_ECDHE_ECDSA_WITH_AES_128_CBC_SHA",
        0xc00a => "TLS_ECDHE_ECDSA_WITH_AES_256_CBC_SHA",
        0x009c => "TLS_RSA_WITH_AES_128_GCM_SHA256",
        0x009d => "TLS_RSA_WITH_AES_256_GCM_SHA384",
        0x002f => "TLS_RSA_WITH_AES_128_CBC_SHA",
        0x0035 => "TLS_RSA_WITH_AES_256_CBC_SHA",
        0x000a => "TLS_RSA_WITH_3DES_EDE_CBC_SHA",
        0x0005 => "TLS_RSA_WITH_RC4_128_SHA",
        0x0004 => "TLS_RSA_WITH_RC4_128_MD5",
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ProbeConfig::default();
        assert!(c.validate().is_ok());
        c.versions_offered.clear();
        assert_eq!(c.validate(), Err(ConfigError::NoVersions));
    }

    #[test]
    fn config_json_round_trip() {
        let c = ProbeConfig {
            sni: Some("a.test".into()),
            cipher_policy: CipherPolicy::NamedList(vec![0x1301]),
            ..Default::default()
        };
        let j = serde_json::to_string(&c).unwrap();
        assert!(j.contains("\"1.3\""));
        let back: ProbeConfig = serde_json::from_str(&j).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn mutation_flips_exact_bits() {
        let s = SessionState {
            kind: SessionKind::Ticket,
            opaque_state: vec![0; 4],
            issued_at: chrono::Utc::now(),
            lifetime_hint: 0,
            origin_host: "a".into(),
            version: TlsVersion::Tls13,
            cipher_suite: 0x1301,
            secret: vec![1],
            age_add: 0,
            extended_master_secret: false,
        };
        let m = s.mutated(&[0, 9, 33]);
        assert_eq!(m.opaque_state, vec![0x80 | 0x40, 0x40, 0, 0]);
        assert_eq!(m.mutated(&[0, 9, 33]).opaque_state, s.opaque_state);
    }
}
