//! Scenario documents: listeners, scripted rules and DNS content.

use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pkiscope_core::tls::TlsVersion;

use crate::ocsp::OcspSpec;
use crate::pki::{MaterializedPki, PkiSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureScenario {
    pub scenario_id: String,
    /// PKI the scenario is written against, when it carries its own.
    #[serde(default)]
    pub pki: Option<PkiSpec>,
    pub listeners: Vec<ListenerSpec>,
    #[serde(default)]
    pub dns: DnsFixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ListenerKind {
    Tls,
    Https,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListenerSpec {
    /// Host names served; the first one is the listener's alias. Listeners
    /// sharing a first host share a logical address.
    pub hosts: Vec<String>,
    pub port: u16,
    pub kind: ListenerKind,
    #[serde(default)]
    pub address: Option<IpAddr>,
    #[serde(default)]
    pub tls_rules: Vec<TlsRule>,
    #[serde(default)]
    pub http_rules: Vec<HttpRule>,
}

impl ListenerSpec {
    pub fn alias(&self) -> &str {
        self.hosts.first().map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SniMatch {
    Present,
    Absent,
    Equals(String),
}

/// Inclusive bounds on the listener's zero-based connection counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct IndexRange {
    #[serde(default)]
    pub min: Option<u64>,
    #[serde(default)]
    pub max: Option<u64>,
}

impl IndexRange {
    pub fn contains(&self, i: u64) -> bool {
        self.min.is_none_or(|m| i >= m) && self.max.is_none_or(|m| i <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RuleMatch {
    #[serde(default)]
    pub sni: Option<SniMatch>,
    #[serde(default)]
    pub probe_index: Option<IndexRange>,
    /// HTTP request path, exact.
    #[serde(default)]
    pub path: Option<String>,
    /// HTTP Host header (port stripped), case-insensitive.
    #[serde(default)]
    pub host: Option<String>,
}

impl RuleMatch {
    pub fn is_catch_all(&self) -> bool {
        self == &RuleMatch::default()
    }

    pub fn matches(&self, sni: Option<&str>, index: u64, path: Option<&str>, host: Option<&str>) -> bool {
        let sni_ok = match &self.sni {
            None => true,
            Some(SniMatch::Present) => sni.is_some(),
            Some(SniMatch::Absent) => sni.is_none(),
            Some(SniMatch::Equals(n)) => sni.is_some_and(|s| s.eq_ignore_ascii_case(n)),
        };
        sni_ok
            && self.probe_index.is_none_or(|r| r.contains(index))
            && self.path.as_deref().is_none_or(|p| path == Some(p))
            && self
                .host
                .as_deref()
                .is_none_or(|h| host.is_some_and(|x| x.eq_ignore_ascii_case(h)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StaplePolicy {
    #[default]
    None,
    Always,
    /// No staple on the first handshake served by the rule, a staple on
    /// every later one.
    AfterFirstRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketSpec {
    pub lifetime: u32,
    /// Listeners naming the same group share ticket keys.
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "action")]
pub enum TlsAction {
    ServeChain {
        /// Certificate ids or node names, leaf first.
        chain: Vec<String>,
        #[serde(default)]
        staple: StaplePolicy,
        #[serde(default)]
        ocsp: OcspSpec,
        #[serde(default)]
        ticket: Option<TicketSpec>,
        /// Keep a session-id cache for this listener.
        #[serde(default)]
        session_cache: bool,
        #[serde(default)]
        versions: Option<Vec<TlsVersion>>,
    },
    Alert {
        code: u8,
    },
    /// Accept, read the ClientHello, then hold the connection silently.
    Stall {
        ms: u64,
    },
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsRule {
    #[serde(default, rename = "match")]
    pub when: RuleMatch,
    /// Delay before acting, taken from the scenario clock.
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(flatten)]
    pub action: TlsAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "action")]
pub enum HttpAction {
    Redirect {
        status: u16,
        /// `{n}` is replaced by the listener's connection count.
        location: String,
        #[serde(default)]
        headers: Vec<(String, String)>,
    },
    MetaRedirect {
        location: String,
    },
    Respond {
        status: u16,
        #[serde(default)]
        body: String,
        #[serde(default = "default_content_type")]
        content_type: String,
        #[serde(default)]
        headers: Vec<(String, String)>,
    },
    Stall {
        ms: u64,
    },
    Close,
}

fn default_content_type() -> String {
    "text/html; charset=utf-8".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpRule {
    #[serde(default, rename = "match")]
    pub when: RuleMatch,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(flatten)]
    pub action: HttpAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DnsBehavior {
    Drop,
    Servfail,
    Refused,
    /// Truncated UDP answers; the full answer is only available over TCP.
    Truncate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsOverride {
    pub name: String,
    pub behavior: DnsBehavior,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsFixture {
    /// Extra master-file content (CAA, TXT, CNAME ...).
    #[serde(default)]
    pub zone: String,
    #[serde(default = "default_origin")]
    pub origin: String,
    /// Publish A records for listener hosts.
    #[serde(default = "yes")]
    pub publish_listeners: bool,
    /// Answer DO queries with RRSIGs valid for this window (days relative
    /// to the fixture time).
    #[serde(default)]
    pub rrsig_window_days: Option<(i64, i64)>,
    #[serde(default)]
    pub overrides: Vec<DnsOverride>,
}

fn default_origin() -> String {
    "fixture.test".to_string()
}

fn yes() -> bool {
    true
}

impl Default for DnsFixture {
    fn default() -> Self {
        DnsFixture {
            zone: String::new(),
            origin: default_origin(),
            publish_listeners: true,
            rrsig_window_days: None,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("listener {0}: rule list does not end with a catch-all rule")]
    NotTotal(String),
    #[error("listener {0}: {1} rules are missing")]
    MissingRules(String, &'static str),
    #[error("listener has no host names")]
    NoHosts,
    #[error("unknown chain member {0}")]
    UnknownMember(String),
    #[error("zone: {0}")]
    Zone(String),
    #[error("startup: {0}")]
    Startup(String),
    #[error("scenario file: {0}")]
    File(String),
}

fn check_total<T>(
    alias: &str,
    rules: &[T],
    when: impl Fn(&T) -> &RuleMatch,
    what: &'static str,
) -> Result<(), ScenarioError> {
    match rules.last() {
        None => Err(ScenarioError::MissingRules(alias.to_string(), what)),
        Some(r) if when(r).is_catch_all() => Ok(()),
        Some(_) => Err(ScenarioError::NotTotal(alias.to_string())),
    }
}

impl FixtureScenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let raw = std::fs::read(path).map_err(|e| ScenarioError::File(e.to_string()))?;
        serde_json::from_slice(&raw).map_err(|e| ScenarioError::File(e.to_string()))
    }

    /// Rule lists must be total and reference only materialized members.
    pub fn validate(&self, pki: Option<&MaterializedPki>) -> Result<(), ScenarioError> {
        for l in &self.listeners {
            if l.hosts.is_empty() {
                return Err(ScenarioError::NoHosts);
            }
            if l.kind != ListenerKind::Http {
                check_total(l.alias(), &l.tls_rules, |r| &r.when, "TLS")?;
            }
            if l.kind != ListenerKind::Tls {
                check_total(l.alias(), &l.http_rules, |r| &r.when, "HTTP")?;
            }
            for r in &l.tls_rules {
                if let TlsAction::ServeChain { chain, .. } = &r.action {
                    if chain.is_empty() {
                        return Err(ScenarioError::UnknownMember("<empty chain>".into()));
                    }
                    for m in chain {
                        if pki.is_none_or(|p| p.resolve(m).is_err()) {
                            return Err(ScenarioError::UnknownMember(m.clone()));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_json_shape() {
        let r: TlsRule = serde_json::from_str(r#"{"match":{"sni":"absent"},"action":"alert","code":40}"#).unwrap();
        assert_eq!(r.action, TlsAction::Alert { code: 40 });
        assert_eq!(r.when.sni, Some(SniMatch::Absent));
        let r: TlsRule =
            serde_json::from_str(r#"{"action":"serve-chain","chain":["leaf","int"],"staple":"after-first-request"}"#)
                .unwrap();
        assert!(r.when.is_catch_all());
        let r: HttpRule = serde_json::from_str(
            r#"{"match":{"path":"/"},"action":"redirect","status":301,"location":"https://www.a.test/"}"#,
        )
        .unwrap();
        assert!(matches!(r.action, HttpAction::Redirect { status: 301, .. }));
    }

    #[test]
    fn totality_is_enforced() {
        let mut s: FixtureScenario = serde_json::from_str(
            r#"{"scenario_id":"x","listeners":[{"hosts":["a.test"],"port":443,"kind":"tls",
                "tls_rules":[{"match":{"sni":"absent"},"action":"alert","code":40}]}]}"#,
        )
        .unwrap();
        assert_eq!(s.validate(None), Err(ScenarioError::NotTotal("a.test".into())));
        s.listeners[0].tls_rules.push(TlsRule {
            when: RuleMatch::default(),
            delay_ms: 0,
            action: TlsAction::Close,
        });
        assert_eq!(s.validate(None), Ok(()));
    }

    #[test]
    fn matching() {
        let m = RuleMatch {
            sni: Some(SniMatch::Equals("A.test".into())),
            probe_index: Some(IndexRange {
                min: Some(1),
                max: None,
            }),
            ..RuleMatch::default()
        };
        assert!(!m.matches(Some("a.test"), 0, None, None));
        assert!(m.matches(Some("a.test"), 1, None, None));
        assert!(!m.matches(None, 1, None, None));
    }
}
