//! Plan documents and their compilation into a resolved [`MeasurementPlan`].

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use chrono::TimeDelta;
use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::dns::{DnsQueryConfig, RecordType, DEFAULT_RESOLVER};
use crate::encoding::duration_ms;
use crate::redirect::RedirectConfig;
use crate::targets::TargetList;
use crate::tls::{ProbeConfig, StatefulPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TlsAspect {
    T1,
    T2,
    T3,
    T4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum X509Aspect {
    X1,
    X2,
    X3,
    X4,
    X5,
}

/// A stateful plan run against the target, optionally with peer hosts for
/// cross-host modes. The target is always the first endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatefulPlanRef {
    #[serde(flatten)]
    pub plan: StatefulPlan,
    #[serde(default)]
    pub peers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureSelection {
    #[serde(default)]
    pub tls_aspects: BTreeSet<TlsAspect>,
    #[serde(default)]
    pub x509_aspects: BTreeSet<X509Aspect>,
    #[serde(default)]
    pub stateful_plans: Vec<StatefulPlanRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FrequencySpec {
    Snapshot,
    Longitudinal {
        #[serde(with = "duration_ms", rename = "interval_ms")]
        interval: Duration,
        repetitions: u32,
    },
}

impl FrequencySpec {
    pub fn epochs(&self) -> u32 {
        match self {
            FrequencySpec::Snapshot => 1,
            FrequencySpec::Longitudinal { repetitions, .. } => *repetitions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SniMode {
    /// One probe with the target name as SNI.
    #[default]
    Target,
    /// One probe without SNI.
    None,
    /// A probe with SNI followed by one without.
    Both,
}

fn default_dns_timeout() -> Duration {
    Duration::from_secs(5)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnsSettings {
    /// Types to collect. Left out, the plan picks them from the features.
    #[serde(default)]
    pub types: Option<BTreeSet<RecordType>>,
    #[serde(default)]
    pub dnssec: bool,
    #[serde(default)]
    pub caa_climb: bool,
    #[serde(with = "duration_ms", default = "default_dns_timeout", rename = "timeout_ms")]
    pub timeout: Duration,
}

impl Default for DnsSettings {
    fn default() -> Self {
        DnsSettings {
            types: None,
            dnssec: false,
            caa_climb: false,
            timeout: default_dns_timeout(),
        }
    }
}

fn default_probe_timeout() -> Duration {
    Duration::from_secs(10)
}

fn default_port() -> u16 {
    443
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSettings {
    #[serde(default)]
    pub sni: SniMode,
    /// Base configuration; its `sni` is overwritten per probe.
    #[serde(default)]
    pub config: ProbeConfig,
    /// Left out, X4 turns stapling requests on.
    #[serde(default)]
    pub request_stapled_ocsp: Option<bool>,
    #[serde(with = "duration_ms", default = "default_probe_timeout", rename = "timeout_ms")]
    pub timeout: Duration,
    #[serde(default = "default_port")]
    pub port: u16,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            sni: SniMode::Target,
            config: ProbeConfig::default(),
            request_stapled_ocsp: None,
            timeout: default_probe_timeout(),
            port: default_port(),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedirectSettings {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(flatten)]
    pub config: RedirectConfig,
}

impl Default for RedirectSettings {
    fn default() -> Self {
        RedirectSettings {
            enabled: true,
            config: RedirectConfig::default(),
        }
    }
}

fn default_window() -> Duration {
    Duration::from_secs(30)
}

fn one() -> usize {
    1
}

fn default_resolver() -> SocketAddr {
    DEFAULT_RESOLVER.parse().expect("valid default resolver")
}

/// The plan document as written by a user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub plan_id: String,
    /// Target list (JSON Lines), relative to the plan document.
    #[serde(default)]
    pub targets: Option<PathBuf>,
    #[serde(default)]
    pub features: FeatureSelection,
    #[serde(default = "snapshot")]
    pub frequency: FrequencySpec,
    #[serde(with = "duration_ms", default = "default_window", rename = "temporal_window_ms")]
    pub temporal_window: Duration,
    #[serde(default = "one")]
    pub concurrency_width: usize,
    #[serde(default)]
    pub retry_budget: u32,
    #[serde(default = "default_resolver")]
    pub resolver: SocketAddr,
    #[serde(default)]
    pub dns: DnsSettings,
    #[serde(default)]
    pub probe: ProbeSettings,
    #[serde(default)]
    pub redirect: RedirectSettings,
    /// Trust-store manifest used for chain evaluation.
    #[serde(default)]
    pub trust_store: Option<PathBuf>,
    /// CAA identifier → operator CSV.
    #[serde(default)]
    pub identifier_map: Option<PathBuf>,
}

fn snapshot() -> FrequencySpec {
    FrequencySpec::Snapshot
}

impl PlanConfig {
    pub fn new(plan_id: &str) -> Self {
        serde_json::from_value(serde_json::json!({ "plan_id": plan_id })).expect("defaults deserialize")
    }
}

/// A fully resolved plan. Targets are frozen at compile time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub plan_id: String,
    pub targets: TargetList,
    pub features: FeatureSelection,
    pub frequency: FrequencySpec,
    #[serde(with = "duration_ms", rename = "temporal_window_ms")]
    pub temporal_window: Duration,
    pub concurrency_width: usize,
    pub retry_budget: u32,
    pub resolver: SocketAddr,
    pub dns_types: BTreeSet<RecordType>,
    pub dns: DnsSettings,
    pub probe: ProbeSettings,
    pub redirect: RedirectSettings,
    #[serde(default)]
    pub trust_store: Option<PathBuf>,
    #[serde(default)]
    pub identifier_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("plan_id is empty")]
    NoPlanId,
    #[error("temporal window must be positive")]
    ZeroWindow,
    #[error("concurrency width must be positive")]
    ZeroWidth,
    #[error("longitudinal interval must be positive")]
    ZeroInterval,
    #[error("longitudinal plans need at least 2 repetitions")]
    TooFewRepetitions,
    #[error("{0}")]
    Implication(String),
    #[error("record type {0} is not collected by this tool")]
    UnsupportedType(RecordType),
    #[error("stateful plan {index}: {reason}")]
    StatefulPlan { index: usize, reason: String },
    #[error("plan document: {0}")]
    Document(String),
}

/// Applies defaults and feature implications.
pub fn compile_plan(config: &PlanConfig, targets: TargetList) -> Result<MeasurementPlan, CompileError> {
    if config.plan_id.trim().is_empty() {
        return Err(CompileError::NoPlanId);
    }
    if config.temporal_window.is_zero() {
        return Err(CompileError::ZeroWindow);
    }
    if config.concurrency_width == 0 {
        return Err(CompileError::ZeroWidth);
    }
    if let FrequencySpec::Longitudinal { interval, repetitions } = config.frequency {
        if interval.is_zero() {
            return Err(CompileError::ZeroInterval);
        }
        if repetitions < 2 {
            return Err(CompileError::TooFewRepetitions);
        }
    }
    let x = &config.features.x509_aspects;
    let dns_types = match &config.dns.types {
        None => {
            let mut t = BTreeSet::from([RecordType::A]);
            if x.contains(&X509Aspect::X5) {
                t.insert(RecordType::Caa);
                t.insert(RecordType::Tlsa);
            }
            t
        }
        Some(t) => {
            let mut t = t.clone();
            t.insert(RecordType::A);
            if x.contains(&X509Aspect::X5) && !(t.contains(&RecordType::Caa) && t.contains(&RecordType::Tlsa)) {
                return Err(CompileError::Implication(
                    "X5 selected implies DNS collection of CAA and TLSA enabled".into(),
                ));
            }
            t
        }
    };
    let supported = DnsQueryConfig::supported_types();
    if let Some(bad) = dns_types.iter().find(|t| !supported.contains(t)) {
        return Err(CompileError::UnsupportedType(*bad));
    }
    let mut probe = config.probe.clone();
    let wants_staple = x.contains(&X509Aspect::X4);
    match probe.request_stapled_ocsp {
        Some(false) if wants_staple => {
            return Err(CompileError::Implication(
                "X4 selected implies request_stapled_ocsp enabled in probe configs".into(),
            ))
        }
        Some(v) => probe.config.request_stapled_ocsp = v,
        None => probe.config.request_stapled_ocsp = wants_staple,
    }
    probe
        .config
        .validate()
        .map_err(|e| CompileError::Document(format!("probe config: {e}")))?;
    let mut features = config.features.clone();
    for (index, p) in features.stateful_plans.iter_mut().enumerate() {
        p.plan
            .validate(1 + p.peers.len())
            .map_err(|e| CompileError::StatefulPlan {
                index,
                reason: e.to_string(),
            })?;
    }
    Ok(MeasurementPlan {
        plan_id: config.plan_id.clone(),
        targets,
        features,
        frequency: config.frequency,
        temporal_window: config.temporal_window,
        concurrency_width: config.concurrency_width,
        retry_budget: config.retry_budget,
        resolver: config.resolver,
        dns_types,
        dns: config.dns.clone(),
        probe,
        redirect: config.redirect.clone(),
        trust_store: config.trust_store.clone(),
        identifier_map: config.identifier_map.clone(),
    })
}

impl MeasurementPlan {
    /// Start time of each epoch, aligned to `start`.
    pub fn epoch_schedule(&self, start: Timestamp) -> Vec<Timestamp> {
        match self.frequency {
            FrequencySpec::Snapshot => vec![start],
            FrequencySpec::Longitudinal { interval, repetitions } => {
                let step = TimeDelta::from_std(interval).unwrap_or(TimeDelta::MAX);
                (0..repetitions).map(|i| start + step * i as i32).collect()
            }
        }
    }

    pub fn dns_config(&self) -> DnsQueryConfig {
        DnsQueryConfig {
            types: self.dns_types.clone(),
            resolver: self.resolver,
            timeout: self.dns.timeout,
            dnssec: self.dns.dnssec,
            caa_climb: self.dns.caa_climb,
            tlsa_port: self.probe.port,
        }
    }
}
