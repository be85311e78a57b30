//! One target's collection burst: DNS, reachability and redirects, TLS.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::plan::{MeasurementPlan, SniMode};
use crate::clock::{elapsed_between, Timestamp};
use crate::dns::{classify_resolution, collect_snapshot, DnsSnapshot, ReachabilityClass, RecordType, ResolutionStatus};
use crate::net::NetContext;
use crate::redirect::{probe_ports, resolve_chain, PortStatus, RedirectChain};
use crate::targets::TargetEntry;
use crate::tls::{handshake, run_stateful_plan, Endpoint, Outcome, TlsObservation};
use crate::x509::parse_certificate;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsProbe {
    /// Position of the probe within the unit.
    pub index: u32,
    /// `sni`, `no-sni`, or `plan-<n>` for stateful plan probes.
    pub label: String,
    pub observation: TlsObservation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedirectRecord {
    pub started_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ports: Option<PortStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<RedirectChain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// CAA for the chain's final host when it differs from the target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_host_dns: Option<DnsSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicUnit {
    pub target: TargetEntry,
    pub epoch: u32,
    pub attempt: u32,
    pub unit_start: Timestamp,
    pub unit_end: Timestamp,
    pub within_window: bool,
    pub dns: DnsSnapshot,
    #[serde(default)]
    pub redirect: Option<RedirectRecord>,
    #[serde(default)]
    pub tls: Vec<TlsProbe>,
    /// Stateful plans that could not be run, with the reason.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plan_errors: Vec<String>,
}

/// Runs every collection step for `target` sequentially.
pub fn collect_unit(
    net: &NetContext,
    plan: &MeasurementPlan,
    target: &TargetEntry,
    epoch: u32,
    attempt: u32,
) -> AtomicUnit {
    let clock = net.clock.as_ref();
    let name = target.name.as_str();
    let unit_start = clock.now();
    let dns = collect_snapshot(name, &plan.dns_config(), clock);
    let mut unit = AtomicUnit {
        target: target.clone(),
        epoch,
        attempt,
        unit_start,
        unit_end: unit_start,
        within_window: true,
        dns,
        redirect: None,
        tls: Vec::new(),
        plan_errors: Vec::new(),
    };
    if classify_resolution(&unit.dns) == ReachabilityClass::Usable {
        if plan.redirect.enabled {
            let started_at = clock.now();
            let timeout = plan.redirect.config.timeout;
            let ports = probe_ports(net, name, timeout).ok();
            let (chain, error) = match resolve_chain(net, &format!("http://{name}/"), &plan.redirect.config) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let final_host_dns = chain
                .as_ref()
                .and_then(final_host)
                .filter(|h| h != name && plan.dns_types.contains(&RecordType::Caa))
                .map(|h| {
                    let mut cfg = plan.dns_config();
                    cfg.types = BTreeSet::from([RecordType::Caa]);
                    collect_snapshot(&h, &cfg, clock)
                });
            unit.redirect = Some(RedirectRecord {
                started_at,
                ports,
                chain,
                error,
                final_host_dns,
            });
        }
        if let Some(addr) = unit.dns.addresses().first().copied() {
            let endpoint = Endpoint::new(name, addr, plan.probe.port);
            let modes: &[Option<&str>] = match plan.probe.sni {
                SniMode::Target => &[Some(name)],
                SniMode::None => &[None],
                SniMode::Both => &[Some(name), None],
            };
            for sni in modes {
                let mut cfg = plan.probe.config.clone();
                cfg.sni = sni.map(str::to_string);
                let observation = handshake(net, &endpoint, &cfg, plan.probe.timeout);
                let label = if sni.is_some() { "sni" } else { "no-sni" };
                push_probe(&mut unit.tls, label, observation);
            }
            for (i, sp) in plan.features.stateful_plans.iter().enumerate() {
                let mut endpoints = vec![endpoint.clone()];
                for peer in &sp.peers {
                    match net.lookup(peer).ok().and_then(|a| a.first().copied()) {
                        Some(ip) => endpoints.push(Endpoint::new(peer, ip, plan.probe.port)),
                        None => unit.plan_errors.push(format!("plan-{i}: peer {peer} does not resolve")),
                    }
                }
                let mut base = plan.probe.config.clone();
                base.sni = Some(name.to_string());
                match run_stateful_plan(net, &endpoints, &sp.plan, &base, plan.probe.timeout) {
                    Ok(run) => {
                        for o in run.observations {
                            push_probe(&mut unit.tls, &format!("plan-{i}"), o);
                        }
                        if let Some(why) = run.truncated {
                            unit.plan_errors.push(format!("plan-{i}: truncated: {why}"));
                        }
                    }
                    Err(e) => unit.plan_errors.push(format!("plan-{i}: {e}")),
                }
            }
        }
    }
    unit.unit_end = clock.now();
    unit.within_window = elapsed_between(unit.unit_end, unit.unit_start) <= plan.temporal_window;
    unit
}

fn final_host(chain: &RedirectChain) -> Option<String> {
    let url = url::Url::parse(&chain.terminal.as_ref()?.url).ok()?;
    url.host_str().map(|h| h.trim_end_matches('.').to_ascii_lowercase())
}

fn push_probe(out: &mut Vec<TlsProbe>, label: &str, observation: TlsObservation) {
    out.push(TlsProbe {
        index: out.len() as u32,
        label: label.to_string(),
        observation,
    });
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalReport {
    /// Largest distance between any two item timestamps.
    pub skew_ms: u64,
    pub within: bool,
    /// Items whose validity had already ended when the unit started.
    pub expired_at_collection: Vec<String>,
}

/// Compares every temporally bound item of the unit against Δ.
pub fn check_temporal_integrity(unit: &AtomicUnit, delta: Duration) -> TemporalReport {
    let mut stamps = vec![unit.dns.collected_at];
    if let Some(r) = &unit.redirect {
        stamps.push(r.started_at);
        stamps.extend(r.ports.as_ref().map(|p| p.probed_at));
        stamps.extend(r.final_host_dns.as_ref().map(|d| d.collected_at));
    }
    stamps.extend(unit.tls.iter().map(|p| p.observation.started_at));
    let (lo, hi) = (stamps.iter().min().copied(), stamps.iter().max().copied());
    let skew = match (lo, hi) {
        (Some(lo), Some(hi)) => elapsed_between(hi, lo),
        _ => Duration::ZERO,
    };
    let mut expired = Vec::new();
    if let Some(windows) = &unit.dns.rrsig_windows {
        for (t, w) in windows {
            if w.expiration < unit.unit_start {
                expired.push(format!("rrsig:{t}"));
            }
        }
    }
    for p in &unit.tls {
        if let Some(next) = p.observation.stapled_ocsp.as_ref().and_then(|s| s.next_update) {
            if next < unit.unit_start {
                expired.push(format!("staple:{}", p.index));
            }
        }
        if let Some(leaf) = p.observation.leaf().and_then(|d| parse_certificate(d).ok()) {
            if leaf.not_after < unit.unit_start {
                expired.push(format!("certificate:{}", p.index));
            }
        }
    }
    TemporalReport {
        skew_ms: skew.as_millis() as u64,
        within: skew <= delta,
        expired_at_collection: expired,
    }
}

fn is_connect_failure(o: &Outcome) -> bool {
    matches!(o, Outcome::ProtocolError { class } if class == "connection-refused" || class == "connect-failed")
}

/// Failure class of a unit that produced no usable observation. Unresolved
/// names are results, not failures.
pub fn unit_failure(unit: &AtomicUnit) -> Option<String> {
    match unit.dns.resolution_status {
        ResolutionStatus::Timeout => return Some("dns-timeout".into()),
        ResolutionStatus::Servfail => return Some("dns-servfail".into()),
        ResolutionStatus::Nxdomain | ResolutionStatus::NoData => return None,
        ResolutionStatus::Resolved => {}
    }
    if unit.tls.is_empty() {
        return Some("no-address".into());
    }
    let outcomes: Vec<&Outcome> = unit.tls.iter().map(|p| &p.observation.outcome).collect();
    let port80_open = unit
        .redirect
        .as_ref()
        .and_then(|r| r.ports.as_ref())
        .is_some_and(|p| p.port_80 == crate::redirect::PortState::Open);
    if outcomes.iter().all(|o| is_connect_failure(o)) && !port80_open {
        return Some("connect".into());
    }
    if outcomes.iter().all(|o| **o == Outcome::Timeout) {
        return Some("timeout".into());
    }
    None
}
