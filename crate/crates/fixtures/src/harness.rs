//! Starting and stopping a scenario.

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use pkiscope_core::clock::Clock;
use pkiscope_core::dns::rdata::RecordType;
use pkiscope_core::dns::zone::{parse_zone, Zone, ZoneRecord};
use pkiscope_core::net::{MappedDialer, NetContext, StaticResolver};
use pkiscope_core::tls::Endpoint;

use crate::dns_server::{DnsData, DnsServer};
use crate::pki::MaterializedPki;
use crate::scenario::{FixtureScenario, ListenerKind, ScenarioError};
use crate::server::{bind_local, spawn_listener, ConnectionRecord, ListenerState, Shared};

/// Where one listener can be reached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointDescriptor {
    pub alias: String,
    pub hosts: Vec<String>,
    /// Logical address published in DNS and routed by the dialer.
    pub address: IpAddr,
    pub port: u16,
    pub kind: ListenerKind,
    /// The real socket behind the logical address.
    pub bound: SocketAddr,
}

impl EndpointDescriptor {
    pub fn endpoint(&self) -> Endpoint {
        Endpoint {
            host: self.alias.clone(),
            address: self.address,
            port: self.port,
        }
    }
}

pub struct RunningScenario {
    pub scenario_id: String,
    pub endpoints: Vec<EndpointDescriptor>,
    pub dialer: MappedDialer,
    pub resolver: StaticResolver,
    pub dns_addr: SocketAddr,
    pub clock: Arc<dyn Clock>,
    pub pki: Option<Arc<MaterializedPki>>,
    shared: Arc<Shared>,
    handles: Vec<JoinHandle<()>>,
    _dns: DnsServer,
}

impl std::fmt::Debug for RunningScenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunningScenario")
            .field("scenario_id", &self.scenario_id)
            .field("endpoints", &self.endpoints)
            .field("dns_addr", &self.dns_addr)
            .finish()
    }
}

impl RunningScenario {
    /// Network context routed into the scenario, resolving through the
    /// static host table.
    pub fn net(&self) -> NetContext {
        NetContext {
            dialer: Arc::new(self.dialer.clone()),
            resolver: Arc::new(self.resolver.clone()),
            clock: self.clock.clone(),
        }
    }

    pub fn descriptor(&self, host: &str, port: u16) -> Option<&EndpointDescriptor> {
        self.endpoints
            .iter()
            .find(|e| e.port == port && e.hosts.iter().any(|h| h.eq_ignore_ascii_case(host)))
    }

    /// Endpoint for `host` on `port`, addressed by that host name.
    pub fn endpoint(&self, host: &str, port: u16) -> Option<Endpoint> {
        self.descriptor(host, port).map(|d| Endpoint {
            host: host.to_string(),
            address: d.address,
            port,
        })
    }

    pub fn connection_log(&self) -> Vec<ConnectionRecord> {
        self.shared.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Waits until at least `n` connections are logged.
    pub fn wait_for_log(&self, n: usize, timeout: Duration) -> Vec<ConnectionRecord> {
        let deadline = Instant::now() + timeout;
        loop {
            let log = self.connection_log();
            if log.len() >= n || Instant::now() >= deadline {
                return log;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

impl Drop for RunningScenario {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        for e in &self.endpoints {
            let _ = TcpStream::connect_timeout(&e.bound, Duration::from_millis(200));
        }
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

fn host_records(host: &str, ip: IpAddr) -> ZoneRecord {
    let (rtype, rdata) = match ip {
        IpAddr::V4(v) => (RecordType::A, v.octets().to_vec()),
        IpAddr::V6(v) => (RecordType::Aaaa, v.octets().to_vec()),
    };
    ZoneRecord {
        owner: host.trim_end_matches('.').to_ascii_lowercase(),
        ttl: 300,
        rtype,
        rdata,
    }
}

fn tlsa_records(pki: &MaterializedPki) -> Result<Vec<ZoneRecord>, ScenarioError> {
    pki.spec
        .tlsa_publications
        .iter()
        .map(|p| {
            let assoc = pki
                .tlsa_association(&p.cert, p.selector, p.matching_type)
                .map_err(|e| ScenarioError::UnknownMember(e.to_string()))?;
            let mut rdata = vec![p.usage, p.selector, p.matching_type];
            rdata.extend_from_slice(&assoc);
            Ok(ZoneRecord {
                owner: p.owner.trim_end_matches('.').to_ascii_lowercase(),
                ttl: 300,
                rtype: RecordType::Tlsa,
                rdata,
            })
        })
        .collect()
}

/// Binds every listener on an ephemeral local port behind a logical
/// 127.0.0.N address, and starts the DNS responder.
pub fn start_scenario(
    scenario: &FixtureScenario,
    pki: Option<&MaterializedPki>,
    clock: Arc<dyn Clock>,
) -> Result<RunningScenario, ScenarioError> {
    scenario.validate(pki)?;
    let pki = pki.map(|p| Arc::new(p.clone()));
    let shared = Arc::new(Shared {
        pki: pki.clone(),
        clock: clock.clone(),
        groups: Mutex::new(BTreeMap::new()),
        log: Mutex::new(Vec::new()),
        stop: AtomicBool::new(false),
    });
    let dialer = MappedDialer::new();
    let resolver = StaticResolver::new();
    let mut addresses: BTreeMap<String, IpAddr> = BTreeMap::new();
    let mut next_octet = 10u8;
    let mut endpoints = Vec::new();
    let mut handles = Vec::new();
    let mut zone = Zone::default();
    for spec in &scenario.listeners {
        let alias = spec.alias().to_ascii_lowercase();
        let address = match (spec.address, addresses.get(&alias)) {
            (Some(a), _) => a,
            (None, Some(a)) => *a,
            (None, None) => {
                let a = IpAddr::V4(Ipv4Addr::new(127, 0, 0, next_octet));
                next_octet = next_octet
                    .checked_add(1)
                    .ok_or(ScenarioError::Startup("address pool exhausted".into()))?;
                a
            }
        };
        addresses.insert(alias, address);
        let (listener, bound) = bind_local().map_err(|e| ScenarioError::Startup(e.to_string()))?;
        dialer.map(SocketAddr::new(address, spec.port), bound);
        for h in &spec.hosts {
            resolver.insert(h, vec![address]);
            if scenario.dns.publish_listeners
                && !zone
                    .records_for(h, RecordType::A)
                    .iter()
                    .any(|r| r.rdata == host_records(h, address).rdata)
            {
                zone.records.push(host_records(h, address));
            }
        }
        let state = Arc::new(ListenerState::new(spec.clone()).map_err(|e| ScenarioError::Startup(e.to_string()))?);
        handles.push(spawn_listener(shared.clone(), state, listener));
        endpoints.push(EndpointDescriptor {
            alias: spec.alias().to_string(),
            hosts: spec.hosts.clone(),
            address,
            port: spec.port,
            kind: spec.kind,
            bound,
        });
    }
    if !scenario.dns.zone.trim().is_empty() {
        let extra =
            parse_zone(&scenario.dns.zone, &scenario.dns.origin).map_err(|e| ScenarioError::Zone(e.to_string()))?;
        zone.extend(extra);
    }
    if let Some(p) = &pki {
        zone.records.extend(tlsa_records(p)?);
    }
    let now = pki.as_ref().map(|p| p.now).unwrap_or_else(|| clock.now());
    let dns = DnsServer::start(DnsData {
        zone,
        fixture: scenario.dns.clone(),
        now,
    })
    .map_err(|e| ScenarioError::Startup(e.to_string()))?;
    Ok(RunningScenario {
        scenario_id: scenario.scenario_id.clone(),
        endpoints,
        dialer,
        resolver,
        dns_addr: dns.addr,
        clock,
        pki,
        shared,
        handles,
        _dns: dns,
    })
}
