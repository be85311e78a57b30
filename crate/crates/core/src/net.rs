//! Connection and name-resolution seams shared by every network collector.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::net::{IpAddr, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use crate::clock::{Clock, SystemClock};
use crate::dns::{self, rdata::RecordType};

pub trait Dialer: Send + Sync + fmt::Debug {
    fn connect(&self, addr: SocketAddr, timeout: Duration) -> io::Result<TcpStream>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DirectDialer;

impl Dialer for DirectDialer {
    fn connect(&self, addr: SocketAddr, timeout: Duration) -> io::Result<TcpStream> {
        let s = TcpStream::connect_timeout(&addr, timeout)?;
        s.set_nodelay(true)?;
        Ok(s)
    }
}

/// Routes logical addresses (e.g. 127.0.0.5:443) to real local listeners.
/// Anything unmapped is refused, like a closed port.
#[derive(Debug, Default, Clone)]
pub struct MappedDialer {
    routes: Arc<RwLock<BTreeMap<SocketAddr, SocketAddr>>>,
}

impl MappedDialer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn map(&self, logical: SocketAddr, real: SocketAddr) {
        self.routes
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(logical, real);
    }

    pub fn unmap(&self, logical: SocketAddr) {
        self.routes.write().unwrap_or_else(|e| e.into_inner()).remove(&logical);
    }

    pub fn route(&self, logical: SocketAddr) -> Option<SocketAddr> {
        self.routes
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&logical)
            .copied()
    }
}

impl Dialer for MappedDialer {
    fn connect(&self, addr: SocketAddr, timeout: Duration) -> io::Result<TcpStream> {
        match self.route(addr) {
            Some(real) => DirectDialer.connect(real, timeout),
            None => Err(io::Error::new(
                io::ErrorKind::ConnectionRefused,
                format!("{addr} is not mapped"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("{0}: name does not exist")]
    NotFound(String),
    #[error("{0}: no addresses")]
    NoAddresses(String),
    #[error("{0}: {1}")]
    Failed(String, String),
}

pub trait HostResolver: Send + Sync + fmt::Debug {
    fn resolve(&self, host: &str) -> Result<Vec<IpAddr>, ResolveError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemResolver;

impl HostResolver for SystemResolver {
    fn resolve(&self, host: &str) -> Result<Vec<IpAddr>, ResolveError> {
        let addrs: Vec<IpAddr> = (host, 0)
            .to_socket_addrs()
            .map_err(|e| ResolveError::Failed(host.to_string(), e.to_string()))?
            .map(|a| a.ip())
            .collect();
        if addrs.is_empty() {
            return Err(ResolveError::NoAddresses(host.to_string()));
        }
        Ok(addrs)
    }
}

/// Resolves A/AAAA through a specific DNS server.
#[derive(Debug, Clone)]
pub struct DnsResolver {
    pub server: SocketAddr,
    pub timeout: Duration,
}

impl HostResolver for DnsResolver {
    fn resolve(&self, host: &str) -> Result<Vec<IpAddr>, ResolveError> {
        let mut out = Vec::new();
        let mut nx = false;
        for rtype in [RecordType::A, RecordType::Aaaa] {
            match dns::query(self.server, host, rtype, false, self.timeout) {
                Ok(resp) => {
                    if resp.header.rcode == dns::wire::RCODE_NXDOMAIN {
                        nx = true;
                    }
                    for rr in resp.answers.iter().filter(|r| r.rtype == rtype.code()) {
                        match rr.rdata.len() {
                            4 => out.push(IpAddr::from(<[u8; 4]>::try_from(&rr.rdata[..]).expect("len 4"))),
                            16 => out.push(IpAddr::from(<[u8; 16]>::try_from(&rr.rdata[..]).expect("len 16"))),
                            _ => {}
                        }
                    }
                }
                Err(e) if rtype == RecordType::A => return Err(ResolveError::Failed(host.to_string(), e.to_string())),
                Err(_) => {}
            }
        }
        if out.is_empty() {
            return Err(if nx {
                ResolveError::NotFound(host.to_string())
            } else {
                ResolveError::NoAddresses(host.to_string())
            });
        }
        Ok(out)
    }
}

/// Fixed host table; names are matched case-insensitively.
#[derive(Debug, Default, Clone)]
pub struct StaticResolver {
    table: Arc<RwLock<BTreeMap<String, Vec<IpAddr>>>>,
}

impl StaticResolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, host: &str, addrs: Vec<IpAddr>) {
        let key = host.trim_end_matches('.').to_ascii_lowercase();
        self.table.write().unwrap_or_else(|e| e.into_inner()).insert(key, addrs);
    }
}

impl HostResolver for StaticResolver {
    fn resolve(&self, host: &str) -> Result<Vec<IpAddr>, ResolveError> {
        let key = host.trim_end_matches('.').to_ascii_lowercase();
        match self.table.read().unwrap_or_else(|e| e.into_inner()).get(&key) {
            Some(a) if !a.is_empty() => Ok(a.clone()),
            Some(_) => Err(ResolveError::NoAddresses(host.to_string())),
            None => Err(ResolveError::NotFound(host.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetContext {
    pub dialer: Arc<dyn Dialer>,
    pub resolver: Arc<dyn HostResolver>,
    pub clock: Arc<dyn Clock>,
}

impl NetContext {
    pub fn system() -> Self {
        NetContext {
            dialer: Arc::new(DirectDialer),
            resolver: Arc::new(SystemResolver),
            clock: Arc::new(SystemClock),
        }
    }

    /// Resolves `host` (or parses it as an address literal).
    pub fn lookup(&self, host: &str) -> Result<Vec<IpAddr>, ResolveError> {
        let bare = host.trim_start_matches('[').trim_end_matches(']');
        if let Ok(ip) = bare.parse::<IpAddr>() {
            return Ok(vec![ip]);
        }
        self.resolver.resolve(host)
    }

    /// Connects to the first reachable address of `host:port`.
    pub fn connect_host(&self, host: &str, port: u16, timeout: Duration) -> io::Result<(TcpStream, IpAddr)> {
        let addrs = self
            .lookup(host)
            .map_err(|e| io::Error::new(io::ErrorKind::NotFound, e.to_string()))?;
        let mut last = io::Error::new(io::ErrorKind::NotFound, "no addresses");
        for ip in addrs {
            match self.dialer.connect(SocketAddr::new(ip, port), timeout) {
                Ok(s) => return Ok((s, ip)),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}
