//! pkiscope: a TLS and Web PKI measurement framework.
//!
//! The crate is organised around the life of a measurement:
//!
//! - [`targets`] turns hit lists and certificate corpora into target lists,
//!   with public-suffix aware trimming and duplicate flagging.
//! - [`dns`] collects timestamped DNS snapshots and classifies CAA records.
//! - [`redirect`] checks port reachability and follows HTTP/HTML redirects.
//! - [`tls`] owns a TLS 1.2/1.3 client used to capture handshake features,
//!   staples and session state, and drives stateful probe plans.
//! - [`x509`] parses certificates and builds and evaluates trust chains.
//! - [`orchestrator`] compiles plans and executes them as atomic units with
//!   temporal-integrity checks, artifact detection and exact resumption.
//! - [`storage`] is the append-only record store backing everything above.
//! - [`report`] aggregates a store into plot-ready tables.

pub mod analysis;
pub mod clock;
pub mod der;
pub mod dns;
pub mod encoding;
pub mod http;
pub mod net;
pub mod orchestrator;
pub mod redirect;
pub mod report;
pub mod storage;
pub mod targets;
pub mod tls;
pub mod x509;

pub use clock::{Clock, ManualClock, SystemClock, Timestamp};
pub use encoding::Fingerprint;
