//! Append-only record store.
//!
//! A store is one directory per plan:
//!
//! ```text
//! manifest.json          plan copy, tool version, reference data labels
//! records.jsonl          structured records, one envelope per line
//! records-<n>.jsonl      further shards once a shard holds `shard_size` lines
//! ledger.jsonl           ledger transitions, synced before a unit starts
//! certs/<sha256>.der     content-addressed certificate blobs
//! quarantine.jsonl       unterminated tails found when reopening
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::encoding::Fingerprint;
use crate::orchestrator::ledger::{LedgerTransition, MeasurementLedger};
use crate::x509::StoreLabel;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SHARD_SIZE: u64 = 100_000;

const MANIFEST: &str = "manifest.json";
const LEDGER: &str = "ledger.jsonl";
const QUARANTINE: &str = "quarantine.jsonl";
const CERTS: &str = "certs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    DnsSnapshot,
    RedirectChain,
    TlsObservation,
    ChainEvaluation,
    LedgerTransition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEnvelope {
    pub schema_version: u32,
    pub kind: RecordKind,
    pub plan_id: String,
    pub target: String,
    pub epoch: u32,
    /// Attempt of the unit that produced the record.
    #[serde(default)]
    pub attempt: u32,
    pub written_at: Timestamp,
    pub payload: serde_json::Value,
}

impl RecordEnvelope {
    pub fn new<T: Serialize>(
        kind: RecordKind,
        plan_id: &str,
        target: &str,
        epoch: u32,
        attempt: u32,
        written_at: Timestamp,
        payload: &T,
    ) -> Result<Self, serde_json::Error> {
        Ok(RecordEnvelope {
            schema_version: SCHEMA_VERSION,
            kind,
            plan_id: plan_id.to_string(),
            target: target.to_string(),
            epoch,
            attempt,
            written_at,
            payload: serde_json::to_value(payload)?,
        })
    }

    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T, serde_json::Error> {
        T::deserialize(&self.payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    Records,
    Ledger,
}

/// Zero-based line index within a stream, counted across shards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Position {
    pub stream: Stream,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub plan_id: String,
    /// The plan document as compiled.
    pub plan: serde_json::Value,
    pub tool_version: String,
    #[serde(default)]
    pub trust_store: Option<StoreLabel>,
    #[serde(default)]
    pub psl_snapshot: Option<String>,
    #[serde(default)]
    pub identifier_map_digest: Option<String>,
    pub started_at: Timestamp,
    #[serde(default)]
    pub finished_at: Option<Timestamp>,
    #[serde(default)]
    pub resumed_at: Vec<Timestamp>,
    pub shard_size: u64,
}

impl Manifest {
    pub fn new(plan_id: &str, plan: serde_json::Value, started_at: Timestamp) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            plan_id: plan_id.to_string(),
            plan,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            trust_store: None,
            psl_snapshot: None,
            identifier_map_digest: None,
            started_at,
            finished_at: None,
            resumed_at: Vec::new(),
            shard_size: DEFAULT_SHARD_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreOptions {
    /// fsync after every ledger append and record batch.
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { fsync: true }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: u64,
        source: serde_json::Error,
    },
    #[error("{path}:{line}: unsupported schema version {found}")]
    UnknownSchema { path: String, line: u64, found: u32 },
    #[error("{0} already holds a store")]
    Exists(String),
    #[error("{0} is not a store (no manifest)")]
    NotAStore(String),
    #[error("certificate blob {0} exists with different content")]
    Collision(Fingerprint),
    #[error("ledger position {position}: {reason}")]
    Integrity { position: u64, reason: String },
    #[error("store belongs to plan {found}, not {expected}")]
    PlanMismatch { expected: String, found: String },
    #[error("serialize: {0}")]
    Serialize(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A line removed from the end of a stream because it was never terminated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantined {
    pub file: String,
    pub content: String,
    pub quarantined_at: Timestamp,
}

#[derive(Debug)]
struct Appender {
    stream: Stream,
    file: File,
    shard: u32,
    lines_in_shard: u64,
    next_seq: u64,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn tmp_name(dir: &Path, stem: &str) -> PathBuf {
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    dir.join(format!(".{stem}.{}.{n}.tmp", std::process::id()))
}

/// Writes `data` to `path` through a temporary file and a rename.
fn write_atomic(path: &Path, data: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_name().and_then(|s| s.to_str()).unwrap_or("file");
    let tmp = tmp_name(dir, stem);
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(data).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn shard_file(n: u32) -> String {
    if n == 0 {
        "records.jsonl".to_string()
    } else {
        format!("records-{n}.jsonl")
    }
}

fn count_lines(path: &Path) -> Result<u64, StoreError> {
    let data = fs::read(path).map_err(io_err(path))?;
    Ok(data.iter().filter(|b| **b == b'\n').count() as u64)
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    opts: StoreOptions,
    manifest: Mutex<Manifest>,
    records: Mutex<Appender>,
    ledger: Mutex<Appender>,
    quarantined: Vec<Quarantined>,
}

impl Store {
    /// Creates a new store; refuses a directory that already has a manifest.
    pub fn create(dir: &Path, manifest: Manifest, opts: StoreOptions) -> Result<Store, StoreError> {
        if dir.join(MANIFEST).exists() {
            return Err(StoreError::Exists(dir.display().to_string()));
        }
        fs::create_dir_all(dir.join(CERTS)).map_err(io_err(dir))?;
        write_atomic(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)?;
        for f in [shard_file(0).as_str(), LEDGER] {
            let p = dir.join(f);
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(io_err(&p))?;
        }
        Store::open_inner(dir, opts, manifest.started_at)
    }

    /// Opens an existing store, quarantining unterminated final lines.
    pub fn open(dir: &Path, opts: StoreOptions, now: Timestamp) -> Result<Store, StoreError> {
        if !dir.join(MANIFEST).exists() {
            return Err(StoreError::NotAStore(dir.display().to_string()));
        }
        Store::open_inner(dir, opts, now)
    }

    fn open_inner(dir: &Path, opts: StoreOptions, now: Timestamp) -> Result<Store, StoreError> {
        let mp = dir.join(MANIFEST);
        let manifest: Manifest =
            serde_json::from_slice(&fs::read(&mp).map_err(io_err(&mp))?).map_err(|source| StoreError::Json {
                path: mp.display().to_string(),
                line: 1,
                source,
            })?;
        if manifest.schema_version == 0 || manifest.schema_version > SCHEMA_VERSION {
            return Err(StoreError::UnknownSchema {
                path: mp.display().to_string(),
                line: 1,
                found: manifest.schema_version,
            });
        }
        let mut quarantined = Vec::new();
        let shards = Store::shard_count(dir);
        let mut seq = 0;
        for n in 0..shards {
            let p = dir.join(shard_file(n));
            quarantined.extend(quarantine_tail(dir, &p, now)?);
            if n + 1 < shards {
                seq += count_lines(&p)?;
            }
        }
        let last = dir.join(shard_file(shards - 1));
        let in_last = count_lines(&last)?;
        let records = Appender {
            stream: Stream::Records,
            file: OpenOptions::new().append(true).open(&last).map_err(io_err(&last))?,
            shard: shards - 1,
            lines_in_shard: in_last,
            next_seq: seq + in_last,
        };
        let lp = dir.join(LEDGER);
        quarantined.extend(quarantine_tail(dir, &lp, now)?);
        let ledger = Appender {
            stream: Stream::Ledger,
            file: OpenOptions::new().append(true).open(&lp).map_err(io_err(&lp))?,
            shard: 0,
            lines_in_shard: count_lines(&lp)?,
            next_seq: count_lines(&lp)?,
        };
        Ok(Store {
            dir: dir.to_path_buf(),
            opts,
            manifest: Mutex::new(manifest),
            records: Mutex::new(records),
            ledger: Mutex::new(ledger),
            quarantined,
        })
    }

    fn shard_count(dir: &Path) -> u32 {
        let mut n = 1;
        while dir.join(shard_file(n)).exists() {
            n += 1;
        }
        n
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> Manifest {
        self.manifest.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Lines removed when this store was opened.
    pub fn quarantined(&self) -> &[Quarantined] {
        &self.quarantined
    }

    pub fn update_manifest(&self, f: impl FnOnce(&mut Manifest)) -> Result<(), StoreError> {
        let mut m = self.manifest.lock().unwrap_or_else(|e| e.into_inner());
        f(&mut m);
        write_atomic(&self.dir.join(MANIFEST), &serde_json::to_vec_pretty(&*m)?)
    }

    pub fn finalize(&self, at: Timestamp) -> Result<(), StoreError> {
        self.update_manifest(|m| m.finished_at = Some(at))
    }

    fn encode(envs: &[RecordEnvelope]) -> Result<Vec<Vec<u8>>, StoreError> {
        envs.iter()
            .map(|e| {
                let mut line = serde_json::to_vec(e)?;
                line.push(b'\n');
                Ok(line)
            })
            .collect()
    }

    /// Appends a batch of record envelopes as contiguous lines.
    pub fn append_records(&self, envs: &[RecordEnvelope]) -> Result<Vec<Position>, StoreError> {
        let lines = Store::encode(envs)?;
        let shard_size = self
            .manifest
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .shard_size
            .max(1);
        let mut a = self.records.lock().unwrap_or_else(|e| e.into_inner());
        let mut out = Vec::with_capacity(lines.len());
        let mut buf = Vec::new();
        for line in lines {
            if a.lines_in_shard >= shard_size {
                self.flush(&mut a, &mut buf)?;
                let p = self.dir.join(shard_file(a.shard + 1));
                a.file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&p)
                    .map_err(io_err(&p))?;
                a.shard += 1;
                a.lines_in_shard = 0;
            }
            buf.extend_from_slice(&line);
            out.push(Position {
                stream: Stream::Records,
                seq: a.next_seq,
            });
            a.next_seq += 1;
            a.lines_in_shard += 1;
        }
        self.flush(&mut a, &mut buf)?;
        Ok(out)
    }

    pub fn append(&self, env: &RecordEnvelope) -> Result<Position, StoreError> {
        if env.kind == RecordKind::LedgerTransition {
            return self.append_ledger(env);
        }
        Ok(self.append_records(std::slice::from_ref(env))?[0])
    }

    pub fn append_ledger(&self, env: &RecordEnvelope) -> Result<Position, StoreError> {
        let mut buf = Store::encode(std::slice::from_ref(env))?.remove(0);
        let mut a = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
        let pos = Position {
            stream: Stream::Ledger,
            seq: a.next_seq,
        };
        self.flush(&mut a, &mut buf)?;
        a.next_seq += 1;
        a.lines_in_shard += 1;
        Ok(pos)
    }

    fn flush(&self, a: &mut Appender, buf: &mut Vec<u8>) -> Result<(), StoreError> {
        if buf.is_empty() {
            return Ok(());
        }
        let path = match a.stream {
            Stream::Records => self.dir.join(shard_file(a.shard)),
            Stream::Ledger => self.dir.join(LEDGER),
        };
        a.file.write_all(buf).map_err(io_err(&path))?;
        if self.opts.fsync {
            a.file.sync_data().map_err(io_err(&path))?;
        }
        buf.clear();
        Ok(())
    }

    /// Every record envelope in position order.
    pub fn read_records(&self) -> Result<Vec<RecordEnvelope>, StoreError> {
        let _guard = self.records.lock().unwrap_or_else(|e| e.into_inner());
        let mut out = Vec::new();
        for n in 0..Store::shard_count(&self.dir) {
            out.extend(read_jsonl(&self.dir.join(shard_file(n)))?);
        }
        Ok(out)
    }

    pub fn read_ledger(&self) -> Result<Vec<RecordEnvelope>, StoreError> {
        let _guard = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
        read_jsonl(&self.dir.join(LEDGER))
    }

    pub fn cert_path(&self, fp: &Fingerprint) -> PathBuf {
        self.dir.join(CERTS).join(format!("{}.der", fp.to_hex()))
    }

    /// Stores `der` under its SHA-256 digest; storing it again is a no-op.
    pub fn content_store_cert(&self, der: &[u8]) -> Result<PathBuf, StoreError> {
        let fp = Fingerprint::of(der);
        let path = self.cert_path(&fp);
        match fs::read(&path) {
            Ok(existing) if existing == der => return Ok(path),
            Ok(_) => return Err(StoreError::Collision(fp)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(io_err(&path)(e)),
        }
        write_atomic(&path, der)?;
        Ok(path)
    }

    pub fn load_cert(&self, fp: &Fingerprint) -> Result<Vec<u8>, StoreError> {
        let path = self.cert_path(fp);
        fs::read(&path).map_err(io_err(&path))
    }

    pub fn has_cert(&self, fp: &Fingerprint) -> bool {
        self.cert_path(fp).exists()
    }

    /// Fingerprints of every stored blob, sorted.
    pub fn cert_fingerprints(&self) -> Result<Vec<Fingerprint>, StoreError> {
        let dir = self.dir.join(CERTS);
        let mut out: Vec<Fingerprint> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".der")?.parse().ok()
            })
            .collect();
        out.sort();
        Ok(out)
    }

    /// Folds the ledger stream into per-target state.
    pub fn load_ledger(&self) -> Result<MeasurementLedger, StoreError> {
        let plan_id = self.manifest().plan_id;
        let mut ledger = MeasurementLedger::new(&plan_id);
        for (pos, env) in self.read_ledger()?.into_iter().enumerate() {
            let integrity = |reason: String| StoreError::Integrity {
                position: pos as u64,
                reason,
            };
            if env.kind != RecordKind::LedgerTransition {
                return Err(integrity(format!("unexpected {:?} record", env.kind)));
            }
            if env.plan_id != plan_id {
                return Err(StoreError::PlanMismatch {
                    expected: plan_id,
                    found: env.plan_id,
                });
            }
            let t: LedgerTransition = env.payload_as().map_err(|e| integrity(e.to_string()))?;
            ledger.apply(&t).map_err(integrity)?;
        }
        Ok(ledger)
    }
}

/// Parses a JSON Lines file, rejecting unknown schema versions.
fn read_jsonl(path: &Path) -> Result<Vec<RecordEnvelope>, StoreError> {
    let data = match fs::read(path) {
        Ok(d) => d,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in data.split(|b| *b == b'\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let env: RecordEnvelope = serde_json::from_slice(line).map_err(|source| StoreError::Json {
            path: path.display().to_string(),
            line: i as u64 + 1,
            source,
        })?;
        if env.schema_version == 0 || env.schema_version > SCHEMA_VERSION {
            return Err(StoreError::UnknownSchema {
                path: path.display().to_string(),
                line: i as u64 + 1,
                found: env.schema_version,
            });
        }
        out.push(env);
    }
    Ok(out)
}

/// Moves an unterminated final line of `path` into the quarantine file and
/// truncates it away.
fn quarantine_tail(dir: &Path, path: &Path, now: Timestamp) -> Result<Option<Quarantined>, StoreError> {
    let data = match fs::read(path) {
        Ok(d) => d,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(path)(e)),
    };
    if data.is_empty() || data.ends_with(b"\n") {
        return Ok(None);
    }
    let keep = data.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    let q = Quarantined {
        file: path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string(),
        content: String::from_utf8_lossy(&data[keep..]).into_owned(),
        quarantined_at: now,
    };
    let qp = dir.join(QUARANTINE);
    let mut qf = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&qp)
        .map_err(io_err(&qp))?;
    let mut line = serde_json::to_vec(&q)?;
    line.push(b'\n');
    qf.write_all(&line).map_err(io_err(&qp))?;
    qf.sync_data().map_err(io_err(&qp))?;
    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(keep as u64).map_err(io_err(path))?;
    f.sync_data().map_err(io_err(path))?;
    Ok(Some(q))
}
