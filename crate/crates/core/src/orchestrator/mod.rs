//! Plan compilation and execution.
//!
//! Each target of each epoch is collected as one atomic unit. The ledger
//! transition to `in-progress` is written and synced before the unit
//! starts; the terminal transition is written after the unit's records.
//! A unit's records are only considered part of the measurement once its
//! terminal transition names the same attempt.

pub mod artifacts;
pub mod ledger;
pub mod plan;
pub mod unit;

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use crate::analysis::{analyze_unit, AnalysisContext};
use crate::clock::elapsed_between;
use crate::net::NetContext;
use crate::storage::{Manifest, RecordEnvelope, RecordKind, Store, StoreError, StoreOptions};
use crate::targets::TargetEntry;

pub use artifacts::{detect_artifacts, ArtifactKind};
pub use ledger::{has_attempts_left, LedgerTransition, MeasurementLedger, TargetState, TargetStatus, UnitSummary};
pub use plan::{
    compile_plan, CompileError, FeatureSelection, FrequencySpec, MeasurementPlan, PlanConfig, SniMode, StatefulPlanRef,
    TlsAspect, X509Aspect,
};
pub use unit::{
    check_temporal_integrity, collect_unit, unit_failure, AtomicUnit, RedirectRecord, TemporalReport, TlsProbe,
};

/// Identifies the records of one attempt at one target in one epoch.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct UnitKey {
    pub epoch: u32,
    pub target: String,
    pub attempt: u32,
}

impl UnitKey {
    pub fn of(env: &RecordEnvelope) -> Self {
        UnitKey {
            epoch: env.epoch,
            target: env.target.clone(),
            attempt: env.attempt,
        }
    }
}

/// Units whose terminal transition says they completed.
pub fn committed_units(ledger: &MeasurementLedger) -> BTreeSet<UnitKey> {
    let mut out = BTreeSet::new();
    for (epoch, targets) in &ledger.epochs {
        for (target, s) in targets {
            if s.status.is_completed() {
                out.insert(UnitKey {
                    epoch: *epoch,
                    target: target.clone(),
                    attempt: s.attempts,
                });
            }
        }
    }
    out
}

/// Points inside a unit where a kill switch is consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Checkpoint {
    /// `in-progress` is durable.
    Started,
    /// Collection finished, nothing stored yet.
    Collected,
    /// Records are stored, the terminal transition is not.
    Stored,
    /// The terminal transition is durable.
    Committed,
}

/// Returns false to stop the run at this checkpoint, as a crash would.
pub type KillSwitch = Arc<dyn Fn(&str, Checkpoint) -> bool + Send + Sync>;

#[derive(Clone, Default)]
pub struct ExecuteOptions {
    pub kill: Option<KillSwitch>,
}

/// Runtime dependencies of an execution.
#[derive(Debug, Clone)]
pub struct Runtime {
    pub net: NetContext,
    /// When present, chains are analysed while collecting.
    pub analysis: Option<AnalysisContext>,
}

#[derive(Debug, Clone)]
pub struct ExecuteReport {
    /// Units started, in start order.
    pub executed: Vec<UnitKey>,
    pub aborted: bool,
    pub ledger: MeasurementLedger,
}

impl ExecuteReport {
    /// Targets that ended failed in some epoch.
    pub fn failures(&self) -> Vec<(u32, String)> {
        let mut out = Vec::new();
        for (epoch, targets) in &self.ledger.epochs {
            for (t, s) in targets {
                if !s.status.is_completed() {
                    out.push((*epoch, t.clone()));
                }
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("store belongs to plan {found}, not {expected}")]
    PlanMismatch { expected: String, found: String },
    #[error("ledger: {0}")]
    Ledger(String),
}

/// Creates the store for a plan and writes its manifest.
pub fn create_store(dir: &Path, plan: &MeasurementPlan, rt: &Runtime, opts: StoreOptions) -> Result<Store, ExecError> {
    let mut m = Manifest::new(
        &plan.plan_id,
        serde_json::to_value(plan).map_err(StoreError::from)?,
        rt.net.clock.now(),
    );
    if let Some(a) = &rt.analysis {
        m.trust_store = a.trust.as_ref().map(|t| t.label.clone());
        m.psl_snapshot = a.psl.as_ref().and_then(|p| p.snapshot_date).map(|d| d.to_string());
        if !a.identifier_map.is_empty() {
            m.identifier_map_digest = Some(a.identifier_map.digest());
        }
    }
    Ok(Store::create(dir, m, opts)?)
}

struct Shared<'a> {
    plan: &'a MeasurementPlan,
    store: &'a Store,
    rt: &'a Runtime,
    opts: &'a ExecuteOptions,
    ledger: Mutex<MeasurementLedger>,
    queue: Mutex<VecDeque<TargetEntry>>,
    executed: Mutex<Vec<UnitKey>>,
    abort: AtomicBool,
    error: Mutex<Option<ExecError>>,
}

impl Shared<'_> {
    fn transition(
        &self,
        ledger: &mut MeasurementLedger,
        epoch: u32,
        target: &str,
        to: TargetStatus,
        attempt: u32,
        unit: Option<UnitSummary>,
    ) -> Result<(), ExecError> {
        let t = LedgerTransition {
            target: target.to_string(),
            epoch,
            to,
            attempt,
            at: self.rt.net.clock.now(),
            unit,
        };
        ledger.apply(&t).map_err(ExecError::Ledger)?;
        let env = RecordEnvelope::new(
            RecordKind::LedgerTransition,
            &self.plan.plan_id,
            target,
            epoch,
            attempt,
            t.at,
            &t,
        )
        .map_err(StoreError::from)?;
        self.store.append_ledger(&env)?;
        Ok(())
    }

    fn lock_ledger(&self) -> std::sync::MutexGuard<'_, MeasurementLedger> {
        self.ledger.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn keep_going(&self, target: &str, at: Checkpoint) -> bool {
        if self.abort.load(Ordering::SeqCst) {
            return false;
        }
        if let Some(k) = &self.opts.kill {
            if !k(target, at) {
                self.abort.store(true, Ordering::SeqCst);
                return false;
            }
        }
        true
    }

    fn fail(&self, e: ExecError) {
        self.abort.store(true, Ordering::SeqCst);
        self.error.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(e);
    }

    fn worker(&self, epoch: u32, scheduled: crate::clock::Timestamp) {
        loop {
            if self.abort.load(Ordering::SeqCst) {
                return;
            }
            let Some(target) = self.queue.lock().unwrap_or_else(|e| e.into_inner()).pop_front() else {
                return;
            };
            if let Err(e) = self.run_unit(epoch, scheduled, &target) {
                self.fail(e);
                return;
            }
        }
    }

    fn run_unit(&self, epoch: u32, scheduled: crate::clock::Timestamp, target: &TargetEntry) -> Result<(), ExecError> {
        let name = target.name.as_str();
        let attempt = {
            let mut l = self.lock_ledger();
            let attempt = l.state(epoch, name).map_or(0, |s| s.attempts) + 1;
            self.transition(&mut l, epoch, name, TargetStatus::InProgress, attempt, None)?;
            attempt
        };
        self.executed.lock().unwrap_or_else(|e| e.into_inner()).push(UnitKey {
            epoch,
            target: name.to_string(),
            attempt,
        });
        if !self.keep_going(name, Checkpoint::Started) {
            return Ok(());
        }
        let unit = collect_unit(&self.rt.net, self.plan, target, epoch, attempt);
        if !self.keep_going(name, Checkpoint::Collected) {
            return Ok(());
        }
        let temporal = check_temporal_integrity(&unit, self.plan.temporal_window);
        let mut artifacts = detect_artifacts(&unit);
        if !unit.within_window {
            artifacts.insert(0, ArtifactKind::Temporal);
        }
        let records = self.store_unit(&unit)?;
        if !self.keep_going(name, Checkpoint::Stored) {
            return Ok(());
        }
        let status = match unit_failure(&unit) {
            Some(class) => TargetStatus::Failed { class },
            None => match artifacts.first() {
                Some(kind) => TargetStatus::ArtifactFlagged { kind: *kind },
                None => TargetStatus::Succeeded,
            },
        };
        let summary = UnitSummary {
            unit_start: unit.unit_start,
            unit_end: unit.unit_end,
            within_window: unit.within_window,
            skew_ms: temporal.skew_ms,
            expired_at_collection: temporal.expired_at_collection,
            artifacts,
            epoch_scheduled_at: scheduled,
            records,
        };
        {
            let mut l = self.lock_ledger();
            let failed = matches!(status, TargetStatus::Failed { .. });
            match &status {
                TargetStatus::Failed { class } => tracing::warn!(target = name, epoch, attempt, class, "unit failed"),
                s => tracing::debug!(target = name, epoch, attempt, status = s.name(), "unit done"),
            }
            self.transition(&mut l, epoch, name, status, attempt, Some(summary))?;
            let retry = failed
                && l.state(epoch, name)
                    .is_some_and(|s| has_attempts_left(s, self.plan.retry_budget));
            if retry {
                self.transition(&mut l, epoch, name, TargetStatus::Pending, attempt, None)?;
                self.queue
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .push_back(target.clone());
            }
        }
        self.keep_going(name, Checkpoint::Committed);
        Ok(())
    }

    /// Appends the unit's records as one batch; returns how many.
    fn store_unit(&self, unit: &AtomicUnit) -> Result<u32, ExecError> {
        let now = self.rt.net.clock.now();
        let env = |kind, payload: &dyn erased::Payload| -> Result<RecordEnvelope, StoreError> {
            Ok(RecordEnvelope {
                schema_version: crate::storage::SCHEMA_VERSION,
                kind,
                plan_id: self.plan.plan_id.clone(),
                target: unit.target.name.clone(),
                epoch: unit.epoch,
                attempt: unit.attempt,
                written_at: now,
                payload: payload.to_value()?,
            })
        };
        let mut envs = vec![env(RecordKind::DnsSnapshot, &unit.dns)?];
        if let Some(r) = &unit.redirect {
            envs.push(env(RecordKind::RedirectChain, r)?);
        }
        for p in &unit.tls {
            for der in &p.observation.chain_presented {
                self.store.content_store_cert(der)?;
            }
            envs.push(env(RecordKind::TlsObservation, p)?);
        }
        if let Some(ctx) = &self.rt.analysis {
            let (analyses, blobs) = analyze_unit(&unit.target.name, unit.target.rank, &unit.dns, &unit.tls, ctx);
            for b in &blobs {
                self.store.content_store_cert(b)?;
            }
            for a in &analyses {
                envs.push(env(RecordKind::ChainEvaluation, a)?);
            }
        }
        self.store.append_records(&envs)?;
        Ok(envs.len() as u32)
    }
}

mod erased {
    pub trait Payload {
        fn to_value(&self) -> Result<serde_json::Value, serde_json::Error>;
    }

    impl<T: serde::Serialize> Payload for T {
        fn to_value(&self) -> Result<serde_json::Value, serde_json::Error> {
            serde_json::to_value(self)
        }
    }
}

fn run_epochs(
    plan: &MeasurementPlan,
    store: &Store,
    rt: &Runtime,
    opts: &ExecuteOptions,
) -> Result<ExecuteReport, ExecError> {
    let manifest = store.manifest();
    if manifest.plan_id != plan.plan_id {
        return Err(ExecError::PlanMismatch {
            expected: plan.plan_id.clone(),
            found: manifest.plan_id,
        });
    }
    let shared = Shared {
        plan,
        store,
        rt,
        opts,
        ledger: Mutex::new(store.load_ledger()?),
        queue: Mutex::new(VecDeque::new()),
        executed: Mutex::new(Vec::new()),
        abort: AtomicBool::new(false),
        error: Mutex::new(None),
    };
    let clock = rt.net.clock.clone();
    let mut seen = BTreeSet::new();
    let targets: Vec<&TargetEntry> = plan
        .targets
        .entries
        .iter()
        .filter(|e| seen.insert(e.name.clone()))
        .collect();
    for (epoch, scheduled) in plan.epoch_schedule(manifest.started_at).into_iter().enumerate() {
        let epoch = epoch as u32;
        let now = clock.now();
        if now < scheduled {
            clock.sleep(elapsed_between(scheduled, now));
        }
        {
            let mut l = shared.lock_ledger();
            for t in &targets {
                if l.state(epoch, &t.name).is_none() {
                    shared.transition(&mut l, epoch, &t.name, TargetStatus::Pending, 0, None)?;
                }
            }
            let mut queue = VecDeque::new();
            for t in &targets {
                let Some(s) = l.state(epoch, &t.name).cloned() else {
                    continue;
                };
                let mut status = s.status.clone();
                let interrupted = status == TargetStatus::InProgress;
                if interrupted {
                    tracing::info!(target = t.name.as_str(), epoch, "rerunning interrupted unit");
                    status = TargetStatus::Failed {
                        class: "interrupted".into(),
                    };
                    shared.transition(&mut l, epoch, &t.name, status.clone(), s.attempts, None)?;
                }
                if matches!(status, TargetStatus::Failed { .. })
                    && (interrupted || has_attempts_left(&s, plan.retry_budget))
                {
                    shared.transition(&mut l, epoch, &t.name, TargetStatus::Pending, s.attempts, None)?;
                    status = TargetStatus::Pending;
                }
                if status == TargetStatus::Pending {
                    queue.push_back((*t).clone());
                }
            }
            *shared.queue.lock().unwrap_or_else(|e| e.into_inner()) = queue;
        }
        std::thread::scope(|s| {
            for _ in 0..plan.concurrency_width.max(1) {
                s.spawn(|| shared.worker(epoch, scheduled));
            }
        });
        if let Some(e) = shared.error.lock().unwrap_or_else(|e| e.into_inner()).take() {
            return Err(e);
        }
        if shared.abort.load(Ordering::SeqCst) {
            break;
        }
    }
    let aborted = shared.abort.load(Ordering::SeqCst);
    if !aborted {
        store.finalize(clock.now())?;
    }
    Ok(ExecuteReport {
        executed: shared.executed.into_inner().unwrap_or_else(|e| e.into_inner()),
        aborted,
        ledger: shared.ledger.into_inner().unwrap_or_else(|e| e.into_inner()),
    })
}

/// Processes every pending target of every epoch.
pub fn execute(
    plan: &MeasurementPlan,
    store: &Store,
    rt: &Runtime,
    opts: &ExecuteOptions,
) -> Result<ExecuteReport, ExecError> {
    run_epochs(plan, store, rt, opts)
}

/// Continues a stored run: interrupted units are always rerun, failed ones
/// with attempts left are retried, completed ones are left alone.
pub fn resume(
    plan: &MeasurementPlan,
    store: &Store,
    rt: &Runtime,
    opts: &ExecuteOptions,
) -> Result<ExecuteReport, ExecError> {
    let manifest = store.manifest();
    if manifest.plan_id != plan.plan_id {
        return Err(ExecError::PlanMismatch {
            expected: plan.plan_id.clone(),
            found: manifest.plan_id,
        });
    }
    let now = rt.net.clock.now();
    store.update_manifest(|m| {
        m.resumed_at.push(now);
        m.finished_at = None;
    })?;
    run_epochs(plan, store, rt, opts)
}
