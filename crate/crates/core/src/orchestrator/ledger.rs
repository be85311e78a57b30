//! Per-target execution status, rebuilt by folding transitions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::artifacts::ArtifactKind;
use crate::clock::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum TargetStatus {
    Pending,
    InProgress,
    Succeeded,
    Failed { class: String },
    ArtifactFlagged { kind: ArtifactKind },
}

impl TargetStatus {
    pub fn name(&self) -> &'static str {
        match self {
            TargetStatus::Pending => "pending",
            TargetStatus::InProgress => "in-progress",
            TargetStatus::Succeeded => "succeeded",
            TargetStatus::Failed { .. } => "failed",
            TargetStatus::ArtifactFlagged { .. } => "artifact-flagged",
        }
    }

    /// The unit reached storage and will not be executed again this epoch.
    pub fn is_completed(&self) -> bool {
        matches!(self, TargetStatus::Succeeded | TargetStatus::ArtifactFlagged { .. })
    }
}

/// Collection facts of a finished unit, carried on its terminal transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub unit_start: Timestamp,
    pub unit_end: Timestamp,
    pub within_window: bool,
    pub skew_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expired_at_collection: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<ArtifactKind>,
    pub epoch_scheduled_at: Timestamp,
    pub records: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTransition {
    pub target: String,
    pub epoch: u32,
    pub to: TargetStatus,
    pub attempt: u32,
    pub at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<UnitSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetState {
    pub status: TargetStatus,
    pub attempts: u32,
    pub updated_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<UnitSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementLedger {
    pub plan_id: String,
    /// epoch → target → state
    pub epochs: BTreeMap<u32, BTreeMap<String, TargetState>>,
}

impl MeasurementLedger {
    pub fn new(plan_id: &str) -> Self {
        MeasurementLedger {
            plan_id: plan_id.to_string(),
            epochs: BTreeMap::new(),
        }
    }

    pub fn state(&self, epoch: u32, target: &str) -> Option<&TargetState> {
        self.epochs.get(&epoch).and_then(|m| m.get(target))
    }

    /// Applies one transition, enforcing the status state machine.
    pub fn apply(&mut self, t: &LedgerTransition) -> Result<(), String> {
        let slot = self.epochs.entry(t.epoch).or_default().get_mut(&t.target);
        let Some(cur) = slot else {
            if t.to != TargetStatus::Pending {
                return Err(format!(
                    "{}: first transition must be pending, got {}",
                    t.target,
                    t.to.name()
                ));
            }
            self.epochs.entry(t.epoch).or_default().insert(
                t.target.clone(),
                TargetState {
                    status: TargetStatus::Pending,
                    attempts: 0,
                    updated_at: t.at,
                    unit: None,
                },
            );
            return Ok(());
        };
        let legal = match (&cur.status, &t.to) {
            (TargetStatus::Pending, TargetStatus::InProgress) => t.attempt == cur.attempts + 1,
            (
                TargetStatus::InProgress,
                TargetStatus::Succeeded | TargetStatus::Failed { .. } | TargetStatus::ArtifactFlagged { .. },
            ) => t.attempt == cur.attempts,
            (TargetStatus::Failed { .. }, TargetStatus::Pending) => true,
            _ => false,
        };
        if !legal {
            return Err(format!(
                "{} epoch {}: illegal transition {} -> {} (attempt {}, {} so far)",
                t.target,
                t.epoch,
                cur.status.name(),
                t.to.name(),
                t.attempt,
                cur.attempts
            ));
        }
        if t.to == TargetStatus::InProgress {
            cur.attempts = t.attempt;
        }
        cur.status = t.to.clone();
        cur.updated_at = t.at;
        if t.unit.is_some() {
            cur.unit = t.unit.clone();
        }
        Ok(())
    }

    /// Targets of `epoch` whose status satisfies `pred`, sorted.
    pub fn targets_where(&self, epoch: u32, pred: impl Fn(&TargetState) -> bool) -> Vec<String> {
        self.epochs
            .get(&epoch)
            .map(|m| m.iter().filter(|(_, s)| pred(s)).map(|(t, _)| t.clone()).collect())
            .unwrap_or_default()
    }

    /// Status name → count for one epoch.
    pub fn counts(&self, epoch: u32) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        if let Some(m) = self.epochs.get(&epoch) {
            for s in m.values() {
                *out.entry(s.status.name()).or_insert(0) += 1;
            }
        }
        out
    }
}

/// A failed target may go back to pending while it has attempts left. The
/// first attempt is always granted, so a budget of 0 behaves like 1.
pub fn has_attempts_left(state: &TargetState, retry_budget: u32) -> bool {
    state.attempts < retry_budget.max(1)
}
