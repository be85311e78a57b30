#![allow(dead_code)]

use std::sync::Arc;

use chrono::Utc;
use tempfile::TempDir;

use pkiscope_core::analysis::AnalysisContext;
use pkiscope_core::clock::{Clock, ManualClock, SystemClock};
use pkiscope_core::orchestrator::{compile_plan, create_store, MeasurementPlan, PlanConfig, Runtime};
use pkiscope_core::storage::{Store, StoreOptions};
use pkiscope_core::targets::{Provenance, TargetEntry, TargetList, TargetSource};
use pkiscope_core::x509::{IdentifierMap, TrustStore};
use pkiscope_fixtures::RunningScenario;

pub const IDENTIFIERS: &str = "identifier,operator\nfixture-ca.test,Fixture CA\nbulk-ca.test,Bulk CA\n";

pub struct Lab {
    pub scenario: RunningScenario,
    pub clock: Arc<dyn Clock>,
    pub ctx: AnalysisContext,
    pub dir: TempDir,
}

impl Lab {
    pub fn with(scenario: RunningScenario, clock: Arc<dyn Clock>) -> Lab {
        let dir = tempfile::tempdir().unwrap();
        let pki = scenario.pki.clone().expect("scenario has a PKI");
        let manifest = pki
            .write_trust_store(&dir.path().join("trust"), "fixture-store")
            .unwrap();
        let ctx = AnalysisContext {
            trust: Some(TrustStore::load(&manifest).unwrap()),
            psl: Some(pkiscope_fixtures::public_suffixes()),
            identifier_map: IdentifierMap::from_csv(IDENTIFIERS).unwrap(),
            oid_table: Default::default(),
        };
        Lab {
            scenario,
            clock,
            ctx,
            dir,
        }
    }

    /// The bundled campaign scenario, on a manual clock when `manual`.
    pub fn campaign(manual: bool) -> Lab {
        let clock: Arc<dyn Clock> = if manual {
            Arc::new(ManualClock::new(Utc::now()))
        } else {
            Arc::new(SystemClock)
        };
        let s = pkiscope_fixtures::start_named("campaign", 11, clock.clone()).unwrap();
        Lab::with(s, clock)
    }

    pub fn bulk(n: usize, seed: u64) -> Lab {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let s = pkiscope_fixtures::start_bulk(n, seed, clock.clone()).unwrap();
        Lab::with(s, clock)
    }

    pub fn plan(&self, id: &str, names: &[String], edit: impl FnOnce(&mut PlanConfig)) -> MeasurementPlan {
        let mut cfg = PlanConfig::new(id);
        cfg.resolver = self.scenario.dns_addr;
        cfg.probe.timeout = std::time::Duration::from_secs(5);
        cfg.dns.timeout = std::time::Duration::from_secs(2);
        edit(&mut cfg);
        compile_plan(&cfg, targets(names)).unwrap()
    }

    pub fn runtime(&self, analysis: bool) -> Runtime {
        Runtime {
            net: self.scenario.net(),
            analysis: analysis.then(|| self.ctx.clone()),
        }
    }

    pub fn new_store(&self, name: &str, plan: &MeasurementPlan, rt: &Runtime) -> Store {
        create_store(&self.dir.path().join(name), plan, rt, StoreOptions::default()).unwrap()
    }

    pub fn reopen(&self, name: &str) -> Store {
        Store::open(&self.dir.path().join(name), StoreOptions::default(), self.clock.now()).unwrap()
    }
}

pub fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|n| n.to_string()).collect()
}

pub fn fq(list: &[&str]) -> Vec<String> {
    list.iter().map(|n| format!("{n}.fixture.test")).collect()
}

pub fn targets(names: &[String]) -> TargetList {
    TargetList {
        entries: names
            .iter()
            .enumerate()
            .map(|(i, n)| TargetEntry::new(n.clone(), Some(i as u64 + 1), TargetSource::Manual))
            .collect(),
        provenance: Provenance {
            source: "test".into(),
            retrieved_at: Utc::now(),
        },
    }
}
