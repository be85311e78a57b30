//! Sequences of dependent probes that thread session state between
//! handshakes.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{handshake, Endpoint, ProbeConfig, SessionState, TlsObservation};
use crate::encoding::duration_ms;
use crate::net::NetContext;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum PlanMode {
    /// The same configuration `count` times against one endpoint.
    RepeatSame { count: u32 },
    /// Each configuration once, in order, against one endpoint.
    SweepSettings { configs: Vec<ProbeConfig> },
    /// The first endpoint issues state that is replayed against the rest.
    /// Each endpoint is addressed with its own host name as SNI.
    CrossHostSame,
    /// Every endpoint × every configuration.
    CrossHostSweep { configs: Vec<ProbeConfig> },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatefulPlan {
    #[serde(flatten)]
    pub mode: PlanMode,
    #[serde(with = "duration_ms", default)]
    pub inter_probe_delay: Duration,
    /// Feed each probe's session_out into the next probe's session_in.
    #[serde(default = "yes")]
    pub carry_session: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("repeat-same needs a count of at least 2")]
    CountTooSmall,
    #[error("configuration sequence is empty")]
    NoConfigs,
    #[error("mode needs at least {0} endpoint(s)")]
    TooFewEndpoints(usize),
    #[error("invalid configuration: {0}")]
    Config(#[from] super::ConfigError),
}

impl StatefulPlan {
    pub fn new(mode: PlanMode) -> Self {
        StatefulPlan {
            mode,
            inter_probe_delay: Duration::ZERO,
            carry_session: true,
        }
    }

    pub fn validate(&self, endpoints: usize) -> Result<(), PlanError> {
        let min_endpoints = match &self.mode {
            PlanMode::RepeatSame { count } => {
                if *count < 2 {
                    return Err(PlanError::CountTooSmall);
                }
                1
            }
            PlanMode::SweepSettings { configs } => {
                if configs.is_empty() {
                    return Err(PlanError::NoConfigs);
                }
                1
            }
            PlanMode::CrossHostSame => 2,
            PlanMode::CrossHostSweep { configs } => {
                if configs.is_empty() {
                    return Err(PlanError::NoConfigs);
                }
                2
            }
        };
        if endpoints < min_endpoints {
            return Err(PlanError::TooFewEndpoints(min_endpoints));
        }
        if let PlanMode::SweepSettings { configs } | PlanMode::CrossHostSweep { configs } = &self.mode {
            for c in configs {
                c.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRun {
    pub observations: Vec<TlsObservation>,
    /// Why the plan stopped early, if it did.
    pub truncated: Option<String>,
}

struct Runner<'a> {
    net: &'a NetContext,
    plan: &'a StatefulPlan,
    timeout: Duration,
    out: Vec<TlsObservation>,
}

impl Runner<'_> {
    fn probe(&mut self, endpoint: &Endpoint, config: ProbeConfig) -> Option<SessionState> {
        if !self.out.is_empty() && !self.plan.inter_probe_delay.is_zero() {
            self.net.clock.sleep(self.plan.inter_probe_delay);
        }
        let obs = handshake(self.net, endpoint, &config, self.timeout);
        let session = obs.session_out.clone();
        self.out.push(obs);
        session
    }
}

/// Attaches `carried` unless the config already has state or cannot use it.
fn with_session(mut config: ProbeConfig, carried: Option<&SessionState>) -> ProbeConfig {
    if config.session_in.is_none() {
        if let Some(s) = carried.filter(|s| config.offers(s.version)) {
            config.session_in = Some(s.clone());
        }
    }
    config
}

pub fn run_stateful_plan(
    net: &NetContext,
    endpoints: &[Endpoint],
    plan: &StatefulPlan,
    base: &ProbeConfig,
    timeout: Duration,
) -> Result<PlanRun, PlanError> {
    plan.validate(endpoints.len())?;
    base.validate()?;
    let mut r = Runner {
        net,
        plan,
        timeout,
        out: Vec::new(),
    };
    let mut truncated = None;
    let carry = plan.carry_session;
    match &plan.mode {
        PlanMode::RepeatSame { count } => {
            let ep = &endpoints[0];
            let mut carried = base.session_in.clone();
            for _ in 0..*count {
                let cfg = if carry {
                    with_session(
                        ProbeConfig {
                            session_in: None,
                            ..base.clone()
                        },
                        carried.as_ref(),
                    )
                } else {
                    base.clone()
                };
                if let Some(s) = r.probe(ep, cfg) {
                    carried = Some(s);
                }
            }
        }
        PlanMode::SweepSettings { configs } => {
            let ep = &endpoints[0];
            let mut carried = base.session_in.clone();
            for c in configs {
                let cfg = if carry {
                    with_session(c.clone(), carried.as_ref())
                } else {
                    c.clone()
                };
                if !cfg.mutate_session_bits.is_empty() && cfg.session_in.is_none() {
                    truncated = Some("no session state available to mutate".to_string());
                    break;
                }
                if let Some(s) = r.probe(ep, cfg) {
                    carried = Some(s);
                }
            }
        }
        PlanMode::CrossHostSame => {
            let first = &endpoints[0];
            let issuer_cfg = ProbeConfig {
                sni: Some(first.host.clone()),
                session_in: None,
                ..base.clone()
            };
            match r.probe(first, issuer_cfg) {
                None => truncated = Some(format!("{} issued no session state to replay", first.host)),
                Some(state) => {
                    for ep in &endpoints[1..] {
                        let cfg = ProbeConfig {
                            sni: Some(ep.host.clone()),
                            session_in: Some(state.clone()),
                            ..base.clone()
                        };
                        r.probe(ep, cfg);
                    }
                }
            }
        }
        PlanMode::CrossHostSweep { configs } => {
            let mut carried = base.session_in.clone();
            'outer: for ep in endpoints {
                for c in configs {
                    let cfg = if carry {
                        with_session(c.clone(), carried.as_ref())
                    } else {
                        c.clone()
                    };
                    if !cfg.mutate_session_bits.is_empty() && cfg.session_in.is_none() {
                        truncated = Some("no session state available to mutate".to_string());
                        break 'outer;
                    }
                    if let Some(s) = r.probe(ep, cfg) {
                        carried = Some(s);
                    }
                }
            }
        }
    }
    Ok(PlanRun {
        observations: r.out,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_validation() {
        assert_eq!(
            StatefulPlan::new(PlanMode::RepeatSame { count: 1 }).validate(1),
            Err(PlanError::CountTooSmall)
        );
        assert_eq!(
            StatefulPlan::new(PlanMode::SweepSettings { configs: vec![] }).validate(1),
            Err(PlanError::NoConfigs)
        );
        assert_eq!(
            StatefulPlan::new(PlanMode::CrossHostSame).validate(1),
            Err(PlanError::TooFewEndpoints(2))
        );
        assert!(StatefulPlan::new(PlanMode::RepeatSame { count: 2 }).validate(1).is_ok());
    }

    #[test]
    fn plan_json_shape() {
        let p: StatefulPlan =
            serde_json::from_str(r#"{"mode":"repeat-same","count":10,"inter_probe_delay":50}"#).unwrap();
        assert_eq!(p.mode, PlanMode::RepeatSame { count: 10 });
        assert_eq!(p.inter_probe_delay, Duration::from_millis(50));
        assert!(p.carry_session);
    }
}
