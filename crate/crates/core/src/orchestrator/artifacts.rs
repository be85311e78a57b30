//! Heuristics for observations that say more about the measurement than
//! about the target.

use serde::{Deserialize, Serialize};

use super::unit::AtomicUnit;
use crate::tls::Outcome;
use crate::x509::parse_certificate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    /// The unit took longer than the temporal window.
    Temporal,
    /// Alert 40 on a probe sent without SNI.
    NoSniTermination,
    /// 403/429 carrying bot-challenge markers.
    HttpBotBlock,
    /// A no-SNI probe got a leaf whose DNS SANs are all wildcards.
    WildcardFallback,
    /// A successful fetch with an empty body.
    EmptySuccess,
}

pub fn detect_artifacts(unit: &AtomicUnit) -> Vec<ArtifactKind> {
    let mut out = Vec::new();
    let no_sni = || unit.tls.iter().filter(|p| p.observation.config_used.sni.is_none());
    if no_sni().any(|p| p.observation.outcome == Outcome::Alert { code: 40 }) {
        out.push(ArtifactKind::NoSniTermination);
    }
    let terminal = unit
        .redirect
        .as_ref()
        .and_then(|r| r.chain.as_ref())
        .and_then(|c| c.terminal.as_ref());
    if let Some(t) = terminal {
        if matches!(t.status, 403 | 429) && !t.challenge_markers.is_empty() {
            out.push(ArtifactKind::HttpBotBlock);
        }
    }
    let wildcard_only = no_sni().filter(|p| p.observation.outcome.is_established()).any(|p| {
        p.observation
            .leaf()
            .and_then(|d| parse_certificate(d).ok())
            .is_some_and(|leaf| {
                let sans: Vec<&str> = leaf.dns_sans().collect();
                !sans.is_empty() && sans.iter().all(|s| s.starts_with("*."))
            })
    });
    if wildcard_only {
        out.push(ArtifactKind::WildcardFallback);
    }
    if let Some(t) = terminal {
        if (200..300).contains(&t.status) && t.body_length == 0 {
            out.push(ArtifactKind::EmptySuccess);
        }
    }
    out
}
