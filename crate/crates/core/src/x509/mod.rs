//! Certificate parsing and the interpretation primitives built on it.

pub mod caa_match;
pub mod cert;
pub mod chain;
pub mod dane;
pub mod lint;
pub mod revocation;
pub mod san;
pub mod sig;
pub mod validation;

use std::path::Path;

pub use caa_match::{match_caa, match_caa_for, CaaResult, CaaVerdict, IdentifierMap};
pub use cert::{
    parse_certificate, signed_by, split_certificates, CertParseError, CertificateRecord, DistinguishedName,
    KeyUsageFlag, San, SanKind,
};
pub use chain::{
    build_chains, name_matches, ChainEvaluation, Finding, StoreLabel, TrustStore, TrustStoreError, Verdict,
};
pub use dane::{association_data, match_tlsa, DaneVerdict, MatchedAgainst};
pub use lint::{lint_conformance, ConformanceFinding};
pub use revocation::{check_revocation_info, parse_ocsp_response, RevocationReport, RevocationStatus};
pub use san::{san_statistics, san_statistics_of, SanStats, SAN_CAP};
pub use validation::{classify_validation_type, OidTable, ValidationType};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Outcome of loading a directory of DER/PEM certificate files.
#[derive(Debug, Default)]
pub struct Corpus {
    pub certificates: Vec<CertificateRecord>,
    /// (file, error) for every blob that failed to parse.
    pub failures: Vec<(String, CertParseError)>,
}

/// Loads every regular file in `dir` (sorted by name, not recursive).
pub fn load_cert_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let io = |source| CorpusError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut corpus = Corpus::default();
    for p in paths {
        let data = std::fs::read(&p).map_err(|source| CorpusError::Io {
            path: p.display().to_string(),
            source,
        })?;
        for der in split_certificates(&data) {
            match parse_certificate(&der) {
                Ok(c) => corpus.certificates.push(c),
                Err(e) => corpus.failures.push((p.display().to_string(), e)),
            }
        }
    }
    Ok(corpus)
}
