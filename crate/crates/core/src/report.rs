//! Aggregations of a committed store into plot-ready CSV and JSON.
//!
//! Every aggregation is a fold over inputs sorted into a canonical order
//! first, so output bytes depend only on the store's committed content.
//! Percentages always travel with their numerator and denominator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::CertAnalysis;
use crate::dns::{CaaParseStatus, CaaRecord, DnsSnapshot};
use crate::encoding::Fingerprint;
use crate::orchestrator::{committed_units, RedirectRecord, UnitKey};
use crate::redirect::{chain_stats, RedirectChain};
use crate::storage::{RecordKind, Store, StoreError};
use crate::x509::chain::path_order;
use crate::x509::{CaaResult, ChainEvaluation, SanStats, Verdict, SAN_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    MarketShare,
    ChainDiff,
    SanDist,
    RedirectDist,
    CaaSummary,
}

impl ReportKind {
    pub const ALL: [ReportKind; 5] = [
        ReportKind::MarketShare,
        ReportKind::ChainDiff,
        ReportKind::SanDist,
        ReportKind::RedirectDist,
        ReportKind::CaaSummary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::MarketShare => "market-share",
            ReportKind::ChainDiff => "chain-diff",
            ReportKind::SanDist => "san-dist",
            ReportKind::RedirectDist => "redirect-dist",
            ReportKind::CaaSummary => "caa-summary",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReportKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown report kind {s}"))
    }
}

/// A ratio with its parts. `value` is null when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: u64,
    pub denominator: u64,
    pub value: Option<f64>,
}

impl Fraction {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        Fraction {
            numerator,
            denominator,
            value: (denominator > 0).then(|| numerator as f64 / denominator as f64),
        }
    }

    pub fn percent(&self) -> Option<f64> {
        self.value.map(|v| v * 100.0)
    }
}

fn pct(f: &Fraction) -> String {
    f.percent().map(|p| format!("{p:.4}")).unwrap_or_default()
}

// ---- market share ----

pub const DEFAULT_MISC_THRESHOLD: f64 = 0.01;
pub const MISC: &str = "Misc.";
pub const DIRECT: &str = "(direct)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediateShare {
    /// Hex fingerprint; empty for the merged and direct groups.
    pub fingerprint: String,
    pub label: String,
    pub unique_leaves: Fraction,
    pub target_leaves: Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorShare {
    pub fingerprint: String,
    pub label: String,
    pub unique_leaves: Fraction,
    pub target_leaves: Fraction,
    pub intermediates: Vec<IntermediateShare>,
}

/// Leaves attributed to (anchor, first intermediate), counted once per
/// unique leaf and once per (target, leaf) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketShareTree {
    pub misc_threshold: f64,
    pub unique_leaves: u64,
    pub target_leaves: u64,
    pub anchors: Vec<AnchorShare>,
}

/// `evaluations` pairs each evaluation with the target it was observed on.
/// Only valid evaluations count. A leaf seen with several paths is
/// attributed to the best one under the chain tie-break.
pub fn ca_market_share(
    evaluations: &[(String, ChainEvaluation)],
    labels: &BTreeMap<Fingerprint, String>,
    misc_threshold: f64,
) -> MarketShareTree {
    let mut best: BTreeMap<Fingerprint, Vec<Fingerprint>> = BTreeMap::new();
    let mut pairs: BTreeSet<(String, Fingerprint)> = BTreeSet::new();
    for (target, e) in evaluations {
        if e.verdict != Verdict::Valid {
            continue;
        }
        let Some(path) = &e.chosen_path else { continue };
        pairs.insert((target.clone(), e.leaf));
        best.entry(e.leaf)
            .and_modify(|p| {
                if path_order(path, p).is_lt() {
                    *p = path.clone();
                }
            })
            .or_insert_with(|| path.clone());
    }
    let key_of = |path: &[Fingerprint]| -> (Fingerprint, Option<Fingerprint>) {
        let anchor = *path.last().expect("non-empty path");
        let inter = (path.len() >= 3).then(|| path[1]);
        (anchor, inter)
    };
    let mut unique: BTreeMap<(Fingerprint, Option<Fingerprint>), u64> = BTreeMap::new();
    for path in best.values() {
        *unique.entry(key_of(path)).or_default() += 1;
    }
    let mut per_target: BTreeMap<(Fingerprint, Option<Fingerprint>), u64> = BTreeMap::new();
    for (_, leaf) in &pairs {
        *per_target.entry(key_of(&best[leaf])).or_default() += 1;
    }
    let total_u = best.len() as u64;
    let total_t = pairs.len() as u64;
    let label = |fp: &Fingerprint| labels.get(fp).cloned().unwrap_or_else(|| fp.to_hex()[..16].to_string());
    let anchors: BTreeSet<Fingerprint> = unique.keys().map(|k| k.0).collect();
    let mut out = Vec::new();
    for a in anchors {
        let mut inters = Vec::new();
        let (mut misc_u, mut misc_t) = (0, 0);
        let (mut sum_u, mut sum_t) = (0, 0);
        for ((anchor, inter), u) in unique.range((a, None)..) {
            if *anchor != a {
                break;
            }
            let t = per_target.get(&(*anchor, *inter)).copied().unwrap_or(0);
            sum_u += u;
            sum_t += t;
            let small = (*u as f64) < misc_threshold * total_u as f64;
            match inter {
                Some(i) if !small => inters.push(IntermediateShare {
                    fingerprint: i.to_hex(),
                    label: label(i),
                    unique_leaves: Fraction::new(*u, total_u),
                    target_leaves: Fraction::new(t, total_t),
                }),
                Some(_) => {
                    misc_u += u;
                    misc_t += t;
                }
                None => inters.push(IntermediateShare {
                    fingerprint: String::new(),
                    label: DIRECT.to_string(),
                    unique_leaves: Fraction::new(*u, total_u),
                    target_leaves: Fraction::new(t, total_t),
                }),
            }
        }
        if misc_u > 0 {
            inters.push(IntermediateShare {
                fingerprint: String::new(),
                label: MISC.to_string(),
                unique_leaves: Fraction::new(misc_u, total_u),
                target_leaves: Fraction::new(misc_t, total_t),
            });
        }
        out.push(AnchorShare {
            fingerprint: a.to_hex(),
            label: label(&a),
            unique_leaves: Fraction::new(sum_u, total_u),
            target_leaves: Fraction::new(sum_t, total_t),
            intermediates: inters,
        });
    }
    MarketShareTree {
        misc_threshold,
        unique_leaves: total_u,
        target_leaves: total_t,
        anchors: out,
    }
}

// ---- chain-length diff ----

/// Half-open rank interval `[lo, hi)`; `hi` absent means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankBucket {
    pub lo: u64,
    pub hi: Option<u64>,
}

impl RankBucket {
    pub fn contains(&self, rank: u64) -> bool {
        rank >= self.lo && self.hi.is_none_or(|h| rank < h)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(h) => format!("[{},{})", self.lo, h),
            None => format!("[{},inf)", self.lo),
        }
    }
}

pub fn default_rank_buckets() -> Vec<RankBucket> {
    let bounds = [1, 100, 1_000, 10_000, 100_000, 500_000];
    bounds
        .iter()
        .enumerate()
        .map(|(i, lo)| RankBucket {
            lo: *lo,
            hi: bounds.get(i + 1).copied(),
        })
        .collect()
}

pub const UNRANKED: &str = "unranked";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffCell {
    pub diff: i64,
    pub frequency: Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub bucket: String,
    pub total: u64,
    pub cells: Vec<DiffCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiffTable {
    pub diffs: Vec<i64>,
    pub rows: Vec<DiffRow>,
}

/// Frequency of each length diff per rank bucket. Targets without a rank,
/// or outside every bucket, land in the `unranked` row.
pub fn chain_diff_table(
    evaluations: &[(String, ChainEvaluation)],
    ranks: &BTreeMap<String, u64>,
    buckets: &[RankBucket],
) -> ChainDiffTable {
    let mut counts: Vec<BTreeMap<i64, u64>> = vec![BTreeMap::new(); buckets.len() + 1];
    let mut diffs = BTreeSet::new();
    for (target, e) in evaluations {
        let Some(d) = e.length_diff else { continue };
        let row = ranks
            .get(target)
            .and_then(|r| buckets.iter().position(|b| b.contains(*r)))
            .unwrap_or(buckets.len());
        *counts[row].entry(d).or_default() += 1;
        diffs.insert(d);
    }
    let rows = counts
        .into_iter()
        .enumerate()
        .filter(|(i, c)| *i < buckets.len() || !c.is_empty())
        .map(|(i, c)| {
            let total: u64 = c.values().sum();
            DiffRow {
                bucket: buckets.get(i).map_or_else(|| UNRANKED.to_string(), RankBucket::label),
                total,
                cells: c
                    .into_iter()
                    .map(|(diff, n)| DiffCell {
                        diff,
                        frequency: Fraction::new(n, total),
                    })
                    .collect(),
            }
        })
        .collect();
    ChainDiffTable {
        diffs: diffs.into_iter().collect(),
        rows,
    }
}

// ---- distributions ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistCell {
    pub key: Vec<u64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub dimensions: Vec<String>,
    #[serde(default)]
    pub cap: Option<u64>,
    pub total: u64,
    pub cells: Vec<DistCell>,
    #[serde(default)]
    pub summary: BTreeMap<String, Fraction>,
}

fn cells_of(counts: BTreeMap<Vec<u64>, u64>) -> Vec<DistCell> {
    counts.into_iter().map(|(key, count)| DistCell { key, count }).collect()
}

/// DNS SAN count per certificate (capped), plus the single-SAN and
/// wildcard-bearing shares.
pub fn san_distribution(stats: &[SanStats]) -> Distribution {
    let mut counts = BTreeMap::new();
    let (mut single, mut wildcard) = (0, 0);
    for s in stats {
        *counts.entry(vec![s.total_dns_sans.min(SAN_CAP) as u64]).or_default() += 1;
        single += u64::from(s.single_san);
        wildcard += u64::from(s.raw_wildcard_sans > 0);
    }
    let n = stats.len() as u64;
    Distribution {
        dimensions: vec!["dns_sans".into()],
        cap: Some(SAN_CAP as u64),
        total: n,
        cells: cells_of(counts),
        summary: BTreeMap::from([
            ("single_san".to_string(), Fraction::new(single, n)),
            ("wildcard_bearing".to_string(), Fraction::new(wildcard, n)),
        ]),
    }
}

/// Joint counts of (redirect length, unique certificates).
pub fn redirect_distribution(chains: &[RedirectChain]) -> Distribution {
    let mut counts = BTreeMap::new();
    let mut multi_cert = 0;
    for c in chains {
        let s = chain_stats(c);
        *counts.entry(vec![s.length as u64, s.unique_certs as u64]).or_default() += 1;
        multi_cert += u64::from(s.unique_certs > 1);
    }
    let n = chains.len() as u64;
    Distribution {
        dimensions: vec!["length".into(), "unique_certs".into()],
        cap: None,
        total: n,
        cells: cells_of(counts),
        summary: BTreeMap::from([("multiple_certificates".to_string(), Fraction::new(multi_cert, n))]),
    }
}

// ---- CAA ----

/// The CAA set of one target and, when the issuer was known, the match
/// result against it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaaObservation {
    pub target: String,
    pub records: Vec<CaaRecord>,
    #[serde(default)]
    pub result: Option<CaaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaaSummary {
    pub targets: u64,
    pub with_caa: Fraction,
    /// Targets with at least one RFC-conform CAA record.
    pub conform: Fraction,
    /// Conform targets whose issuer is not authorized, over conform targets
    /// with a match result.
    pub mismatch: Fraction,
    /// Records that are unparsable or have the reserved bit set.
    pub unparsable_count: u64,
    pub unparsable_targets: u64,
    pub results: BTreeMap<String, u64>,
}

pub fn caa_summary(observations: &[CaaObservation]) -> CaaSummary {
    let n = observations.len() as u64;
    let (mut with, mut conform, mut matched_conform, mut mismatch) = (0, 0, 0, 0);
    let (mut bad_records, mut bad_targets) = (0, 0);
    let mut results = BTreeMap::new();
    for o in observations {
        if o.records.is_empty() {
            continue;
        }
        with += 1;
        let bad = o
            .records
            .iter()
            .filter(|r| r.parse_status != CaaParseStatus::Ok)
            .count() as u64;
        bad_records += bad;
        bad_targets += u64::from(bad > 0);
        let ok = o.records.iter().any(CaaRecord::is_ok);
        conform += u64::from(ok);
        if let Some(r) = o.result {
            let name = serde_json::to_value(r)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            *results.entry(name).or_default() += 1;
            if ok {
                matched_conform += 1;
                mismatch += u64::from(r == CaaResult::Mismatch);
            }
        }
    }
    CaaSummary {
        targets: n,
        with_caa: Fraction::new(with, n),
        conform: Fraction::new(conform, n),
        mismatch: Fraction::new(mismatch, matched_conform),
        unparsable_count: bad_records,
        unparsable_targets: bad_targets,
        results,
    }
}

// ---- store extraction and output ----

/// Committed content of a store, in canonical order.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub analyses: Vec<(UnitKey, CertAnalysis)>,
    pub redirects: Vec<(UnitKey, RedirectRecord)>,
    pub dns: Vec<(UnitKey, DnsSnapshot)>,
}

impl ReportInputs {
    pub fn load(store: &Store) -> Result<Self, StoreError> {
        let committed = committed_units(&store.load_ledger()?);
        let mut out = ReportInputs::default();
        for env in store.read_records()? {
            let key = UnitKey::of(&env);
            if !committed.contains(&key) {
                continue;
            }
            match env.kind {
                RecordKind::ChainEvaluation => out.analyses.extend(env.payload_as().ok().map(|a| (key, a))),
                RecordKind::RedirectChain => out.redirects.extend(env.payload_as().ok().map(|r| (key, r))),
                RecordKind::DnsSnapshot => out.dns.extend(env.payload_as().ok().map(|d| (key, d))),
                _ => {}
            }
        }
        out.analyses
            .sort_by(|a, b| (&a.0, a.1.probe_index).cmp(&(&b.0, b.1.probe_index)));
        out.redirects.sort_by(|a, b| a.0.cmp(&b.0));
        out.dns.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    /// One analysis per unit: the first SNI probe's, else the first one.
    fn primary_analyses(&self) -> Vec<&CertAnalysis> {
        let mut by_unit: BTreeMap<&UnitKey, &CertAnalysis> = BTreeMap::new();
        for (k, a) in &self.analyses {
            match by_unit.get(k) {
                Some(cur) if cur.sni || !a.sni => {}
                _ => {
                    by_unit.insert(k, a);
                }
            }
        }
        by_unit.into_values().collect()
    }

    fn labels(&self) -> BTreeMap<Fingerprint, String> {
        let mut out = BTreeMap::new();
        for (_, a) in &self.analyses {
            if let Some(path) = a.evaluation.as_ref().and_then(|e| e.chosen_path.as_ref()) {
                for (fp, l) in path.iter().zip(&a.path_labels) {
                    out.entry(*fp).or_insert_with(|| l.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub misc_threshold: f64,
    pub rank_buckets: Vec<RankBucket>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            misc_threshold: DEFAULT_MISC_THRESHOLD,
            rank_buckets: default_rank_buckets(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Renders one report kind as (CSV, JSON) bytes.
pub fn render(
    kind: ReportKind,
    inputs: &ReportInputs,
    opts: &ReportOptions,
) -> Result<(Vec<u8>, Vec<u8>), ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let json = match kind {
        ReportKind::MarketShare => {
            let evals: Vec<(String, ChainEvaluation)> = inputs
                .analyses
                .iter()
                .filter_map(|(k, a)| a.evaluation.clone().map(|e| (k.target.clone(), e)))
                .collect();
            let tree = ca_market_share(&evals, &inputs.labels(), opts.misc_threshold);
            w.write_record([
                "anchor_fingerprint",
                "anchor_label",
                "intermediate_fingerprint",
                "intermediate_label",
                "unique_leaves",
                "unique_total",
                "unique_percent",
                "target_leaves",
                "target_total",
                "target_percent",
            ])?;
            for a in &tree.anchors {
                for i in &a.intermediates {
                    w.write_record([
                        a.fingerprint.clone(),
                        a.label.clone(),
                        i.fingerprint.clone(),
                        i.label.clone(),
                        i.unique_leaves.numerator.to_string(),
                        i.unique_leaves.denominator.to_string(),
                        pct(&i.unique_leaves),
                        i.target_leaves.numerator.to_string(),
                        i.target_leaves.denominator.to_string(),
                        pct(&i.target_leaves),
                    ])?;
                }
            }
            serde_json::to_vec_pretty(&tree)?
        }
        ReportKind::ChainDiff => {
            let mut ranks = BTreeMap::new();
            let evals: Vec<(String, ChainEvaluation)> = inputs
                .primary_analyses()
                .into_iter()
                .filter_map(|a| {
                    if let Some(r) = a.rank {
                        ranks.insert(a.target.clone(), r);
                    }
                    a.evaluation.clone().map(|e| (a.target.clone(), e))
                })
                .collect();
            let table = chain_diff_table(&evals, &ranks, &opts.rank_buckets);
            w.write_record(["bucket", "diff", "count", "total", "percent"])?;
            for row in &table.rows {
                for c in &row.cells {
                    w.write_record([
                        row.bucket.clone(),
                        c.diff.to_string(),
                        c.frequency.numerator.to_string(),
                        c.frequency.denominator.to_string(),
                        pct(&c.frequency),
                    ])?;
                }
            }
            serde_json::to_vec_pretty(&table)?
        }
        ReportKind::SanDist => {
            let mut by_leaf: BTreeMap<Fingerprint, SanStats> = BTreeMap::new();
            for (_, a) in &inputs.analyses {
                if let Some(s) = a.san {
                    by_leaf.entry(a.leaf).or_insert(s);
                }
            }
            let stats: Vec<SanStats> = by_leaf.into_values().collect();
            write_distribution(&mut w, &san_distribution(&stats))?
        }
        ReportKind::RedirectDist => {
            let chains: Vec<RedirectChain> = inputs.redirects.iter().filter_map(|(_, r)| r.chain.clone()).collect();
            write_distribution(&mut w, &redirect_distribution(&chains))?
        }
        ReportKind::CaaSummary => {
            let mut results: BTreeMap<&UnitKey, CaaResult> = BTreeMap::new();
            for (k, a) in &inputs.analyses {
                if let Some(v) = &a.caa {
                    results.entry(k).or_insert(v.result);
                }
            }
            let obs: Vec<CaaObservation> = inputs
                .dns
                .iter()
                .map(|(k, d)| CaaObservation {
                    target: k.target.clone(),
                    records: d.caa_records(),
                    result: results.get(k).copied(),
                })
                .collect();
            let s = caa_summary(&obs);
            w.write_record(["metric", "numerator", "denominator", "percent"])?;
            for (name, f) in [
                ("with_caa", &s.with_caa),
                ("conform", &s.conform),
                ("mismatch", &s.mismatch),
            ] {
                w.write_record([
                    name.to_string(),
                    f.numerator.to_string(),
                    f.denominator.to_string(),
                    pct(f),
                ])?;
            }
            w.write_record([
                "unparsable_records".to_string(),
                s.unparsable_count.to_string(),
                String::new(),
                String::new(),
            ])?;
            w.write_record([
                "unparsable_targets".to_string(),
                s.unparsable_targets.to_string(),
                s.targets.to_string(),
                String::new(),
            ])?;
            serde_json::to_vec_pretty(&s)?
        }
    };
    let csv = w.into_inner().map_err(|e| ReportError::Io {
        path: "<csv buffer>".into(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let mut json = json;
    json.push(b'\n');
    Ok((csv, json))
}

fn write_distribution(w: &mut csv::Writer<Vec<u8>>, d: &Distribution) -> Result<Vec<u8>, ReportError> {
    let mut header = d.dimensions.clone();
    header.extend(["count".to_string(), "total".to_string(), "percent".to_string()]);
    w.write_record(&header)?;
    for c in &d.cells {
        let mut row: Vec<String> = c.key.iter().map(u64::to_string).collect();
        let f = Fraction::new(c.count, d.total);
        row.extend([c.count.to_string(), d.total.to_string(), pct(&f)]);
        w.write_record(&row)?;
    }
    Ok(serde_json::to_vec_pretty(d)?)
}

/// Writes `report-<kind>.csv` and `report-<kind>.json` into `out_dir`.
pub fn write_report(
    store: &Store,
    kind: ReportKind,
    out_dir: &Path,
    opts: &ReportOptions,
) -> Result<(PathBuf, PathBuf), ReportError> {
    let inputs = ReportInputs::load(store)?;
    write_rendered(kind, &inputs, out_dir, opts)
}

pub fn write_rendered(
    kind: ReportKind,
    inputs: &ReportInputs,
    out_dir: &Path,
    opts: &ReportOptions,
) -> Result<(PathBuf, PathBuf), ReportError> {
    let (csv, json) = render(kind, inputs, opts)?;
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let cp = out_dir.join(format!("report-{kind}.csv"));
    let jp = out_dir.join(format!("report-{kind}.json"));
    std::fs::write(&cp, csv).map_err(io(&cp))?;
    std::fs::write(&jp, json).map_err(io(&jp))?;
    Ok((cp, jp))
}
