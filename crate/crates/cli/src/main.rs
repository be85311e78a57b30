use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use pkiscope_core::analysis::{analyze_store, AnalysisContext};
use pkiscope_core::clock::{Clock, SystemClock};
use pkiscope_core::net::{DirectDialer, DnsResolver, NetContext};
use pkiscope_core::orchestrator::{
    compile_plan, create_store, execute, resume, ExecuteOptions, ExecuteReport, MeasurementPlan, PlanConfig, Runtime,
};
use pkiscope_core::report::{write_report, ReportKind, ReportOptions};
use pkiscope_core::storage::{Store, StoreOptions};
use pkiscope_core::targets::{
    dedupe_and_flag, extract_ct_sans, load_public_suffixes, parse_hitlist, read_jsonl_file, write_jsonl, HitlistFormat,
    Provenance, PublicSuffixTable,
};
use pkiscope_core::x509::{load_cert_corpus, IdentifierMap, TrustStore};

#[derive(Parser)]
#[command(name = "pkiscope", version, about = "Web PKI measurement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalise a hit list or certificate corpus into a target list (JSON Lines).
    Ingest {
        /// Hit list file, or a directory of certificates for `ct-corpus`.
        list: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::RankCommaName)]
        format: Format,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Public suffix list used to flag names sharing a registrable domain.
        #[arg(long)]
        psl: Option<PathBuf>,
        /// Provenance label recorded with the list.
        #[arg(long)]
        source: Option<String>,
        /// Emit the base name of wildcard SANs (ct-corpus only).
        #[arg(long)]
        wildcard_bases: bool,
    },
    /// Execute a plan into a new store.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        psl: Option<PathBuf>,
    },
    /// Continue an interrupted run.
    Resume {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        psl: Option<PathBuf>,
    },
    /// Write chain analyses for committed units that have none.
    Analyze {
        #[arg(long)]
        store: PathBuf,
        /// Overrides the trust store named in the plan.
        #[arg(long)]
        trust_store: Option<PathBuf>,
        /// Overrides the identifier map named in the plan.
        #[arg(long)]
        identifier_map: Option<PathBuf>,
        #[arg(long)]
        psl: Option<PathBuf>,
    },
    /// Render a report as CSV and JSON.
    Report {
        #[arg(long)]
        store: PathBuf,
        /// Report kind, or `all`.
        #[arg(long)]
        kind: String,
        /// Output directory; defaults to the store directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        misc_threshold: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    RankCommaName,
    NameOnly,
    CtCorpus,
}

enum Failure {
    Config(anyhow::Error),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

trait ConfigContext<T> {
    fn config(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ConfigContext<T> for Result<T, E> {
    fn config(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into().context(what())))
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Exit {
    Success,
    Partial,
}

fn main() -> ExitCode {
    let level = std::env::var("PKISCOPE_LOG")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(tracing::Level::WARN);
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Exit::Success) => ExitCode::SUCCESS,
        Ok(Exit::Partial) => ExitCode::from(2),
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<Exit, Failure> {
    match cmd {
        Command::Ingest {
            list,
            format,
            out,
            psl,
            source,
            wildcard_bases,
        } => ingest(&list, format, out.as_deref(), psl.as_deref(), source, wildcard_bases),
        Command::Run { plan, out, psl } => run(&plan, &out, psl.as_deref(), false),
        Command::Resume { plan, out, psl } => run(&plan, &out, psl.as_deref(), true),
        Command::Analyze {
            store,
            trust_store,
            identifier_map,
            psl,
        } => analyze(&store, trust_store, identifier_map, psl.as_deref()),
        Command::Report {
            store,
            kind,
            out,
            misc_threshold,
        } => report(&store, &kind, out, misc_threshold),
    }
}

fn load_psl(path: Option<&Path>) -> Result<Option<PublicSuffixTable>, Failure> {
    let Some(path) = path else { return Ok(None) };
    let raw = std::fs::read_to_string(path).config(|| format!("reading {}", path.display()))?;
    let table = load_public_suffixes(&raw, None).config(|| format!("parsing {}", path.display()))?;
    Ok(Some(table))
}

fn ingest(
    input: &Path,
    format: Format,
    out: Option<&Path>,
    psl: Option<&Path>,
    source: Option<String>,
    wildcard_bases: bool,
) -> Result<Exit, Failure> {
    let provenance = Provenance {
        source: source.unwrap_or_else(|| input.display().to_string()),
        retrieved_at: SystemClock.now(),
    };
    let (list, problems) = match format {
        Format::CtCorpus => {
            let corpus = load_cert_corpus(input).config(|| format!("reading {}", input.display()))?;
            for (file, e) in &corpus.failures {
                eprintln!("{file}: {e}");
            }
            let x = extract_ct_sans(&corpus.certificates, provenance, wildcard_bases);
            eprintln!(
                "{} certificates, {} wildcard SANs, {} IP SANs",
                x.certificates,
                x.wildcard_sans,
                x.ip_sans.len()
            );
            (x.list, corpus.failures.len())
        }
        Format::RankCommaName | Format::NameOnly => {
            let raw = std::fs::read_to_string(input).config(|| format!("reading {}", input.display()))?;
            let f = if matches!(format, Format::NameOnly) {
                HitlistFormat::NameOnly
            } else {
                HitlistFormat::RankCommaName
            };
            let parsed = parse_hitlist(&raw, f, provenance);
            for e in &parsed.errors {
                eprintln!("{}:{}: {}", input.display(), e.line, e.reason);
            }
            (parsed.list, parsed.skipped)
        }
    };
    let list = match load_psl(psl)? {
        Some(table) => dedupe_and_flag(list, &table),
        None => list,
    };
    match out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(f);
            write_jsonl(&list, &mut w)
                .and_then(|_| w.flush())
                .context("writing targets")?;
        }
        None => write_jsonl(&list, std::io::stdout().lock()).context("writing targets")?,
    }
    eprintln!("{} targets, {problems} skipped", list.len());
    Ok(if problems > 0 { Exit::Partial } else { Exit::Success })
}

/// Paths inside a plan document are relative to the document.
fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_plan(path: &Path) -> Result<MeasurementPlan, Failure> {
    let text = std::fs::read_to_string(path).config(|| format!("reading {}", path.display()))?;
    let mut cfg: PlanConfig = serde_json::from_str(&text).config(|| format!("parsing {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let targets_path = cfg
        .targets
        .as_ref()
        .map(|t| relative_to(base, t))
        .ok_or_else(|| Failure::Config(anyhow!("{}: plan names no target list", path.display())))?;
    cfg.trust_store = cfg.trust_store.map(|p| relative_to(base, &p));
    cfg.identifier_map = cfg.identifier_map.map(|p| relative_to(base, &p));
    let provenance = Provenance {
        source: targets_path.display().to_string(),
        retrieved_at: SystemClock.now(),
    };
    let targets =
        read_jsonl_file(&targets_path, provenance).config(|| format!("reading {}", targets_path.display()))?;
    compile_plan(&cfg, targets).config(|| format!("compiling {}", path.display()))
}

fn analysis_context(
    trust: Option<&Path>,
    identifiers: Option<&Path>,
    psl: Option<&Path>,
) -> Result<Option<AnalysisContext>, Failure> {
    let Some(trust) = trust else { return Ok(None) };
    let trust = TrustStore::load(trust).config(|| format!("loading trust store {}", trust.display()))?;
    let identifier_map = match identifiers {
        Some(p) => {
            let raw = std::fs::read_to_string(p).config(|| format!("reading {}", p.display()))?;
            IdentifierMap::from_csv(&raw).config(|| format!("parsing {}", p.display()))?
        }
        None => IdentifierMap::default(),
    };
    Ok(Some(AnalysisContext {
        trust: Some(trust),
        psl: load_psl(psl)?,
        identifier_map,
        oid_table: Default::default(),
    }))
}

fn runtime(plan: &MeasurementPlan, analysis: Option<AnalysisContext>) -> Runtime {
    Runtime {
        net: NetContext {
            dialer: Arc::new(DirectDialer),
            resolver: Arc::new(DnsResolver {
                server: plan.resolver,
                timeout: plan.dns.timeout,
            }),
            clock: Arc::new(SystemClock),
        },
        analysis,
    }
}

fn summarize(report: &ExecuteReport) -> Exit {
    for (epoch, counts) in report.ledger.epochs.keys().map(|e| (e, report.ledger.counts(*e))) {
        let parts: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        eprintln!("epoch {epoch}: {}", parts.join(" "));
    }
    if report.failures().is_empty() && !report.aborted {
        Exit::Success
    } else {
        Exit::Partial
    }
}

fn run(plan_path: &Path, out: &Path, psl: Option<&Path>, resuming: bool) -> Result<Exit, Failure> {
    let plan = load_plan(plan_path)?;
    let ctx = analysis_context(plan.trust_store.as_deref(), plan.identifier_map.as_deref(), psl)?;
    let rt = runtime(&plan, ctx);
    let report = if resuming {
        let store = Store::open(out, StoreOptions::default(), SystemClock.now())
            .with_context(|| format!("opening {}", out.display()))?;
        resume(&plan, &store, &rt, &ExecuteOptions::default()).map_err(|e| match e {
            pkiscope_core::orchestrator::ExecError::PlanMismatch { .. } => Failure::Config(e.into()),
            e => Failure::Other(e.into()),
        })?
    } else {
        if out.join("manifest.json").exists() {
            return Err(Failure::Config(anyhow!(
                "{} already holds a store; use resume",
                out.display()
            )));
        }
        let store = create_store(out, &plan, &rt, StoreOptions::default())
            .with_context(|| format!("creating {}", out.display()))?;
        execute(&plan, &store, &rt, &ExecuteOptions::default()).context("executing plan")?
    };
    Ok(summarize(&report))
}

fn analyze(
    dir: &Path,
    trust: Option<PathBuf>,
    identifiers: Option<PathBuf>,
    psl: Option<&Path>,
) -> Result<Exit, Failure> {
    let store =
        Store::open(dir, StoreOptions::default(), SystemClock.now()).config(|| format!("opening {}", dir.display()))?;
    let plan: Option<MeasurementPlan> = serde_json::from_value(store.manifest().plan).ok();
    let trust = trust.or_else(|| plan.as_ref().and_then(|p| p.trust_store.clone()));
    let identifiers = identifiers.or_else(|| plan.as_ref().and_then(|p| p.identifier_map.clone()));
    let ctx = analysis_context(trust.as_deref(), identifiers.as_deref(), psl)?
        .ok_or_else(|| Failure::Config(anyhow!("no trust store given or named in the plan")))?;
    let n = analyze_store(&store, &ctx, &SystemClock).context("analysing store")?;
    eprintln!("{n} analyses written");
    Ok(Exit::Success)
}

fn report(dir: &Path, kind: &str, out: Option<PathBuf>, misc: Option<f64>) -> Result<Exit, Failure> {
    let kinds: Vec<ReportKind> = if kind == "all" {
        ReportKind::ALL.to_vec()
    } else {
        vec![kind.parse().map_err(|e: String| Failure::Config(anyhow!(e)))?]
    };
    let mut opts = ReportOptions::default();
    if let Some(m) = misc {
        if !(0.0..1.0).contains(&m) {
            return Err(Failure::Config(anyhow!("misc threshold must be in [0, 1)")));
        }
        opts.misc_threshold = m;
    }
    let store =
        Store::open(dir, StoreOptions::default(), SystemClock.now()).config(|| format!("opening {}", dir.display()))?;
    let out = out.unwrap_or_else(|| dir.to_path_buf());
    for k in kinds {
        let (csv, json) = write_report(&store, k, &out, &opts).with_context(|| format!("writing {k}"))?;
        println!("{}", csv.display());
        println!("{}", json.display());
    }
    Ok(Exit::Success)
}
