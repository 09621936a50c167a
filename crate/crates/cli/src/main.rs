mod config;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use fabric_core::presets::TopologySpec;
use fabric_core::protocol::ServiceState;
use fabric_core::topology::integrate_models;
use fabric_service::api::{AuditDocument, HttpRm, RmApi};
use fabric_service::clock::SystemClock;
use fabric_service::harness::audit::{self, AuditReport};
use fabric_service::harness::batch::{run_batch, scaleout_batch, table1_batch, BatchSpec, Nbi, ServiceReport};
use fabric_service::harness::report::{check_laws, write_graph, write_report, PhaseReport, ReportFormat, LAW_TOLERANCE_MS};
use fabric_service::harness::{gen_topology, Fabric, Manifest, Preset};
use fabric_service::http::{nbi_router, rm_router, serve, HttpNbi};
use fabric_service::journal::Journal;
use fabric_service::orchestrator::{InstanceRecord, Orchestrator};
use serde::{Deserialize, Serialize};
use tracing::info;

use config::{BatchKind, CommonArgs, Settings};

const SWEEP_PERIOD: Duration = Duration::from_secs(1);

#[derive(Debug, Parser)]
#[command(name = "fabric", version, about = "Multi-domain orchestration testbed")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the RM launch manifest and the union graph for a preset.
    GenTopology,
    /// Serve every RM and an orchestrator over HTTP until interrupted.
    Launch {
        /// Northbound listen address.
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// First RM port; RMs take consecutive ports. 0 picks free ports.
        #[arg(long = "rm-port-base", default_value_t = 0)]
        rm_port_base: u16,
        /// Bearer token the RMs require.
        #[arg(long, default_value = "fabric")]
        token: String,
        /// Stop after this many seconds instead of waiting for Ctrl-C.
        #[arg(long = "for-secs")]
        for_secs: Option<u64>,
    },
    /// Drive a batch of intents and write the phase report.
    RunBatch {
        /// Orchestrator base URL; without it the fabric runs in-process.
        #[arg(long)]
        nbi: Option<String>,
        #[arg(long, value_enum)]
        batch: Option<BatchKind>,
        #[arg(long)]
        repeat: Option<usize>,
        /// Service count for the scale-out batch.
        #[arg(long)]
        services: Option<usize>,
        /// Requested bandwidth per service in Gbps.
        #[arg(long)]
        gbps: Option<u64>,
    },
    /// Re-render a `report.json` and re-check the timing laws.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
    /// Check calendar invariants and the service ledger.
    Audit {
        /// `endpoints.json` written by `launch`.
        #[arg(long, conflicts_with = "fixture")]
        endpoints: Option<PathBuf>,
        /// JSON array of RM audit documents.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Orchestrator journal to use as the service ledger.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
}

/// Written by `launch` so other verbs can find the fabric.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Endpoints {
    preset: Preset,
    seed: u64,
    nbi: String,
    token: String,
    journal: Option<PathBuf>,
    rms: BTreeMap<String, String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn manifest(s: &Settings) -> anyhow::Result<Manifest> {
    Ok(gen_topology(s.preset, s.seed, s.latency_scale)?)
}

fn gen_topology_cmd(s: &Settings) -> anyhow::Result<()> {
    let m = manifest(s)?;
    let union = integrate_models(m.rms.iter().map(|r| r.model.clone()).collect())?;
    write_json(&s.out.join("manifest.json"), &m)?;
    write_graph(&union.export_graph(), &s.out)?;
    println!(
        "{} seed={}: {} RMs, {} nodes, {} links -> {}",
        m.preset,
        m.seed,
        m.rms.len(),
        m.node_count,
        m.link_count,
        s.out.display()
    );
    Ok(())
}

async fn launch_cmd(s: &Settings, listen: SocketAddr, rm_port_base: u16, token: &str, for_secs: Option<u64>) -> anyhow::Result<()> {
    let m = manifest(s)?;
    let fabric = Fabric::launch(&m, Arc::new(SystemClock), Some(SWEEP_PERIOD)).map_err(anyhow::Error::msg)?;
    let mut rms = BTreeMap::new();
    let mut apis: Vec<Arc<dyn RmApi>> = vec![];
    for (i, rm) in fabric.rms.iter().enumerate() {
        let port = if rm_port_base == 0 { 0 } else { rm_port_base + i as u16 };
        let (addr, _) = serve(rm_router(rm.clone(), token), SocketAddr::new(listen.ip(), port)).await?;
        let base = format!("http://{addr}");
        apis.push(Arc::new(HttpRm::new(rm.domain(), base.clone(), token)));
        rms.insert(rm.domain().to_owned(), base);
    }
    let mut cfg = s.orchestrator.clone();
    cfg.journal.get_or_insert_with(|| s.out.join("journal.jsonl"));
    std::fs::create_dir_all(&s.out)?;
    let journal = cfg.journal.clone();
    let orch = Orchestrator::connect(cfg, apis, Arc::new(SystemClock)).await?;
    orch.spawn_pull_loop();
    let (addr, server) = serve(nbi_router(orch.clone()), listen).await?;
    let nbi = format!("http://{addr}");
    if orch.config().use_notify {
        orch.enable_notifications(Some(&nbi)).await.map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    let endpoints = Endpoints { preset: m.preset, seed: m.seed, nbi: nbi.clone(), token: token.to_owned(), journal, rms };
    write_json(&s.out.join("endpoints.json"), &endpoints)?;
    println!("{} seed={}: {} RMs up, orchestrator at {nbi}", m.preset, m.seed, fabric.rms.len());
    match for_secs {
        Some(n) => tokio::time::sleep(Duration::from_secs(n)).await,
        None => tokio::signal::ctrl_c().await?,
    }
    server.abort();
    Ok(())
}

fn batch_spec(s: &Settings, kind: BatchKind, repeat: usize, services: usize, gbps: u64) -> anyhow::Result<BatchSpec> {
    let mut spec = match (kind, s.preset) {
        (BatchKind::Table1, Preset::Baseline8) => table1_batch(gbps),
        (BatchKind::Scaleout, Preset::Scaleout67) => {
            scaleout_batch(TopologySpec::scaleout67(s.seed).endsite_domains, services, gbps, s.seed)
        }
        (k, p) => bail!("batch {k:?} does not run on preset {p}"),
    };
    spec.repeat = repeat;
    if let Some(c) = s.concurrency {
        spec.concurrency = c;
    }
    spec.validate().map_err(anyhow::Error::msg)?;
    Ok(spec)
}

fn summarize(services: &[ServiceReport]) -> String {
    let committed = services.iter().filter(|r| r.state == Some(ServiceState::Committed)).count();
    let terminal = services.iter().filter(|r| r.is_terminal()).count();
    format!("{} services, {terminal} terminal, {committed} committed", services.len())
}

async fn run_batch_cmd(s: &Settings, nbi: Option<&str>, spec: &BatchSpec) -> anyhow::Result<ExitCode> {
    let (report, audit) = match nbi {
        Some(url) => {
            let client = HttpNbi::new(url);
            let services = run_batch(&client, spec).await.map_err(anyhow::Error::msg)?;
            write_graph(&client.union_graph().await.map_err(|e| anyhow::anyhow!("{e}"))?, &s.out)?;
            (PhaseReport::new(s.preset.to_string(), s.seed, s.latency_scale, services, vec![]), None)
        }
        None => {
            let m = manifest(s)?;
            let fabric = Fabric::launch(&m, Arc::new(SystemClock), Some(SWEEP_PERIOD)).map_err(anyhow::Error::msg)?;
            let orch = Orchestrator::connect(s.orchestrator.clone(), fabric.apis(), Arc::new(SystemClock)).await?;
            if orch.config().use_notify {
                orch.enable_notifications(None).await.map_err(|e| anyhow::anyhow!("{e}"))?;
            }
            let services = run_batch(&orch as &dyn Nbi, spec).await.map_err(anyhow::Error::msg)?;
            write_graph(&orch.union_graph(), &s.out)?;
            let ledger = orch.ledger();
            let audit = audit::audit(&fabric.apis(), Some(&ledger)).await;
            write_json(&s.out.join("audit.json"), &audit)?;
            write_json(&s.out.join("manifest.json"), &m)?;
            (PhaseReport::new(s.preset.to_string(), s.seed, s.latency_scale, services, orch.feedback_cycles()), Some(audit))
        }
    };
    write_report(&report, &s.out, ReportFormat::Json)?;
    if s.format == ReportFormat::Csv {
        write_report(&report, &s.out, ReportFormat::Csv)?;
    }
    println!(
        "{} seed={}: {}; laws {}; audit {} -> {}",
        s.preset,
        s.seed,
        summarize(&report.services),
        if report.laws.passed { "pass" } else { "FAIL" },
        match &audit {
            Some(a) if a.passed() => "pass",
            Some(_) => "FAIL",
            None => "skipped",
        },
        s.out.display()
    );
    let ok = report.laws.passed && audit.as_ref().is_none_or(AuditReport::passed);
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn report_cmd(s: &Settings, input: &Path) -> anyhow::Result<ExitCode> {
    let mut report: PhaseReport = read_json(input)?;
    report.laws = check_laws(&report.services, &report.feedback, LAW_TOLERANCE_MS);
    let files = write_report(&report, &s.out, s.format)?;
    println!(
        "{} seed={}: {}; laws {}; propagate residual {:.1} ms, commit residual {:.1} ms, 304 ratio {:.2}",
        report.preset,
        report.seed,
        summarize(&report.services),
        if report.laws.passed { "pass" } else { "FAIL" },
        report.laws.max_propagate_residual_ms,
        report.laws.max_commit_residual_ms,
        report.laws.not_modified_ratio
    );
    for f in files {
        println!("  {}", f.display());
    }
    Ok(if report.laws.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

async fn audit_cmd(
    s: &Settings,
    endpoints: Option<&Path>,
    fixture: Option<&Path>,
    journal: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let mut journal = journal.map(Path::to_path_buf);
    let (docs, unreachable) = match (endpoints, fixture) {
        (Some(p), _) => {
            let e: Endpoints = read_json(p)?;
            if journal.is_none() {
                journal = e.journal.clone();
            }
            let apis: Vec<Arc<dyn RmApi>> = e
                .rms
                .iter()
                .map(|(d, url)| Arc::new(HttpRm::new(d, url, &e.token)) as Arc<dyn RmApi>)
                .collect();
            audit::collect(&apis).await
        }
        (None, Some(p)) => (read_json::<Vec<AuditDocument>>(p)?, vec![]),
        (None, None) => bail!("audit needs --endpoints or --fixture"),
    };
    let ledger: Option<Vec<InstanceRecord>> = match &journal {
        Some(p) => Some(Journal::replay::<InstanceRecord>(p)?.into_values().collect()),
        None => None,
    };
    let report = audit::evaluate(&docs, ledger.as_deref(), unreachable);
    write_json(&s.out.join("audit.json"), &report)?;
    println!(
        "audit {}: {} domains, {} allocations, {} violations, {} orphans, {} leaks, {} unreachable",
        if report.passed() { "pass" } else { "FAIL" },
        report.domains,
        report.allocations,
        report.violations.len(),
        report.orphans.len(),
        report.leaks.len(),
        report.unreachable.len()
    );
    for v in &report.violations {
        println!("  violation {}: {}", v.port_urn, v.reason);
    }
    for o in &report.orphans {
        println!("  orphan {} on {}", o.connection_id, o.port_urn);
    }
    for l in &report.leaks {
        println!("  leak {} of {} on {}", l.connection_id, l.instance_id, l.port_urn);
    }
    for d in &report.unreachable {
        println!("  unreachable {d}");
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

async fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let s = Settings::resolve(&cli.common)?;
    info!(preset = %s.preset, seed = s.seed, latency_scale = s.latency_scale, "settings resolved");
    match cli.command {
        Command::GenTopology => gen_topology_cmd(&s).map(|()| ExitCode::SUCCESS),
        Command::Launch { listen, rm_port_base, token, for_secs } => {
            launch_cmd(&s, listen, rm_port_base, &token, for_secs).await.map(|()| ExitCode::SUCCESS)
        }
        Command::RunBatch { nbi, batch, repeat, services, gbps } => {
            let spec = batch_spec(
                &s,
                batch.unwrap_or(s.batch),
                repeat.unwrap_or(s.repeat),
                services.unwrap_or(s.services),
                gbps.unwrap_or(s.gbps),
            )?;
            run_batch_cmd(&s, nbi.as_deref(), &spec).await
        }
        Command::Report { input } => report_cmd(&s, &input),
        Command::Audit { endpoints, fixture, journal } => {
            audit_cmd(&s, endpoints.as_deref(), fixture.as_deref(), journal.as_deref()).await
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn,fabric_service::rm=error")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
