//! Settings file plus flag overrides.

use std::path::{Path, PathBuf};

use anyhow::Context;
use fabric_service::harness::report::ReportFormat;
use fabric_service::harness::{Preset, DEFAULT_LATENCY_SCALE};
use fabric_service::orchestrator::OrchestratorConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BatchKind {
    /// Six services spanning 3 to 8 RMs (baseline8 only).
    Table1,
    /// Simultaneous point-to-point services between random end sites
    /// (scaleout67 only).
    Scaleout,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSection {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub latency_scale: Option<f64>,
    pub concurrency: Option<usize>,
    pub repeat: Option<usize>,
    pub services: Option<usize>,
    pub gbps: Option<u64>,
    pub batch: Option<BatchKind>,
    pub out: Option<PathBuf>,
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub harness: HarnessSection,
    pub orchestrator: OrchestratorConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<FileConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Flags shared by every verb; each overrides the settings file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// TOML settings file with `[harness]` and `[orchestrator]` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub preset: Option<Preset>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    #[arg(long = "latency-scale", global = true)]
    pub latency_scale: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub preset: Preset,
    pub seed: u64,
    pub latency_scale: f64,
    pub concurrency: Option<usize>,
    pub repeat: usize,
    pub services: usize,
    pub gbps: u64,
    pub batch: BatchKind,
    pub out: PathBuf,
    pub format: ReportFormat,
    pub orchestrator: OrchestratorConfig,
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> anyhow::Result<Settings> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let h = file.harness;
        let preset = args.preset.or(h.preset).unwrap_or(Preset::Baseline8);
        let batch = h.batch.unwrap_or(match preset {
            Preset::Baseline8 => BatchKind::Table1,
            Preset::Scaleout67 => BatchKind::Scaleout,
        });
        let s = Settings {
            preset,
            seed: args.seed.or(h.seed).unwrap_or(0),
            latency_scale: args.latency_scale.or(h.latency_scale).unwrap_or(DEFAULT_LATENCY_SCALE),
            concurrency: args.concurrency.or(h.concurrency),
            repeat: h.repeat.unwrap_or(1),
            services: h.services.unwrap_or(20),
            gbps: h.gbps.unwrap_or(1),
            batch,
            out: args.out.clone().or(h.out).unwrap_or_else(|| PathBuf::from("out")),
            format: args.format.or(h.format).unwrap_or(ReportFormat::Csv),
            orchestrator: file.orchestrator,
        };
        s.orchestrator.validate().map_err(anyhow::Error::msg)?;
        if s.concurrency == Some(0) {
            anyhow::bail!("concurrency must be at least 1");
        }
        Ok(s)
    }
}
