//! Phase reports: per-service and per-RM tables plus the timing-law checks.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fabric_core::topology::GraphDocument;
use serde::{Deserialize, Serialize};

use super::batch::ServiceReport;
use crate::orchestrator::FeedbackCycle;

/// Tolerance for the sum and max laws when no poll quantization applies.
pub const LAW_TOLERANCE_MS: f64 = 1_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format {other:?}; expected csv or json")),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawCheck {
    pub batch: usize,
    pub alias: String,
    pub sum_propagate_per_rm_ms: f64,
    pub propagate_ms: f64,
    pub max_commit_per_rm_ms: f64,
    pub commit_ms: f64,
}

impl LawCheck {
    /// Measured total minus the sum of per-RM propagate times.
    pub fn propagate_residual_ms(&self) -> f64 {
        self.propagate_ms - self.sum_propagate_per_rm_ms
    }

    /// Measured total minus the slowest per-RM commit.
    pub fn commit_residual_ms(&self) -> f64 {
        self.commit_ms - self.max_commit_per_rm_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawSummary {
    pub tolerance_ms: f64,
    pub services: Vec<LawCheck>,
    pub max_propagate_residual_ms: f64,
    pub max_commit_residual_ms: f64,
    /// Largest gap between a pull cycle's total and max(gen+pull) + integrate.
    pub max_feedback_residual_ms: f64,
    pub pulls: usize,
    pub not_modified: usize,
    pub not_modified_ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub preset: String,
    pub seed: u64,
    pub latency_scale: f64,
    pub services: Vec<ServiceReport>,
    pub feedback: Vec<FeedbackCycle>,
    pub laws: LawSummary,
}

impl PhaseReport {
    pub fn new(
        preset: impl Into<String>,
        seed: u64,
        latency_scale: f64,
        services: Vec<ServiceReport>,
        feedback: Vec<FeedbackCycle>,
    ) -> PhaseReport {
        let laws = check_laws(&services, &feedback, LAW_TOLERANCE_MS);
        PhaseReport { preset: preset.into(), seed, latency_scale, services, feedback, laws }
    }
}

/// Checks the additive propagate law, the max commit law (the commit total
/// may exceed the slowest RM only by detection overhead, never undercut it)
/// and the feedback composition law.
pub fn check_laws(services: &[ServiceReport], feedback: &[FeedbackCycle], tolerance_ms: f64) -> LawSummary {
    let checks: Vec<LawCheck> = services
        .iter()
        .filter_map(|s| {
            Some(LawCheck {
                batch: s.batch,
                alias: s.alias.clone(),
                sum_propagate_per_rm_ms: s.propagate_per_rm_ms.values().sum(),
                propagate_ms: s.propagate_ms?,
                max_commit_per_rm_ms: s.commit_per_rm_ms.values().copied().fold(0.0, f64::max),
                commit_ms: s.commit_ms?,
            })
        })
        .collect();
    let max_p = checks.iter().map(|c| c.propagate_residual_ms().abs()).fold(0.0, f64::max);
    let max_c = checks.iter().map(|c| c.commit_residual_ms()).fold(0.0, f64::max);
    let undercut = checks.iter().any(|c| c.commit_residual_ms() < -tolerance_ms);
    let max_f = feedback
        .iter()
        .map(|f| (f.total_ms - (f.max_pull_ms + f.integrate_ms)).abs())
        .fold(0.0, f64::max);
    let pulls: usize = feedback.iter().map(|f| f.modified + f.not_modified).sum();
    let not_modified: usize = feedback.iter().map(|f| f.not_modified).sum();
    LawSummary {
        tolerance_ms,
        max_propagate_residual_ms: max_p,
        max_commit_residual_ms: max_c,
        max_feedback_residual_ms: max_f,
        pulls,
        not_modified,
        not_modified_ratio: if pulls == 0 { 0.0 } else { not_modified as f64 / pulls as f64 },
        passed: max_p <= tolerance_ms && !undercut && max_f <= tolerance_ms,
        services: checks,
    }
}

fn io_err(e: impl std::error::Error + Send + Sync + 'static) -> std::io::Error {
    std::io::Error::other(e)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

/// Writes the report into `dir` and returns the files written. CSV output
/// is `services.csv`, `rm_phases.csv` and `feedback.csv`; JSON output is
/// `report.json`. `laws.json` is written in both cases.
pub fn write_report(report: &PhaseReport, dir: &Path, format: ReportFormat) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = vec![];
    match format {
        ReportFormat::Json => {
            let p = dir.join("report.json");
            std::fs::write(&p, serde_json::to_vec_pretty(report).map_err(io_err)?)?;
            written.push(p);
        }
        ReportFormat::Csv => {
            let p = dir.join("services.csv");
            let mut w = csv::Writer::from_path(&p).map_err(io_err)?;
            w.write_record([
                "preset", "seed", "batch", "index", "alias", "instance_id", "state", "span", "expected_span",
                "compute_ms", "propagate_ms", "commit_ms", "wall_ms", "error",
            ])
            .map_err(io_err)?;
            for s in &report.services {
                w.write_record([
                    report.preset.clone(),
                    report.seed.to_string(),
                    s.batch.to_string(),
                    s.index.to_string(),
                    s.alias.clone(),
                    s.instance_id.clone().unwrap_or_default(),
                    s.state.map(|x| serde_json::to_value(x).expect("state serializes").as_str().unwrap_or_default().to_owned()).unwrap_or_default(),
                    s.span.to_string(),
                    s.expected_span.map(|x| x.to_string()).unwrap_or_default(),
                    opt(s.compute_ms),
                    opt(s.propagate_ms),
                    opt(s.commit_ms),
                    format!("{:.3}", s.wall_ms),
                    s.error.map(|e| e.to_string()).unwrap_or_default(),
                ])
                .map_err(io_err)?;
            }
            w.flush()?;
            written.push(p);

            let p = dir.join("rm_phases.csv");
            let mut w = csv::Writer::from_path(&p).map_err(io_err)?;
            w.write_record(["batch", "alias", "domain", "propagate_ms", "commit_ms"]).map_err(io_err)?;
            for s in &report.services {
                let domains: BTreeSet<&String> =
                    s.propagate_per_rm_ms.keys().chain(s.commit_per_rm_ms.keys()).collect();
                for d in domains {
                    w.write_record([
                        s.batch.to_string(),
                        s.alias.clone(),
                        d.clone(),
                        opt(s.propagate_per_rm_ms.get(d).copied()),
                        opt(s.commit_per_rm_ms.get(d).copied()),
                    ])
                    .map_err(io_err)?;
                }
            }
            w.flush()?;
            written.push(p);

            let p = dir.join("feedback.csv");
            let mut w = csv::Writer::from_path(&p).map_err(io_err)?;
            w.write_record(["cycle", "max_pull_ms", "integrate_ms", "total_ms", "modified", "not_modified", "unreachable"])
                .map_err(io_err)?;
            for (i, f) in report.feedback.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    format!("{:.3}", f.max_pull_ms),
                    format!("{:.3}", f.integrate_ms),
                    format!("{:.3}", f.total_ms),
                    f.modified.to_string(),
                    f.not_modified.to_string(),
                    f.unreachable.join(" "),
                ])
                .map_err(io_err)?;
            }
            w.flush()?;
            written.push(p);
        }
    }
    let p = dir.join("laws.json");
    std::fs::write(&p, serde_json::to_vec_pretty(&report.laws).map_err(io_err)?)?;
    written.push(p);
    Ok(written)
}

/// Node-link JSON of the union graph.
pub fn write_graph(graph: &GraphDocument, dir: &Path) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join("graph.json");
    std::fs::write(&p, serde_json::to_vec_pretty(graph).map_err(io_err)?)?;
    Ok(p)
}
