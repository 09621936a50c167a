//! Experiment harness: topology presets, RM fleets, batch driving, reports
//! and audits.

pub mod audit;
pub mod batch;
pub mod report;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use fabric_core::model::Verbosity;
use fabric_core::presets::{baseline8, generate, GeneratedDomain, PresetError, TopologySpec};
use fabric_core::topology::integrate_models;
use serde::{Deserialize, Serialize};

use crate::api::{LocalRm, RmApi};
use crate::clock::Clock;
use crate::rm::{ResourceManager, RmConfig};

pub const DEFAULT_LATENCY_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Baseline8,
    Scaleout67,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline8" => Ok(Preset::Baseline8),
            "scaleout67" => Ok(Preset::Scaleout67),
            other => Err(format!("unknown preset {other:?}; expected baseline8 or scaleout67")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Baseline8 => "baseline8",
            Preset::Scaleout67 => "scaleout67",
        })
    }
}

/// Everything needed to launch an RM fleet, plus the generated topology's
/// size for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub preset: Preset,
    pub seed: u64,
    pub latency_scale: f64,
    pub node_count: usize,
    pub link_count: usize,
    pub rms: Vec<RmConfig>,
}

impl Manifest {
    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.rms.iter().map(|r| r.domain_id.as_str())
    }
}

pub fn preset_domains(preset: Preset, seed: u64, verbosity: Verbosity) -> Result<Vec<GeneratedDomain>, PresetError> {
    match preset {
        Preset::Baseline8 => Ok(baseline8(verbosity)),
        Preset::Scaleout67 => generate(&TopologySpec::scaleout67(seed), verbosity),
    }
}

/// Deterministic for a given preset and seed.
pub fn gen_topology(preset: Preset, seed: u64, latency_scale: f64) -> Result<Manifest, PresetError> {
    if !(latency_scale >= 0.0 && latency_scale.is_finite()) {
        return Err(PresetError::Invalid(format!("latency scale {latency_scale} must be finite and non-negative")));
    }
    let domains = preset_domains(preset, seed, Verbosity::Full)?;
    let union = integrate_models(domains.iter().map(|g| g.model.clone()).collect())
        .map_err(|e| PresetError::Invalid(e.to_string()))?;
    Ok(Manifest {
        preset,
        seed,
        latency_scale,
        node_count: union.node_count(),
        link_count: union.link_count(),
        rms: domains.into_iter().map(|g| RmConfig::for_model(g.model, g.role, latency_scale)).collect(),
    })
}

/// An in-process RM fleet sharing one clock.
pub struct Fabric {
    pub clock: Arc<dyn Clock>,
    pub rms: Vec<Arc<ResourceManager>>,
    sweepers: Vec<tokio::task::JoinHandle<()>>,
}

impl Fabric {
    /// Starts every RM of the manifest, each with an expiry sweeper when
    /// `sweep_period` is given.
    pub fn launch(manifest: &Manifest, clock: Arc<dyn Clock>, sweep_period: Option<Duration>) -> Result<Fabric, String> {
        let rms = manifest
            .rms
            .iter()
            .map(|c| ResourceManager::new(c.clone(), clock.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let sweepers = match sweep_period {
            Some(p) => rms.iter().map(|rm| rm.spawn_sweeper(p)).collect(),
            None => vec![],
        };
        Ok(Fabric { clock, rms, sweepers })
    }

    pub fn apis(&self) -> Vec<Arc<dyn RmApi>> {
        self.rms.iter().map(|rm| Arc::new(LocalRm(rm.clone())) as Arc<dyn RmApi>).collect()
    }

    pub fn rm(&self, domain: &str) -> Option<&Arc<ResourceManager>> {
        self.rms.iter().find(|r| r.domain() == domain)
    }

    pub async fn sweep_all(&self) -> usize {
        let mut n = 0;
        for rm in &self.rms {
            n += rm.sweep().await.len();
        }
        n
    }
}

impl Drop for Fabric {
    fn drop(&mut self) {
        for s in &self.sweepers {
            s.abort();
        }
    }
}
