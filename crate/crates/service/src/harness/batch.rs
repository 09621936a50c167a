//! Batch driving: intent templates, the northbound client seam and the
//! per-service phase records collected from status.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use async_trait::async_trait;
use fabric_core::model::{QosClass, Urn};
use fabric_core::presets::{dtn_urn, endsite_dtn, BASELINE8_DTNS};
use fabric_core::protocol::{
    BandwidthDoc, BandwidthUnit, ConnectionDoc, ErrorCode, ErrorEnvelope, IntentDocument, LabelDoc, ServiceResponse,
    ServiceState, ServiceStatusDocument, ServiceType, TerminalDoc,
};
use futures::stream::{self, StreamExt};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::orchestrator::Orchestrator;

/// Northbound operations the driver needs, in-process or over HTTP.
#[async_trait]
pub trait Nbi: Send + Sync {
    async fn create(&self, doc: &IntentDocument) -> Result<ServiceResponse, ErrorEnvelope>;
    async fn reserve(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope>;
    /// Synchronous commit.
    async fn commit(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope>;
    async fn cancel(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope>;
    async fn status(&self, id: &str) -> Result<ServiceStatusDocument, ErrorEnvelope>;
    /// Brings the orchestrator's view of the RMs up to date between batches.
    async fn refresh(&self) {}
}

#[async_trait]
impl Nbi for Arc<Orchestrator> {
    async fn create(&self, doc: &IntentDocument) -> Result<ServiceResponse, ErrorEnvelope> {
        Orchestrator::create(self, doc.clone()).await
    }

    async fn reserve(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope> {
        Orchestrator::reserve(self, id).await
    }

    async fn commit(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope> {
        Orchestrator::commit(self, id, false).await
    }

    async fn cancel(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope> {
        Orchestrator::cancel(self, id).await
    }

    async fn status(&self, id: &str) -> Result<ServiceStatusDocument, ErrorEnvelope> {
        Orchestrator::status(self, id)
    }

    async fn refresh(&self) {
        self.pull_once().await;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentTemplate {
    pub document: IntentDocument,
    /// Number of RMs the service is expected to touch, when known.
    #[serde(default)]
    pub expected_span: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub intents: Vec<IntentTemplate>,
    pub concurrency: usize,
    pub repeat: usize,
}

impl BatchSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.concurrency == 0 {
            return Err("concurrency must be at least 1".into());
        }
        Ok(())
    }
}

/// Phase record of one driven service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceReport {
    pub batch: usize,
    pub index: usize,
    pub alias: String,
    pub instance_id: Option<String>,
    pub state: Option<ServiceState>,
    pub span: usize,
    pub expected_span: Option<usize>,
    pub compute_ms: Option<f64>,
    pub propagate_ms: Option<f64>,
    pub propagate_per_rm_ms: BTreeMap<String, f64>,
    pub commit_ms: Option<f64>,
    pub commit_per_rm_ms: BTreeMap<String, f64>,
    pub wall_ms: f64,
    pub error: Option<ErrorCode>,
}

impl ServiceReport {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self.state,
            Some(ServiceState::Committed | ServiceState::Failed | ServiceState::Expired | ServiceState::Cancelled | ServiceState::ComputeFailed)
        )
    }
}

pub fn terminal(uri: Urn) -> TerminalDoc {
    TerminalDoc { uri, label: LabelDoc::Any }
}

/// Single-connection intent between or among `terminals`. More than two
/// terminals make a multipoint bridge.
pub fn intent(alias: &str, terminals: Vec<Urn>, gbps: u64) -> IntentDocument {
    let service_type =
        if terminals.len() > 2 { ServiceType::MultiPointVlanBridge } else { ServiceType::MultiPathP2pVlan };
    IntentDocument {
        service_type,
        service_alias: alias.to_owned(),
        connections: vec![ConnectionDoc {
            name: "connection 1".into(),
            terminals: terminals.into_iter().map(terminal).collect(),
            bandwidth: BandwidthDoc {
                qos_class: QosClass::GuaranteedCapped,
                capacity: Some(gbps),
                unit: Some(BandwidthUnit::Gbps),
            },
            schedule: None,
        }],
        queries: None,
    }
}

pub fn baseline8_dtn(domain: &str) -> Urn {
    let (d, local) = BASELINE8_DTNS.iter().find(|(d, _)| *d == domain).expect("baseline8 end site");
    dtn_urn(d, local)
}

/// The six services of the eight-RM experiment, spanning 3 to 8 RMs.
pub fn table1_batch(gbps: u64) -> BatchSpec {
    let cases: [(&str, &[&str], usize); 6] = [
        ("umd-fnal", &["umd.edu", "fnal.gov"], 3),
        ("nersc-fnal", &["nersc.gov", "fnal.gov"], 4),
        ("nersc-caltech", &["nersc.gov", "caltech.edu"], 5),
        ("mp-nersc-caltech-anl", &["nersc.gov", "caltech.edu", "anl.gov"], 6),
        ("mp-nersc-caltech-anl-fnal", &["nersc.gov", "caltech.edu", "anl.gov", "fnal.gov"], 7),
        ("mp-all-dtns", &["nersc.gov", "caltech.edu", "anl.gov", "fnal.gov", "umd.edu"], 8),
    ];
    BatchSpec {
        intents: cases
            .iter()
            .map(|(alias, sites, span)| IntentTemplate {
                document: intent(alias, sites.iter().map(|s| baseline8_dtn(s)).collect(), gbps),
                expected_span: Some(*span),
            })
            .collect(),
        concurrency: 6,
        repeat: 1,
    }
}

/// `count` point-to-point services between distinct, randomly chosen end
/// sites of the scale-out preset, all requested at once.
pub fn scaleout_batch(endsites: usize, count: usize, gbps: u64, seed: u64) -> BatchSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<usize> = (0..endsites).collect();
    let intents = (0..count)
        .map(|k| {
            let pair: Vec<usize> = sites.choose_multiple(&mut rng, 2).copied().collect();
            IntentTemplate {
                document: intent(
                    &format!("soak-{k:02}"),
                    vec![endsite_dtn(pair[0], 0), endsite_dtn(pair[1], 0)],
                    gbps,
                ),
                expected_span: None,
            }
        })
        .collect();
    BatchSpec { intents, concurrency: count.max(1), repeat: 1 }
}

async fn drive(nbi: &dyn Nbi, batch: usize, index: usize, t: &IntentTemplate) -> ServiceReport {
    let started = Instant::now();
    let mut report = ServiceReport {
        batch,
        index,
        alias: t.document.service_alias.clone(),
        expected_span: t.expected_span,
        ..ServiceReport::default()
    };
    let id = match nbi.create(&t.document).await {
        Ok(r) => {
            if let Some(e) = &r.error {
                report.error = Some(e.code);
            }
            r.instance_id
        }
        Err(e) => {
            report.error = Some(e.code);
            report.wall_ms = started.elapsed().as_secs_f64() * 1000.0;
            return report;
        }
    };
    let state = nbi.status(&id).await.map(|s| s.state).ok();
    if state == Some(ServiceState::Computed) {
        match nbi.reserve(&id).await {
            Ok(_) => {
                if let Err(e) = nbi.commit(&id).await {
                    report.error = Some(e.code);
                }
            }
            Err(e) => report.error = Some(e.code),
        }
    }
    if let Ok(s) = nbi.status(&id).await {
        report.state = Some(s.state);
        report.span = s.deltas.len();
        report.compute_ms = s.phase_timings.compute_ms;
        report.propagate_ms = s.phase_timings.propagate_ms;
        report.propagate_per_rm_ms = s.phase_timings.propagate_per_rm_ms;
        report.commit_ms = s.phase_timings.commit_ms;
        report.commit_per_rm_ms = s.phase_timings.commit_per_rm_ms;
        if report.error.is_none() {
            report.error = s.error.map(|e| e.code);
        }
    }
    report.instance_id = Some(id);
    report.wall_ms = started.elapsed().as_secs_f64() * 1000.0;
    report
}

/// Drives every intent through create, reserve and synchronous commit at
/// the given concurrency; repeats start after the previous batch settled.
pub async fn run_batch(nbi: &dyn Nbi, spec: &BatchSpec) -> Result<Vec<ServiceReport>, String> {
    spec.validate()?;
    let mut out = Vec::new();
    for batch in 0..spec.repeat {
        let mut reports: Vec<ServiceReport> = stream::iter(spec.intents.iter().enumerate())
            .map(|(i, t)| drive(nbi, batch, i, t))
            .buffer_unordered(spec.concurrency)
            .collect()
            .await;
        reports.sort_by_key(|r| r.index);
        out.extend(reports);
        nbi.refresh().await;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_targets_three_through_eight() {
        let b = table1_batch(1);
        let spans: Vec<usize> = b.intents.iter().filter_map(|t| t.expected_span).collect();
        assert_eq!(spans, vec![3, 4, 5, 6, 7, 8]);
        assert_eq!(b.intents[5].document.service_type, ServiceType::MultiPointVlanBridge);
        assert_eq!(b.intents[0].document.service_type, ServiceType::MultiPathP2pVlan);
    }

    #[test]
    fn scaleout_pairs_are_distinct_sites() {
        let b = scaleout_batch(25, 20, 1, 3);
        assert_eq!(b.intents.len(), 20);
        for t in &b.intents {
            let ts = &t.document.connections[0].terminals;
            assert_ne!(ts[0].uri.domain(), ts[1].uri.domain());
        }
        assert_eq!(b, scaleout_batch(25, 20, 1, 3));
    }

    #[test]
    fn zero_concurrency_is_invalid() {
        let mut b = table1_batch(1);
        b.concurrency = 0;
        assert!(b.validate().is_err());
    }
}
