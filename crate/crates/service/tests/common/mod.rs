#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use fabric_core::model::{EpochSecs, ModelDelta, QosClass, ReservationSegment, TimeInterval, Urn};
use fabric_core::protocol::{DeltaStateWire, IntentDocument};
use fabric_service::clock::ManualClock;
use fabric_service::harness::{gen_topology, Fabric, Manifest, Preset};
use fabric_service::orchestrator::{Orchestrator, OrchestratorConfig};
use fabric_service::rm::ResourceManager;

pub const T: EpochSecs = 1_535_810_400;

pub fn manifest(latency_scale: f64) -> Manifest {
    gen_topology(Preset::Baseline8, 0, latency_scale).unwrap()
}

pub fn config() -> OrchestratorConfig {
    OrchestratorConfig {
        poll_interval_secs: 0.01,
        display_offset_secs: -4 * 3600,
        rollback: fabric_service::orchestrator::BackoffPolicy { base_ms: 10, factor: 2, cap_ms: 100, attempts: 5 },
        ..OrchestratorConfig::default()
    }
}

pub struct Env {
    pub clock: Arc<ManualClock>,
    pub fabric: Fabric,
    pub orch: Arc<Orchestrator>,
}

pub async fn env_with(manifest: Manifest, cfg: OrchestratorConfig) -> Env {
    let clock = Arc::new(ManualClock::new(T));
    let fabric = Fabric::launch(&manifest, clock.clone(), None).unwrap();
    let orch = Orchestrator::connect(cfg, fabric.apis(), clock.clone()).await.unwrap();
    Env { clock, fabric, orch }
}

pub async fn env() -> Env {
    env_with(manifest(0.0), config()).await
}

pub fn golden(path: &str) -> IntentDocument {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/conformance");
    fabric_core::protocol::decode(&std::fs::read(root.join(path)).unwrap()).unwrap()
}

pub fn urn(s: &str) -> Urn {
    Urn::parse(s).unwrap()
}

pub async fn settle(rm: &ResourceManager, delta_id: &str) -> DeltaStateWire {
    for _ in 0..2000 {
        let s = rm.delta_status(delta_id).unwrap().state;
        if s.is_final() {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("delta {delta_id} never settled");
}

/// Commits `mbps` of background traffic on one port directly at its RM.
pub async fn occupy(rm: &Arc<ResourceManager>, port: &str, vlan: u16, mbps: u64, interval: TimeInterval) {
    let id = format!("background-{port}-{vlan}");
    let delta = ModelDelta {
        delta_id: id.clone(),
        target_domain: rm.domain().to_owned(),
        base_model_version: rm.version(),
        addition: vec![ReservationSegment {
            connection_id: id.clone(),
            port_urn: urn(port),
            vlan,
            bandwidth: mbps,
            qos_class: QosClass::GuaranteedCapped,
            interval,
        }],
        reduction: vec![],
    };
    rm.propagate(delta).await.unwrap();
    rm.commit(&id).await.unwrap();
    assert_eq!(settle(rm, &id).await, DeltaStateWire::Committed);
}

/// Places a hold directly at an RM without committing it.
pub async fn hold(rm: &Arc<ResourceManager>, port: &str, vlan: u16, mbps: u64, interval: TimeInterval) -> String {
    let id = format!("squatter-{port}-{vlan}");
    let delta = ModelDelta {
        delta_id: id.clone(),
        target_domain: rm.domain().to_owned(),
        base_model_version: rm.version(),
        addition: vec![ReservationSegment {
            connection_id: id.clone(),
            port_urn: urn(port),
            vlan,
            bandwidth: mbps,
            qos_class: QosClass::GuaranteedCapped,
            interval,
        }],
        reduction: vec![],
    };
    rm.propagate(delta).await.unwrap();
    id
}
