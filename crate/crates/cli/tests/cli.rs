use std::path::Path;
use std::process::{Command, Output};

use fabric_core::calendar::{Allocation, AllocationState};
use fabric_core::model::{QosClass, ReservationSegment, TimeInterval, Urn};
use fabric_service::api::AuditDocument;

fn fabric(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fabric")).args(args).output().expect("fabric runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn gen_topology_reports_scaleout_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fabric(&["gen-topology", "--preset", "scaleout67", "--seed", "7", "--out", out]);
    assert!(o.status.success(), "{o:?}");
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["rms"].as_array().unwrap().len(), 67);
    let g = json(&dir.path().join("graph.json"));
    assert_eq!(g["nodes"].as_array().unwrap().len() as u64, m["node_count"].as_u64().unwrap());
}

#[test]
fn run_batch_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("fabric.toml");
    std::fs::write(&cfg, "[harness]\nseed = 5\nlatency_scale = 0.005\n\n[orchestrator]\npoll_interval_secs = 0.05\n").unwrap();
    let run = dir.path().join("run");
    let o = fabric(&["run-batch", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("6 services, 6 terminal, 6 committed; laws pass; audit pass"), "{}", stdout(&o));
    for f in ["services.csv", "rm_phases.csv", "feedback.csv", "laws.json", "report.json", "graph.json", "audit.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let report = json(&run.join("report.json"));
    assert_eq!(report["seed"], 5);
    let spans: Vec<u64> = report["services"].as_array().unwrap().iter().map(|s| s["span"].as_u64().unwrap()).collect();
    assert_eq!(spans, vec![3, 4, 5, 6, 7, 8]);

    let again = dir.path().join("again");
    let o = fabric(&[
        "report",
        "--input",
        run.join("report.json").to_str().unwrap(),
        "--format",
        "csv",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(
        std::fs::read_to_string(again.join("services.csv")).unwrap(),
        std::fs::read_to_string(run.join("services.csv")).unwrap()
    );
}

#[test]
fn mismatched_batch_and_preset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = fabric(&["run-batch", "--batch", "scaleout", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not run on preset baseline8"));
}

#[test]
fn audit_names_the_orphaned_port() {
    let dir = tempfile::tempdir().unwrap();
    let port = "urn:ogf:network:es.net:2013:sunn:to-cenic.net";
    let doc = AuditDocument {
        domain: "es.net".into(),
        version: 3,
        allocations: vec![Allocation {
            segment: ReservationSegment {
                connection_id: "nobody/connection 1".into(),
                port_urn: Urn::parse(port).unwrap(),
                vlan: 1780,
                bandwidth: 1000,
                qos_class: QosClass::GuaranteedCapped,
                interval: TimeInterval { start: 0, end: 60 },
            },
            state: AllocationState::Committed,
            hold_expires_at: None,
            delta_id: None,
        }],
        violations: vec![],
    };
    let fixture = dir.path().join("fixture.json");
    std::fs::write(&fixture, serde_json::to_vec(&vec![doc]).unwrap()).unwrap();
    let journal = dir.path().join("journal.jsonl");
    std::fs::write(&journal, "").unwrap();

    let out = dir.path().join("audit");
    let args = ["audit", "--fixture", fixture.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let o = fabric(&args);
    assert!(o.status.success(), "without a ledger only calendar invariants apply: {o:?}");

    let o = fabric(&[&args[..], &["--journal", journal.to_str().unwrap()]].concat());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains(&format!("orphan nobody/connection 1 on {port}")), "{}", stdout(&o));
    assert_eq!(json(&out.join("audit.json"))["orphans"].as_array().unwrap().len(), 1);
}
