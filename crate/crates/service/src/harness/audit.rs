//! Fabric audit: calendar invariants on every RM, cross-checked against the
//! orchestrators' service ledgers.

use std::collections::{BTreeMap, BTreeSet};

use fabric_core::calendar::{AllocationState, CalendarViolation};
use fabric_core::model::Urn;
use fabric_core::protocol::ServiceState;
use serde::{Deserialize, Serialize};

use crate::api::{AuditDocument, RmApi};
use crate::orchestrator::InstanceRecord;

/// An allocation no live service accounts for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orphan {
    pub port_urn: Urn,
    pub connection_id: String,
    pub state: AllocationState,
    /// Owning instance and its state, when the ledger knows the connection.
    pub instance: Option<(String, ServiceState)>,
}

/// A committed service segment missing from its RM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leak {
    pub instance_id: String,
    pub port_urn: Urn,
    pub connection_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub domains: usize,
    pub allocations: usize,
    pub violations: Vec<CalendarViolation>,
    pub orphans: Vec<Orphan>,
    pub leaks: Vec<Leak>,
    pub unreachable: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.orphans.is_empty() && self.leaks.is_empty() && self.unreachable.is_empty()
    }
}

pub async fn collect(rms: &[std::sync::Arc<dyn RmApi>]) -> (Vec<AuditDocument>, Vec<String>) {
    let results = futures::future::join_all(rms.iter().map(|rm| async move { (rm.domain().to_owned(), rm.audit().await) })).await;
    let mut docs = vec![];
    let mut unreachable = vec![];
    for (d, r) in results {
        match r {
            Ok(doc) => docs.push(doc),
            Err(_) => unreachable.push(d),
        }
    }
    (docs, unreachable)
}

/// Audits quiescent RM state against `ledger`. With a ledger, every
/// allocation must belong to a reserved (held only) or committed service,
/// and every committed service must be fully present.
pub fn evaluate(docs: &[AuditDocument], ledger: Option<&[InstanceRecord]>, unreachable: Vec<String>) -> AuditReport {
    let violations: Vec<CalendarViolation> = docs.iter().flat_map(|d| d.violations.iter().cloned()).collect();
    let allocations = docs.iter().map(|d| d.allocations.len()).sum();
    let mut orphans = vec![];
    let mut leaks = vec![];
    if let Some(ledger) = ledger {
        let mut owner: BTreeMap<&str, &InstanceRecord> = BTreeMap::new();
        for rec in ledger {
            for c in rec.design.iter().flat_map(|d| d.connections.iter()) {
                owner.insert(&c.connection_id, rec);
            }
        }
        let mut present: BTreeSet<(&str, &Urn)> = BTreeSet::new();
        for a in docs.iter().flat_map(|d| d.allocations.iter()) {
            let s = &a.segment;
            let rec = owner.get(s.connection_id.as_str());
            let legitimate = matches!(
                (rec.map(|r| r.state), a.state),
                (Some(ServiceState::Committed), AllocationState::Committed)
                    | (Some(ServiceState::Reserved | ServiceState::Committing), _)
            );
            if legitimate {
                present.insert((&s.connection_id, &s.port_urn));
            } else {
                orphans.push(Orphan {
                    port_urn: s.port_urn.clone(),
                    connection_id: s.connection_id.clone(),
                    state: a.state,
                    instance: rec.map(|r| (r.instance_id.clone(), r.state)),
                });
            }
        }
        for rec in ledger.iter().filter(|r| r.state == ServiceState::Committed) {
            for c in rec.design.iter().flat_map(|d| d.connections.iter()) {
                for s in &c.segments {
                    if !present.contains(&(s.connection_id.as_str(), &s.port_urn)) {
                        leaks.push(Leak {
                            instance_id: rec.instance_id.clone(),
                            port_urn: s.port_urn.clone(),
                            connection_id: s.connection_id.clone(),
                        });
                    }
                }
            }
        }
    }
    AuditReport { domains: docs.len(), allocations, violations, orphans, leaks, unreachable }
}

pub async fn audit(rms: &[std::sync::Arc<dyn RmApi>], ledger: Option<&[InstanceRecord]>) -> AuditReport {
    let (docs, unreachable) = collect(rms).await;
    evaluate(&docs, ledger, unreachable)
}
