//! Emulated resource manager for one domain.
//!
//! Mutations go through a single async lock that is held across the
//! injected propagate latency, so one RM adjudicates one delta at a time.
//! Model reads and delta status reads use snapshots and never wait on it.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use fabric_core::calendar::{Allocation, AllocationState, CalendarError, ReservationCalendar};
use fabric_core::model::{
    DomainModel, EpochSecs, ModelDelta, PortUsage, QosClass, ReservationSegment, Urn, Verbosity,
};
use fabric_core::presets::DomainRole;
use fabric_core::protocol::{
    CommitAck, DeltaRecord, DeltaStateWire, ErrorCode, ErrorEnvelope, EventKind, Notification, PropagateResponse,
    PropagateStatus,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex as AsyncMutex;
use tracing::{debug, warn};

use crate::api::{AuditDocument, ModelFetch, NotifySink};
use crate::clock::Clock;

pub const DEFAULT_HOLD_SECS: i64 = 120;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmConfig {
    pub domain_id: String,
    pub role: DomainRole,
    /// Initial topology. Its reservations are loaded as committed state.
    pub model: DomainModel,
    pub verbosity: Verbosity,
    pub model_gen_latency_ms: u64,
    pub propagate_latency_ms: u64,
    pub commit_latency_ms: u64,
    pub hold_duration_secs: i64,
    pub notify_enabled: bool,
}

/// Unscaled per-role latencies in milliseconds: (model generation,
/// propagate, commit).
pub fn role_latencies(role: DomainRole) -> (u64, u64, u64) {
    match role {
        DomainRole::Network => (2_000, 11_200, 30_000),
        DomainRole::EndSite => (500, 300, 1_000),
    }
}

impl RmConfig {
    pub fn for_model(model: DomainModel, role: DomainRole, latency_scale: f64) -> RmConfig {
        let (gen, prop, commit) = role_latencies(role);
        let scale = |ms: u64| (ms as f64 * latency_scale).round() as u64;
        RmConfig {
            domain_id: model.domain_id.clone(),
            role,
            verbosity: model.verbosity,
            model,
            model_gen_latency_ms: scale(gen),
            propagate_latency_ms: scale(prop),
            commit_latency_ms: scale(commit),
            hold_duration_secs: DEFAULT_HOLD_SECS,
            notify_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hold_duration_secs <= 0 {
            return Err(format!("{}: hold_duration_secs must be positive", self.domain_id));
        }
        if self.model.domain_id != self.domain_id {
            return Err(format!("{}: model belongs to {}", self.domain_id, self.model.domain_id));
        }
        self.model.validate().map_err(|e| e.to_string())
    }
}

/// Failures injected into an RM, for exercising recovery paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub reject_propagate: bool,
    pub fail_commit: bool,
    /// Drop outgoing notifications.
    pub mute_notifications: bool,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RmStats {
    pub pulls: u64,
    pub not_modified: u64,
    pub propagates: u64,
    pub counter_proposals: u64,
    pub rejections: u64,
    pub commits: u64,
    pub expired: u64,
}

struct DeltaEntry {
    delta: ModelDelta,
    hold_expires_at: Option<EpochSecs>,
}

struct RmState {
    /// Committed content; version and reservations are authoritative.
    model: DomainModel,
    calendars: BTreeMap<Urn, ReservationCalendar>,
    deltas: BTreeMap<String, DeltaEntry>,
}

struct Snapshot {
    model: Arc<DomainModel>,
}

pub struct ResourceManager {
    config: RmConfig,
    clock: Arc<dyn Clock>,
    state: AsyncMutex<RmState>,
    snapshot: RwLock<Snapshot>,
    records: RwLock<BTreeMap<String, DeltaRecord>>,
    subscribers: Mutex<BTreeMap<String, NotifySink>>,
    faults: Mutex<FaultPlan>,
    stats: Mutex<RmStats>,
    http: reqwest::Client,
}

fn reject(code: ErrorCode, detail: serde_json::Value) -> ErrorEnvelope {
    ErrorEnvelope::new(code, detail)
}

impl ResourceManager {
    pub fn new(config: RmConfig, clock: Arc<dyn Clock>) -> Result<Arc<ResourceManager>, String> {
        config.validate()?;
        let mut model = config.model.clone();
        let mut calendars = BTreeMap::new();
        for p in model.ports() {
            calendars.insert(p.urn.clone(), ReservationCalendar::new(p.urn.clone(), p.reservable, p.labels.clone()));
        }
        for s in model.reservations() {
            if let Some(c) = calendars.get_mut(&s.port_urn) {
                c.load_committed(s.clone());
            }
        }
        if model.active_reservations.is_none() {
            model.active_reservations = Some(Vec::new());
        }
        model.port_usage = None;
        model.verbosity = Verbosity::Full;
        let model = DomainModel::new(model).map_err(|e| e.to_string())?;
        let rendered = render(&model, config.verbosity, &calendars);
        Ok(Arc::new(ResourceManager {
            clock,
            state: AsyncMutex::new(RmState { model, calendars, deltas: BTreeMap::new() }),
            snapshot: RwLock::new(Snapshot { model: Arc::new(rendered) }),
            records: RwLock::new(BTreeMap::new()),
            subscribers: Mutex::new(BTreeMap::new()),
            faults: Mutex::new(FaultPlan::default()),
            stats: Mutex::new(RmStats::default()),
            http: reqwest::Client::new(),
            config,
        }))
    }

    pub fn domain(&self) -> &str {
        &self.config.domain_id
    }

    pub fn config(&self) -> &RmConfig {
        &self.config
    }

    pub fn version(&self) -> u64 {
        self.snapshot.read().expect("snapshot lock").model.version
    }

    pub fn snapshot_generated_at(&self) -> EpochSecs {
        self.snapshot.read().expect("snapshot lock").model.generated_at
    }

    pub fn stats(&self) -> RmStats {
        *self.stats.lock().expect("stats lock")
    }

    pub fn set_faults(&self, faults: FaultPlan) {
        *self.faults.lock().expect("fault lock") = faults;
    }

    fn faults(&self) -> FaultPlan {
        *self.faults.lock().expect("fault lock")
    }

    fn bump(&self, f: impl FnOnce(&mut RmStats)) {
        f(&mut self.stats.lock().expect("stats lock"));
    }

    /// Serves the model at the configured verbosity. Generation latency is
    /// paid only when a new document has to be produced.
    pub async fn get_model(&self, known_version: Option<u64>) -> ModelFetch {
        self.bump(|s| s.pulls += 1);
        let current = self.snapshot.read().expect("snapshot lock").model.clone();
        if known_version == Some(current.version) {
            self.bump(|s| s.not_modified += 1);
            return ModelFetch::NotModified;
        }
        sleep_ms(self.config.model_gen_latency_ms).await;
        ModelFetch::Modified(self.snapshot.read().expect("snapshot lock").model.clone())
    }

    pub fn delta_status(&self, delta_id: &str) -> Result<DeltaRecord, ErrorEnvelope> {
        self.records
            .read()
            .expect("record lock")
            .get(delta_id)
            .cloned()
            .ok_or_else(|| reject(ErrorCode::UnknownDelta, json!({ "delta_id": delta_id })))
    }

    fn publish(&self, record: DeltaRecord) {
        let note = Notification {
            subscription_id: String::new(),
            domain: self.config.domain_id.clone(),
            kind: EventKind::DeltaState,
            version: None,
            delta_id: Some(record.delta_id.clone()),
            state: Some(record.state),
        };
        let changed = {
            let mut records = self.records.write().expect("record lock");
            let prev = records.insert(record.delta_id.clone(), record.clone());
            prev.map(|p| p.state) != Some(record.state)
        };
        if changed && record.state != DeltaStateWire::Propagated {
            self.notify(note);
        }
    }

    fn refresh(&self, st: &RmState) {
        let rendered = render(&st.model, self.config.verbosity, &st.calendars);
        let version = rendered.version;
        self.snapshot.write().expect("snapshot lock").model = Arc::new(rendered);
        self.notify(Notification {
            subscription_id: String::new(),
            domain: self.config.domain_id.clone(),
            kind: EventKind::ModelVersion,
            version: Some(version),
            delta_id: None,
            state: None,
        });
    }

    /// Checks a delta against live state and places holds for it, or
    /// returns a counter-proposal with substitute vlans.
    pub async fn propagate(&self, delta: ModelDelta) -> Result<PropagateResponse, ErrorEnvelope> {
        let mut st = self.state.lock().await;
        sleep_ms(self.config.propagate_latency_ms).await;
        self.bump(|s| s.propagates += 1);
        let now = self.clock.now();
        self.sweep_locked(&mut st, now);
        if delta.target_domain != self.config.domain_id {
            return Err(reject(
                ErrorCode::UnknownUrn,
                json!({ "message": "delta targets another domain", "target_domain": delta.target_domain }),
            ));
        }
        delta
            .validate()
            .map_err(|e| ErrorEnvelope::message(ErrorCode::MalformedIntent, e.to_string()))?;
        if let Some(existing) = st.deltas.get(&delta.delta_id) {
            let record = self.delta_status(&delta.delta_id)?;
            if existing.delta == delta && record.state == DeltaStateWire::Propagated {
                return Ok(PropagateResponse {
                    status: PropagateStatus::Accepted,
                    delta,
                    hold_expires_at: existing.hold_expires_at,
                });
            }
            return Err(reject(
                ErrorCode::BadState,
                json!({ "message": "delta id already used", "delta_id": delta.delta_id, "state": record.state }),
            ));
        }
        if delta.base_model_version != st.model.version {
            warn!(
                domain = %self.config.domain_id,
                base = delta.base_model_version,
                current = st.model.version,
                "adjudicating delta built on a stale model"
            );
        }
        if self.faults().reject_propagate {
            self.bump(|s| s.rejections += 1);
            return Err(reject(
                ErrorCode::InsufficientBandwidth,
                json!({ "message": "propagate rejected by fault injection", "domain": self.config.domain_id }),
            ));
        }
        for s in &delta.addition {
            if !st.calendars.contains_key(&s.port_urn) {
                return Err(reject(ErrorCode::UnknownUrn, json!({ "port": s.port_urn })));
            }
        }

        let hold = self.config.hold_duration_secs;
        let mut trial = st.calendars.clone();
        let mut conflicted: BTreeSet<String> = BTreeSet::new();
        for s in &delta.addition {
            let cal = trial.get_mut(&s.port_urn).expect("ports checked above");
            match cal.try_hold(s.clone(), Some(&delta.delta_id), now, hold) {
                Ok(_) => {}
                Err(CalendarError::VlanConflict { .. }) => {
                    conflicted.insert(s.connection_id.clone());
                }
                Err(CalendarError::InsufficientBandwidth { port, max }) => {
                    self.bump(|s| s.rejections += 1);
                    return Err(reject(ErrorCode::InsufficientBandwidth, json!({ "port": port, "max": max })));
                }
                Err(e) => {
                    self.bump(|s| s.rejections += 1);
                    return Err(ErrorEnvelope::message(ErrorCode::MalformedIntent, e.to_string()));
                }
            }
        }
        if !conflicted.is_empty() {
            let modified = counter_proposal(&st.calendars, &delta, &conflicted).inspect_err(|_| {
                self.bump(|s| s.rejections += 1);
            })?;
            self.bump(|s| s.counter_proposals += 1);
            debug!(domain = %self.config.domain_id, delta = %delta.delta_id, "counter-proposing vlans");
            return Ok(PropagateResponse { status: PropagateStatus::Modified, delta: modified, hold_expires_at: None });
        }

        st.calendars = trial;
        let expires = (!delta.addition.is_empty()).then_some(now + hold);
        st.deltas.insert(delta.delta_id.clone(), DeltaEntry { delta: delta.clone(), hold_expires_at: expires });
        self.publish(DeltaRecord {
            delta_id: delta.delta_id.clone(),
            state: DeltaStateWire::Propagated,
            received_at: now,
            committed_at: None,
            modified_delta: None,
        });
        Ok(PropagateResponse { status: PropagateStatus::Accepted, delta, hold_expires_at: expires })
    }

    /// Acknowledges a commit immediately; the delta reaches `committed`
    /// after the configured commit latency.
    pub async fn commit(self: &Arc<Self>, delta_id: &str) -> Result<CommitAck, ErrorEnvelope> {
        let mut st = self.state.lock().await;
        let record = self.delta_status(delta_id)?;
        match record.state {
            DeltaStateWire::Committing | DeltaStateWire::Committed => {
                return Ok(CommitAck { delta_id: delta_id.to_owned(), state: record.state });
            }
            DeltaStateWire::Expired => {
                return Err(reject(ErrorCode::HoldExpired, json!({ "delta_id": delta_id })));
            }
            DeltaStateWire::Failed => {
                return Err(reject(ErrorCode::BadState, json!({ "delta_id": delta_id, "state": record.state })));
            }
            DeltaStateWire::Propagated => {}
        }
        let now = self.clock.now();
        let entry = st.deltas.get(delta_id).expect("record implies entry");
        if !entry.delta.addition.is_empty() {
            if entry.hold_expires_at.is_some_and(|e| e <= now) {
                self.expire_locked(&mut st, delta_id, now);
                return Err(reject(ErrorCode::HoldExpired, json!({ "delta_id": delta_id })));
            }
            let ports: BTreeSet<Urn> = entry.delta.addition.iter().map(|s| s.port_urn.clone()).collect();
            for p in ports {
                if let Some(c) = st.calendars.get_mut(&p) {
                    match c.commit_hold(delta_id, now) {
                        Ok(_) => {}
                        Err(CalendarError::UnknownAllocation { .. }) => {
                            return Err(reject(
                                ErrorCode::BadState,
                                json!({ "message": "holds were released before commit", "delta_id": delta_id }),
                            ));
                        }
                        Err(e) => return Err(ErrorEnvelope::message(ErrorCode::HoldExpired, e.to_string())),
                    }
                }
            }
        }
        self.bump(|s| s.commits += 1);
        self.publish(DeltaRecord { state: DeltaStateWire::Committing, ..record });
        drop(st);
        let rm = Arc::clone(self);
        let id = delta_id.to_owned();
        tokio::spawn(async move {
            sleep_ms(rm.config.commit_latency_ms).await;
            rm.finish_commit(&id).await;
        });
        Ok(CommitAck { delta_id: delta_id.to_owned(), state: DeltaStateWire::Committing })
    }

    async fn finish_commit(&self, delta_id: &str) {
        let mut st = self.state.lock().await;
        let Ok(record) = self.delta_status(delta_id) else { return };
        if record.state != DeltaStateWire::Committing {
            return;
        }
        let now = self.clock.now();
        let delta = st.deltas[delta_id].delta.clone();
        if self.faults().fail_commit {
            for c in st.calendars.values_mut() {
                c.release_delta(delta_id);
            }
            self.publish(DeltaRecord { state: DeltaStateWire::Failed, ..record });
            return;
        }
        let reduced: BTreeSet<&str> = delta.reduction.iter().map(String::as_str).collect();
        for c in st.calendars.values_mut() {
            for id in &reduced {
                c.release(id);
            }
        }
        let mut model = st.model.clone();
        let segments = model.active_reservations.get_or_insert_with(Vec::new);
        segments.retain(|s| !reduced.contains(s.connection_id.as_str()));
        segments.extend(delta.addition.iter().cloned());
        model.version += 1;
        model.generated_at = now;
        st.model = DomainModel::new(model).expect("committed segments passed admission");
        self.publish(DeltaRecord { state: DeltaStateWire::Committed, committed_at: Some(now), ..record });
        self.refresh(&st);
    }

    fn expire_locked(&self, st: &mut RmState, delta_id: &str, now: EpochSecs) {
        for c in st.calendars.values_mut() {
            c.release_delta(delta_id);
        }
        if let Ok(record) = self.delta_status(delta_id) {
            self.publish(DeltaRecord { state: DeltaStateWire::Expired, ..record });
        }
        st.model.version += 1;
        st.model.generated_at = now;
        self.bump(|s| s.expired += 1);
        self.refresh(st);
    }

    fn sweep_locked(&self, st: &mut RmState, now: EpochSecs) -> Vec<String> {
        let due: Vec<String> = st
            .deltas
            .iter()
            .filter(|(_, e)| e.hold_expires_at.is_some_and(|x| x <= now))
            .map(|(id, _)| id.clone())
            .filter(|id| self.delta_status(id).is_ok_and(|r| r.state == DeltaStateWire::Propagated))
            .collect();
        for id in &due {
            self.expire_locked(st, id, now);
        }
        for c in st.calendars.values_mut() {
            c.expire_holds(now);
        }
        due
    }

    /// Expires every hold due at `now`; returns the expired delta ids.
    pub async fn sweep(&self) -> Vec<String> {
        let mut st = self.state.lock().await;
        let now = self.clock.now();
        self.sweep_locked(&mut st, now)
    }

    pub fn spawn_sweeper(self: &Arc<Self>, period: Duration) -> tokio::task::JoinHandle<()> {
        let rm = Arc::downgrade(self);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                let Some(rm) = rm.upgrade() else { break };
                rm.sweep().await;
            }
        })
    }

    pub fn subscribe(&self, sink: NotifySink) -> Result<String, ErrorEnvelope> {
        if let NotifySink::Url(u) = &sink {
            if reqwest::Url::parse(u).is_err() {
                return Err(reject(
                    ErrorCode::MalformedIntent,
                    json!({ "message": "malformed endpoint", "endpoint": u }),
                ));
            }
        }
        let id = uuid::Uuid::new_v4().to_string();
        self.subscribers.lock().expect("subscriber lock").insert(id.clone(), sink);
        Ok(id)
    }

    pub fn unsubscribe(&self, subscription_id: &str) -> bool {
        self.subscribers.lock().expect("subscriber lock").remove(subscription_id).is_some()
    }

    fn notify(&self, note: Notification) {
        if !self.config.notify_enabled || self.faults().mute_notifications {
            return;
        }
        let subs: Vec<(String, NotifySink)> = self
            .subscribers
            .lock()
            .expect("subscriber lock")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        for (id, sink) in subs {
            let note = Notification { subscription_id: id, ..note.clone() };
            match sink {
                NotifySink::Channel(tx) => {
                    let _ = tx.send(note);
                }
                NotifySink::Url(url) => {
                    let client = self.http.clone();
                    tokio::spawn(async move {
                        for attempt in 0..3u32 {
                            match client.post(&url).json(&note).send().await {
                                Ok(r) if r.status().is_success() => return,
                                _ => tokio::time::sleep(Duration::from_millis(50 << attempt)).await,
                            }
                        }
                        warn!(%url, "notification delivery abandoned");
                    });
                }
            }
        }
    }

    pub async fn audit_document(&self) -> AuditDocument {
        let st = self.state.lock().await;
        let mut allocations = Vec::new();
        let mut violations = Vec::new();
        for c in st.calendars.values() {
            allocations.extend(c.allocations().iter().cloned());
            violations.extend(c.audit());
        }
        AuditDocument { domain: self.config.domain_id.clone(), version: st.model.version, allocations, violations }
    }

    /// Writes a committed segment without admission control. Only for
    /// seeding audit defects.
    pub async fn inject_unchecked(&self, segment: ReservationSegment) {
        let mut st = self.state.lock().await;
        if let Some(c) = st.calendars.get_mut(&segment.port_urn) {
            c.load_committed(segment);
        }
    }

    pub async fn held_allocations(&self) -> Vec<Allocation> {
        let st = self.state.lock().await;
        st.calendars
            .values()
            .flat_map(|c| c.allocations().iter().filter(|a| a.state == AllocationState::Held).cloned())
            .collect()
    }
}

async fn sleep_ms(ms: u64) {
    if ms > 0 {
        tokio::time::sleep(Duration::from_millis(ms)).await;
    }
}

/// Substitutes, per conflicted connection, the lowest vlan free on every
/// port that connection uses in this delta.
fn counter_proposal(
    calendars: &BTreeMap<Urn, ReservationCalendar>,
    delta: &ModelDelta,
    conflicted: &BTreeSet<String>,
) -> Result<ModelDelta, ErrorEnvelope> {
    let mut choice: BTreeMap<&str, u16> = BTreeMap::new();
    for conn in conflicted {
        let segs: Vec<&ReservationSegment> = delta.addition.iter().filter(|s| &s.connection_id == conn).collect();
        let mut free: Option<BTreeSet<u16>> = None;
        for s in &segs {
            let here = calendars[&s.port_urn].available_labels(s.interval);
            free = Some(match free {
                None => here,
                Some(f) => f.intersection(&here).copied().collect(),
            });
        }
        let Some(v) = free.and_then(|f| f.first().copied()) else {
            let s = segs[0];
            return Err(reject(
                ErrorCode::VlanConflict,
                json!({ "port": s.port_urn, "vlan": s.vlan, "connection_id": conn, "alternatives": [] }),
            ));
        };
        choice.insert(conn.as_str(), v);
    }
    let mut modified = delta.clone();
    for s in &mut modified.addition {
        if let Some(v) = choice.get(s.connection_id.as_str()) {
            s.vlan = *v;
        }
    }
    Ok(modified)
}

/// Model as served: full carries reservations, summary carries per-port
/// peak committed guaranteed bandwidth, static carries topology only.
fn render(model: &DomainModel, verbosity: Verbosity, calendars: &BTreeMap<Urn, ReservationCalendar>) -> DomainModel {
    let mut out = model.clone();
    out.verbosity = verbosity;
    match verbosity {
        Verbosity::Full => {
            out.port_usage = None;
        }
        Verbosity::Summary => {
            out.active_reservations = None;
            out.port_usage = Some(
                model
                    .ports()
                    .map(|p| PortUsage { port_urn: p.urn.clone(), reserved: peak_committed(calendars.get(&p.urn)) })
                    .collect(),
            );
        }
        Verbosity::Static => {
            out.active_reservations = None;
            out.port_usage = None;
        }
    }
    DomainModel::new(out).expect("rendering preserves validity")
}

fn peak_committed(cal: Option<&ReservationCalendar>) -> u64 {
    let Some(cal) = cal else { return 0 };
    let committed: Vec<&Allocation> = cal
        .allocations()
        .iter()
        .filter(|a| a.state == AllocationState::Committed && a.segment.qos_class == QosClass::GuaranteedCapped)
        .collect();
    committed
        .iter()
        .map(|a| {
            let t = a.segment.interval.start;
            committed
                .iter()
                .filter(|b| b.segment.interval.start <= t && t < b.segment.interval.end)
                .map(|b| b.segment.bandwidth)
                .sum::<u64>()
        })
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use fabric_core::model::{TimeInterval, Verbosity};
    use fabric_core::presets::baseline8;

    const T: EpochSecs = 1_535_810_400;

    fn rm(clock: Arc<ManualClock>, propagate_ms: u64, commit_ms: u64) -> Arc<ResourceManager> {
        let g = baseline8(Verbosity::Full).into_iter().find(|g| g.model.domain_id == "es.net").unwrap();
        let mut cfg = RmConfig::for_model(g.model, g.role, 0.0);
        cfg.propagate_latency_ms = propagate_ms;
        cfg.commit_latency_ms = commit_ms;
        cfg.hold_duration_secs = 60;
        ResourceManager::new(cfg, clock).unwrap()
    }

    fn urn(s: &str) -> Urn {
        Urn::parse(s).unwrap()
    }

    fn seg(conn: &str, port: &str, vlan: u16, bw: u64) -> ReservationSegment {
        ReservationSegment {
            connection_id: conn.into(),
            port_urn: urn(&format!("urn:ogf:network:es.net:2013:{port}")),
            vlan,
            bandwidth: bw,
            qos_class: QosClass::GuaranteedCapped,
            interval: TimeInterval { start: T, end: T + 3600 },
        }
    }

    fn delta(id: &str, segs: Vec<ReservationSegment>) -> ModelDelta {
        ModelDelta { delta_id: id.into(), target_domain: "es.net".into(), base_model_version: 1, addition: segs, reduction: vec![] }
    }

    fn release(id: &str, conns: &[&str]) -> ModelDelta {
        ModelDelta {
            delta_id: id.into(),
            target_domain: "es.net".into(),
            base_model_version: 1,
            addition: vec![],
            reduction: conns.iter().map(|c| c.to_string()).collect(),
        }
    }

    async fn settle(rm: &Arc<ResourceManager>, id: &str) -> DeltaStateWire {
        for _ in 0..200 {
            let s = rm.delta_status(id).unwrap().state;
            if s.is_final() {
                return s;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("delta {id} never settled");
    }

    #[tokio::test]
    async fn first_pull_is_full_and_second_is_not_modified() {
        let rm = rm(Arc::new(ManualClock::new(T)), 0, 0);
        let ModelFetch::Modified(m) = rm.get_model(None).await else { panic!("expected a model") };
        assert!(matches!(rm.get_model(Some(m.version)).await, ModelFetch::NotModified));
        assert_eq!(rm.stats().not_modified, 1);
    }

    #[tokio::test]
    async fn propagate_commit_bumps_version_once() {
        let rm = rm(Arc::new(ManualClock::new(T)), 0, 0);
        let v0 = rm.version();
        let r = rm.propagate(delta("d1", vec![seg("c1", "chic:to-anl.gov", 1780, 10_000)])).await.unwrap();
        assert_eq!(r.status, PropagateStatus::Accepted);
        assert_eq!(r.hold_expires_at, Some(T + 60));
        assert_eq!(rm.version(), v0);
        rm.commit("d1").await.unwrap();
        assert_eq!(settle(&rm, "d1").await, DeltaStateWire::Committed);
        assert_eq!(rm.version(), v0 + 1);
        let ModelFetch::Modified(m) = rm.get_model(Some(v0)).await else { panic!() };
        assert_eq!(m.reservations().len(), 1);
        // Duplicate commit is an idempotent acknowledgment.
        assert_eq!(rm.commit("d1").await.unwrap().state, DeltaStateWire::Committed);
    }

    #[tokio::test]
    async fn busy_vlan_yields_counter_proposal_without_hold() {
        let rm = rm(Arc::new(ManualClock::new(T)), 0, 0);
        rm.propagate(delta("d1", vec![seg("c1", "chic:to-anl.gov", 1780, 1000)])).await.unwrap();
        let d2 = delta("d2", vec![seg("c2", "chic:to-anl.gov", 1780, 1000), seg("c2", "chic:to-sunn", 1780, 1000)]);
        let r = rm.propagate(d2).await.unwrap();
        assert_eq!(r.status, PropagateStatus::Modified);
        assert!(r.delta.addition.iter().all(|s| s.vlan == 1781));
        assert!(rm.delta_status("d2").is_err());
        assert_eq!(rm.held_allocations().await.len(), 1);
        // Re-propagating the proposal verbatim is accepted.
        let again = rm.propagate(r.delta).await.unwrap();
        assert_eq!(again.status, PropagateStatus::Accepted);
    }

    #[tokio::test]
    async fn over_reservable_is_insufficient_bandwidth() {
        let rm = rm(Arc::new(ManualClock::new(T)), 0, 0);
        let e = rm.propagate(delta("d1", vec![seg("c1", "chic:to-anl.gov", 1780, 100_001)])).await.unwrap_err();
        assert_eq!(e.code, ErrorCode::InsufficientBandwidth);
        assert_eq!(e.detail["max"], 100_000);
    }

    #[tokio::test]
    async fn commit_after_expiry_is_hold_expired() {
        let clock = Arc::new(ManualClock::new(T));
        let rm = rm(clock.clone(), 0, 0);
        let v0 = rm.version();
        rm.propagate(delta("d1", vec![seg("c1", "chic:to-anl.gov", 1780, 1000)])).await.unwrap();
        clock.advance(60);
        let e = rm.commit("d1").await.unwrap_err();
        assert_eq!(e.code, ErrorCode::HoldExpired);
        assert_eq!(rm.delta_status("d1").unwrap().state, DeltaStateWire::Expired);
        assert!(rm.held_allocations().await.is_empty());
        assert_eq!(rm.version(), v0 + 1);
    }

    #[tokio::test]
    async fn sweep_expires_due_holds_only() {
        let clock = Arc::new(ManualClock::new(T));
        let rm = rm(clock.clone(), 0, 0);
        rm.propagate(delta("d1", vec![seg("c1", "chic:to-anl.gov", 1780, 1000)])).await.unwrap();
        rm.propagate(delta("d2", vec![seg("c2", "chic:to-anl.gov", 1781, 1000)])).await.unwrap();
        rm.commit("d2").await.unwrap();
        settle(&rm, "d2").await;
        clock.advance(59);
        assert!(rm.sweep().await.is_empty());
        clock.advance(1);
        assert_eq!(rm.sweep().await, vec!["d1".to_owned()]);
        let doc = rm.audit_document().await;
        assert_eq!(doc.allocations.len(), 1);
        assert!(doc.violations.is_empty());
    }

    #[tokio::test]
    async fn reduction_releases_committed_segments() {
        let rm = rm(Arc::new(ManualClock::new(T)), 0, 0);
        rm.propagate(delta("d1", vec![seg("c1", "chic:to-anl.gov", 1780, 1000)])).await.unwrap();
        rm.commit("d1").await.unwrap();
        settle(&rm, "d1").await;
        rm.propagate(release("r1", &["c1", "never-seen"])).await.unwrap();
        rm.commit("r1").await.unwrap();
        assert_eq!(settle(&rm, "r1").await, DeltaStateWire::Committed);
        assert!(rm.audit_document().await.allocations.is_empty());
    }

    #[tokio::test(start_paused = true)]
    async fn commit_reports_committing_until_latency_elapses() {
        let rm = rm(Arc::new(ManualClock::new(T)), 0, 3000);
        rm.propagate(delta("d1", vec![seg("c1", "chic:to-anl.gov", 1780, 1000)])).await.unwrap();
        rm.commit("d1").await.unwrap();
        tokio::time::sleep(Duration::from_millis(2900)).await;
        assert_eq!(rm.delta_status("d1").unwrap().state, DeltaStateWire::Committing);
        tokio::time::sleep(Duration::from_millis(200)).await;
        assert_eq!(rm.delta_status("d1").unwrap().state, DeltaStateWire::Committed);
    }

    #[tokio::test]
    async fn notifications_reach_subscribers_until_unsubscribed() {
        let rm = rm(Arc::new(ManualClock::new(T)), 0, 0);
        let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();
        let sub = rm.subscribe(NotifySink::Channel(tx)).unwrap();
        rm.propagate(delta("d1", vec![seg("c1", "chic:to-anl.gov", 1780, 1000)])).await.unwrap();
        rm.commit("d1").await.unwrap();
        settle(&rm, "d1").await;
        let mut kinds = vec![];
        while let Ok(n) = rx.try_recv() {
            assert_eq!(n.subscription_id, sub);
            kinds.push((n.kind, n.state));
        }
        assert!(kinds.contains(&(EventKind::DeltaState, Some(DeltaStateWire::Committed))));
        assert!(kinds.iter().any(|k| k.0 == EventKind::ModelVersion));
        assert!(rm.unsubscribe(&sub));
        rm.propagate(delta("d2", vec![seg("c2", "chic:to-anl.gov", 1781, 1000)])).await.unwrap();
        rm.commit("d2").await.unwrap();
        settle(&rm, "d2").await;
        assert!(rx.try_recv().is_err());
        assert!(rm.subscribe(NotifySink::Url("not a url".into())).is_err());
    }

    #[tokio::test]
    async fn summary_verbosity_reports_peak_usage() {
        let g = baseline8(Verbosity::Full).into_iter().find(|g| g.model.domain_id == "es.net").unwrap();
        let mut cfg = RmConfig::for_model(g.model, g.role, 0.0);
        cfg.verbosity = Verbosity::Summary;
        let rm = ResourceManager::new(cfg, Arc::new(ManualClock::new(T))).unwrap();
        rm.propagate(delta("d1", vec![seg("c1", "chic:to-anl.gov", 1780, 30_000)])).await.unwrap();
        rm.commit("d1").await.unwrap();
        settle(&rm, "d1").await;
        let ModelFetch::Modified(m) = rm.get_model(None).await else { panic!() };
        let usage = m.port_usage.as_ref().unwrap();
        let u = usage.iter().find(|u| u.port_urn.as_str().ends_with("chic:to-anl.gov")).unwrap();
        assert_eq!(u.reserved, 30_000);
        assert!(m.active_reservations.is_none());
    }
}
