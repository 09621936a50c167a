//! Orchestrator: union maintenance, intent lifecycle and the two-phase
//! reserve/commit workflow against a registry of resource managers.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::FixedOffset;
use fabric_core::compute::{
    answer_queries, compute_design, normalize_intent, render_answers, summarize, NormalizeOptions, ServiceDesign,
    ServiceIntent,
};
use fabric_core::model::{DomainModel, EpochSecs, ModelDelta, Urn};
use fabric_core::protocol::{
    DeltaStateWire, ErrorCode, ErrorEnvelope, IntentDocument, Notification, PhaseTimings, PropagateStatus,
    QueryResponseDocument, RmDeltaView, ServiceResponse, ServiceState, ServiceStatusDocument,
};
use fabric_core::topology::{integrate_models, GraphDocument, UnionModel};
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, Mutex as AsyncMutex, OwnedMutexGuard, Semaphore};
use tokio::time::Instant;
use tracing::{debug, error, info, warn};
use uuid::Uuid;

use crate::api::{ModelFetch, NotifySink, RmApi, RmError};
use crate::clock::Clock;
use crate::journal::{Journal, JournalError, Keyed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackoffPolicy {
    pub base_ms: u64,
    pub factor: u32,
    pub cap_ms: u64,
    pub attempts: u32,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy { base_ms: 1_000, factor: 2, cap_ms: 60_000, attempts: 10 }
    }
}

impl BackoffPolicy {
    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = (self.base_ms as f64 * (self.factor as f64).powi(attempt as i32)).min(self.cap_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrchestratorConfig {
    pub pull_period_secs: f64,
    pub poll_interval_secs: f64,
    pub max_negotiation_rounds: u32,
    /// Commits are refused this close to the earliest hold expiry.
    pub guard_band_secs: i64,
    /// Give up waiting for commit completion after this long.
    pub commit_timeout_secs: f64,
    pub journal: Option<PathBuf>,
    pub use_notify: bool,
    pub max_inflight_per_rm: usize,
    pub rollback: BackoffPolicy,
    /// Offset for rendered times when an intent names none, in seconds east.
    pub display_offset_secs: i32,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            pull_period_secs: 30.0,
            poll_interval_secs: 5.0,
            max_negotiation_rounds: 5,
            guard_band_secs: 2,
            commit_timeout_secs: 600.0,
            journal: None,
            use_notify: false,
            max_inflight_per_rm: 8,
            rollback: BackoffPolicy::default(),
            display_offset_secs: 0,
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.pull_period_secs.is_nan() || self.pull_period_secs <= 0.0 {
            return Err("pull_period_secs must be positive".into());
        }
        if self.poll_interval_secs.is_nan() || self.poll_interval_secs <= 0.0 {
            return Err("poll_interval_secs must be positive".into());
        }
        if self.max_inflight_per_rm == 0 {
            return Err("max_inflight_per_rm must be at least 1".into());
        }
        FixedOffset::east_opt(self.display_offset_secs).ok_or("display_offset_secs out of range")?;
        Ok(())
    }

    fn normalize_options(&self) -> NormalizeOptions {
        NormalizeOptions {
            display_offset: FixedOffset::east_opt(self.display_offset_secs).expect("validated offset"),
            ..NormalizeOptions::default()
        }
    }

    fn poll_interval(&self) -> Duration {
        Duration::from_secs_f64(self.poll_interval_secs)
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("duplicate resource manager for {0}")]
    DuplicateRm(String),
}

/// One model-pull cycle; the feedback phase of the control loop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackCycle {
    /// Model generation plus transfer, per RM.
    pub per_rm_ms: BTreeMap<String, f64>,
    pub max_pull_ms: f64,
    pub integrate_ms: f64,
    pub total_ms: f64,
    pub modified: usize,
    pub not_modified: usize,
    pub unreachable: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PullHealth {
    pub version: Option<u64>,
    pub last_ok_at: Option<EpochSecs>,
    pub consecutive_failures: u32,
}

/// Durable state of one service instance; the journal stores these.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRecord {
    pub instance_id: String,
    pub document: IntentDocument,
    /// Clock reading the current revision was normalized against.
    pub now: EpochSecs,
    pub revision: u32,
    pub rounds: u32,
    pub state: ServiceState,
    pub design: Option<ServiceDesign>,
    pub answers: Option<QueryResponseDocument>,
    pub error: Option<ErrorEnvelope>,
    pub deltas: BTreeMap<String, RmDeltaView>,
    pub timings: PhaseTimings,
    pub hold_expires_at: Option<EpochSecs>,
    pub pending_release: Vec<String>,
    #[serde(skip)]
    intent: Option<ServiceIntent>,
}

impl Keyed for InstanceRecord {
    fn key(&self) -> &str {
        &self.instance_id
    }
}

impl InstanceRecord {
    fn set_state(&mut self, to: ServiceState) {
        if self.state != to && !self.state.can_transition(to) {
            error!(instance = %self.instance_id, from = ?self.state, ?to, "illegal lifecycle transition");
        }
        self.state = to;
    }

    fn response(&self) -> ServiceResponse {
        ServiceResponse {
            instance_id: self.instance_id.clone(),
            state: self.state,
            revision: self.revision,
            design: self.summary(),
            answers: self.answers.clone(),
            error: self.error.clone(),
        }
    }

    fn summary(&self) -> Option<fabric_core::protocol::DesignSummary> {
        Some(summarize(self.intent.as_ref()?, self.design.as_ref()?))
    }

    fn status(&self) -> ServiceStatusDocument {
        ServiceStatusDocument {
            instance_id: self.instance_id.clone(),
            service_alias: self.document.service_alias.clone(),
            state: self.state,
            revision: self.revision,
            design: self.summary(),
            answers: self.answers.clone(),
            error: self.error.clone(),
            deltas: self.deltas.clone(),
            phase_timings: self.timings.clone(),
            hold_expires_at: self.hold_expires_at,
            pending_release: self.pending_release.clone(),
        }
    }

    fn connection_ids_in(&self, domain: &str) -> Vec<String> {
        let Some(d) = self.design.as_ref().and_then(|d| d.delta_for(domain)) else { return vec![] };
        d.connection_ids().into_iter().map(str::to_owned).collect()
    }
}

struct Slot {
    op: Arc<AsyncMutex<()>>,
    rec: Mutex<InstanceRecord>,
}

impl Slot {
    fn read<T>(&self, f: impl FnOnce(&InstanceRecord) -> T) -> T {
        f(&self.rec.lock().expect("instance lock"))
    }

    fn write<T>(&self, f: impl FnOnce(&mut InstanceRecord) -> T) -> T {
        f(&mut self.rec.lock().expect("instance lock"))
    }
}

struct Rm {
    api: Arc<dyn RmApi>,
    permits: Semaphore,
}

#[derive(Default)]
struct PullState {
    health: BTreeMap<String, PullHealth>,
    cycles: Vec<FeedbackCycle>,
}

const MAX_CYCLES_KEPT: usize = 1024;

pub struct Orchestrator {
    config: OrchestratorConfig,
    clock: Arc<dyn Clock>,
    rms: BTreeMap<String, Rm>,
    union: RwLock<Arc<UnionModel>>,
    pull: Mutex<PullState>,
    instances: RwLock<BTreeMap<String, Arc<Slot>>>,
    journal: Option<Journal>,
    events: broadcast::Sender<Notification>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn bad_state(instance: &str, state: ServiceState, op: &str) -> ErrorEnvelope {
    ErrorEnvelope::new(
        ErrorCode::BadState,
        json!({ "message": format!("{op} not allowed in state {state:?}"), "instance_id": instance, "state": state }),
    )
}

fn rm_rejection(domain: &str, e: &RmError) -> ErrorEnvelope {
    let cause = e.envelope();
    ErrorEnvelope::new(cause.code, json!({ "domain": domain, "cause": cause.detail }))
}

impl Orchestrator {
    /// Builds an orchestrator, replays its journal and pulls every RM once.
    pub async fn connect(
        config: OrchestratorConfig,
        rms: Vec<Arc<dyn RmApi>>,
        clock: Arc<dyn Clock>,
    ) -> Result<Arc<Orchestrator>, OrchestratorError> {
        config.validate().map_err(OrchestratorError::Config)?;
        let mut registry = BTreeMap::new();
        for api in rms {
            let domain = api.domain().to_owned();
            let rm = Rm { api, permits: Semaphore::new(config.max_inflight_per_rm) };
            if registry.insert(domain.clone(), rm).is_some() {
                return Err(OrchestratorError::DuplicateRm(domain));
            }
        }
        let records = match &config.journal {
            Some(p) => Journal::replay::<InstanceRecord>(p)?,
            None => BTreeMap::new(),
        };
        let (events, _) = broadcast::channel(4096);
        let orch = Arc::new(Orchestrator {
            journal: config.journal.clone().map(Journal::new),
            config,
            clock,
            rms: registry,
            union: RwLock::new(Arc::new(UnionModel::empty(fabric_core::calendar::DEFAULT_OVERBOOK_FACTOR))),
            pull: Mutex::new(PullState::default()),
            instances: RwLock::new(BTreeMap::new()),
            events,
        });
        orch.pull_once().await;
        orch.recover(records).await;
        Ok(orch)
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.rms.keys().map(String::as_str)
    }

    pub fn union(&self) -> Arc<UnionModel> {
        self.union.read().expect("union lock").clone()
    }

    pub fn union_graph(&self) -> GraphDocument {
        self.union().export_graph()
    }

    pub fn feedback_cycles(&self) -> Vec<FeedbackCycle> {
        self.pull.lock().expect("pull lock").cycles.clone()
    }

    pub fn pull_health(&self) -> BTreeMap<String, PullHealth> {
        self.pull.lock().expect("pull lock").health.clone()
    }

    fn rm(&self, domain: &str) -> Result<&Rm, ErrorEnvelope> {
        self.rms.get(domain).ok_or_else(|| {
            ErrorEnvelope::new(ErrorCode::UnknownUrn, json!({ "message": "no resource manager registered", "domain": domain }))
        })
    }

    // -----------------------------------------------------------------
    // Feedback: model pulls

    /// Pulls every RM in parallel and re-integrates the models that changed.
    pub async fn pull_once(&self) -> FeedbackCycle {
        let known: BTreeMap<String, Option<u64>> = {
            let p = self.pull.lock().expect("pull lock");
            self.rms.keys().map(|d| (d.clone(), p.health.get(d).and_then(|h| h.version))).collect()
        };
        let fetches = self.rms.iter().map(|(d, rm)| {
            let known = known[d];
            async move {
                let _permit = rm.permits.acquire().await.expect("permits never close");
                let t = Instant::now();
                let r = rm.api.get_model(known).await;
                (d.clone(), r, t.elapsed())
            }
        });
        let results = join_all(fetches).await;
        let now = self.clock.now();
        let mut cycle = FeedbackCycle::default();
        let mut changed: Vec<DomainModel> = Vec::new();
        {
            let mut p = self.pull.lock().expect("pull lock");
            for (d, r, took) in results {
                let h = p.health.entry(d.clone()).or_default();
                match r {
                    Ok(fetch) => {
                        cycle.per_rm_ms.insert(d.clone(), ms(took));
                        cycle.max_pull_ms = cycle.max_pull_ms.max(ms(took));
                        h.last_ok_at = Some(now);
                        h.consecutive_failures = 0;
                        match fetch {
                            ModelFetch::Modified(m) => {
                                h.version = Some(m.version);
                                cycle.modified += 1;
                                changed.push((*m).clone());
                            }
                            ModelFetch::NotModified => cycle.not_modified += 1,
                        }
                    }
                    Err(e) => {
                        h.consecutive_failures += 1;
                        warn!(domain = %d, error = %e, "model pull failed; keeping stale model");
                        cycle.unreachable.push(d);
                    }
                }
            }
        }
        let t = Instant::now();
        if !changed.is_empty() {
            let current = self.union();
            let next = if changed.len() * 2 > self.rms.len() {
                let fresh: BTreeSet<String> = changed.iter().map(|m| m.domain_id.clone()).collect();
                let mut all = changed;
                all.extend(current.models().values().filter(|m| !fresh.contains(&m.domain_id)).cloned());
                integrate_models(all).expect("registry keys are unique domains")
            } else {
                changed.into_iter().fold((*current).clone(), |u, m| u.replace_model(m))
            };
            for w in next.warnings() {
                debug!(warning = %w, "union integration");
            }
            *self.union.write().expect("union lock") = Arc::new(next);
            cycle.integrate_ms = ms(t.elapsed());
        }
        cycle.total_ms = cycle.max_pull_ms + cycle.integrate_ms;
        let mut p = self.pull.lock().expect("pull lock");
        p.cycles.push(cycle.clone());
        if p.cycles.len() > MAX_CYCLES_KEPT {
            p.cycles.remove(0);
        }
        cycle
    }

    pub fn spawn_pull_loop(self: &Arc<Self>) -> tokio::task::JoinHandle<()> {
        let me = Arc::downgrade(self);
        let period = Duration::from_secs_f64(self.config.pull_period_secs);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            tick.tick().await;
            loop {
                tick.tick().await;
                let Some(o) = me.upgrade() else { break };
                o.pull_once().await;
            }
        })
    }

    /// Subscribes to every RM. With a callback base URL the RMs POST to
    /// `{base}/sense-o/v1/callbacks/{domain}`; otherwise an in-process
    /// channel is used.
    pub async fn enable_notifications(&self, callback_base: Option<&str>) -> Result<(), ErrorEnvelope> {
        for (d, rm) in &self.rms {
            let sink = match callback_base {
                Some(base) => NotifySink::Url(format!("{}/sense-o/v1/callbacks/{d}", base.trim_end_matches('/'))),
                None => {
                    let (tx, mut rx) = mpsc::unbounded_channel();
                    let events = self.events.clone();
                    tokio::spawn(async move {
                        while let Some(n) = rx.recv().await {
                            let _ = events.send(n);
                        }
                    });
                    NotifySink::Channel(tx)
                }
            };
            rm.api.subscribe(sink).await.map_err(|e| rm_rejection(d, &e))?;
        }
        Ok(())
    }

    /// Entry point for callbacks delivered over HTTP.
    pub fn on_notification(&self, note: Notification) {
        let _ = self.events.send(note);
    }

    // -----------------------------------------------------------------
    // Instances

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ErrorEnvelope> {
        self.instances.read().expect("instances lock").get(id).cloned().ok_or_else(|| {
            ErrorEnvelope::new(ErrorCode::UnknownUrn, json!({ "reason": "unknown-instance", "instance_id": id }))
        })
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.instances.read().expect("instances lock").keys().cloned().collect()
    }

    pub fn status(&self, id: &str) -> Result<ServiceStatusDocument, ErrorEnvelope> {
        Ok(self.slot(id)?.read(InstanceRecord::status))
    }

    /// Snapshot of every instance record, for audits.
    pub fn ledger(&self) -> Vec<InstanceRecord> {
        let slots: Vec<Arc<Slot>> = self.instances.read().expect("instances lock").values().cloned().collect();
        slots.iter().map(|s| s.read(Clone::clone)).collect()
    }

    pub fn record(&self, id: &str) -> Result<InstanceRecord, ErrorEnvelope> {
        Ok(self.slot(id)?.read(Clone::clone))
    }

    async fn persist(&self, slot: &Slot) {
        let Some(j) = &self.journal else { return };
        let rec = slot.read(Clone::clone);
        if let Err(e) = j.append(&rec).await {
            error!(instance = %rec.instance_id, error = %e, "journal append failed");
        }
    }

    /// Normalizes and evaluates a document as a revision of `rec`.
    fn evaluate(&self, rec: &mut InstanceRecord, doc: IntentDocument) -> Result<(), ErrorEnvelope> {
        let now = self.clock.now();
        let intent = normalize_intent(&doc, now, &self.config.normalize_options()).map_err(|e| e.envelope())?;
        let union = self.union();
        let t = Instant::now();
        rec.document = doc;
        rec.now = now;
        rec.error = None;
        rec.design = None;
        rec.answers = None;
        rec.deltas = BTreeMap::new();
        if intent.is_query() {
            match answer_queries(&intent, &union) {
                Ok(a) => rec.answers = Some(render_answers(&a, &intent)),
                Err(e) => rec.error = Some(e.envelope()),
            }
        } else {
            match compute_design(&intent, &union, &rec.instance_id, rec.revision) {
                Ok(d) => {
                    rec.deltas = d
                        .deltas
                        .iter()
                        .map(|x| (x.target_domain.clone(), RmDeltaView { delta_id: x.delta_id.clone(), state: None }))
                        .collect();
                    rec.design = Some(d);
                    rec.set_state(ServiceState::Computed);
                }
                Err(e) => {
                    rec.error = Some(e.envelope());
                    rec.set_state(ServiceState::ComputeFailed);
                }
            }
        }
        rec.timings.compute_ms = Some(ms(t.elapsed()));
        rec.intent = Some(intent);
        Ok(())
    }

    /// Accepts an intent: answers its queries, or computes a design.
    pub async fn create(&self, doc: IntentDocument) -> Result<ServiceResponse, ErrorEnvelope> {
        let id = Uuid::new_v4().to_string();
        let mut rec = InstanceRecord {
            instance_id: id.clone(),
            document: doc.clone(),
            now: 0,
            revision: 0,
            rounds: 0,
            state: ServiceState::Created,
            design: None,
            answers: None,
            error: None,
            deltas: BTreeMap::new(),
            timings: PhaseTimings::default(),
            hold_expires_at: None,
            pending_release: vec![],
            intent: None,
        };
        self.evaluate(&mut rec, doc)?;
        let response = rec.response();
        let slot = Arc::new(Slot { op: Arc::new(AsyncMutex::new(())), rec: Mutex::new(rec) });
        self.instances.write().expect("instances lock").insert(id.clone(), slot.clone());
        self.persist(&slot).await;
        info!(instance = %id, state = ?response.state, "service created");
        Ok(response)
    }

    /// Replaces the intent with a revised document and re-evaluates it
    /// against the current union.
    pub async fn negotiate(&self, id: &str, doc: IntentDocument) -> Result<ServiceResponse, ErrorEnvelope> {
        let slot = self.slot(id)?;
        let _op = slot.op.lock().await;
        let response = slot.write(|rec| {
            if !matches!(rec.state, ServiceState::Created | ServiceState::Computed) {
                return Err(bad_state(id, rec.state, "negotiate"));
            }
            if rec.rounds >= self.config.max_negotiation_rounds {
                return Err(ErrorEnvelope::new(
                    ErrorCode::TooManyRounds,
                    json!({ "instance_id": id, "max_rounds": self.config.max_negotiation_rounds }),
                ));
            }
            let mut next = rec.clone();
            next.revision += 1;
            next.rounds += 1;
            self.evaluate(&mut next, doc)?;
            *rec = next;
            Ok(rec.response())
        })?;
        self.persist(&slot).await;
        Ok(response)
    }

    // -----------------------------------------------------------------
    // Phase one: sequential propagate

    /// Propagates the design's deltas one RM at a time. Any final rejection
    /// rolls back the holds already placed.
    pub async fn reserve(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope> {
        let slot = self.slot(id)?;
        let _op = slot.op.lock().await;
        let (design, intent) = slot.write(|rec| {
            if rec.state != ServiceState::Computed {
                return Err(bad_state(id, rec.state, "reserve"));
            }
            let (Some(design), Some(intent)) = (rec.design.clone(), rec.intent.clone()) else {
                return Err(bad_state(id, rec.state, "reserve without a design"));
            };
            rec.set_state(ServiceState::Propagating);
            Ok((design, intent))
        })?;
        self.persist(&slot).await;

        let started = Instant::now();
        let mut design = design;
        let mut failure = None;
        let mut earliest: Option<EpochSecs> = None;
        for i in 0..design.deltas.len() {
            let domain = design.deltas[i].target_domain.clone();
            let t = Instant::now();
            let outcome = self.propagate_one(&domain, &mut design, i, &intent).await;
            slot.write(|rec| {
                rec.timings.propagate_per_rm_ms.insert(domain.clone(), ms(t.elapsed()));
            });
            match outcome {
                Ok(expiry) => {
                    earliest = match (earliest, expiry) {
                        (Some(a), Some(b)) => Some(a.min(b)),
                        (a, b) => a.or(b),
                    };
                    slot.write(|rec| {
                        rec.deltas.insert(
                            domain.clone(),
                            RmDeltaView { delta_id: design.deltas[i].delta_id.clone(), state: Some(DeltaStateWire::Propagated) },
                        );
                    });
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        let elapsed = ms(started.elapsed());
        slot.write(|rec| {
            rec.timings.propagate_ms = Some(elapsed);
            rec.design = Some(design);
        });

        if let Some(e) = failure {
            let held: Vec<String> = slot.read(|rec| {
                rec.deltas
                    .iter()
                    .filter(|(_, v)| v.state == Some(DeltaStateWire::Propagated))
                    .map(|(d, _)| d.clone())
                    .collect()
            });
            warn!(instance = %id, error = %e, rolled_back = ?held, "reserve failed");
            slot.write(|rec| {
                rec.set_state(ServiceState::Failed);
                rec.error = Some(e.clone());
            });
            self.release(&slot, &held, "reduction").await;
            self.persist(&slot).await;
            return Err(e);
        }
        let response = slot.write(|rec| {
            rec.hold_expires_at = earliest;
            rec.set_state(ServiceState::Reserved);
            rec.response()
        });
        self.persist(&slot).await;
        Ok(response)
    }

    /// Propagates delta `i`, re-propagating validated counter-proposals up
    /// to the round limit. Returns the hold expiry.
    async fn propagate_one(
        &self,
        domain: &str,
        design: &mut ServiceDesign,
        i: usize,
        intent: &ServiceIntent,
    ) -> Result<Option<EpochSecs>, ErrorEnvelope> {
        let rm = self.rm(domain)?;
        let mut rounds = 0;
        loop {
            let delta = design.deltas[i].clone();
            let r = {
                let _permit = rm.permits.acquire().await.expect("permits never close");
                rm.api.propagate(&delta).await
            };
            let resp = r.map_err(|e| rm_rejection(domain, &e))?;
            match resp.status {
                PropagateStatus::Accepted => return Ok(resp.hold_expires_at),
                PropagateStatus::Modified => {
                    rounds += 1;
                    if rounds > self.config.max_negotiation_rounds {
                        return Err(ErrorEnvelope::new(
                            ErrorCode::TooManyRounds,
                            json!({ "domain": domain, "max_rounds": self.config.max_negotiation_rounds }),
                        ));
                    }
                    let union = self.union();
                    validate_counter_proposal(&union, intent, &delta, &resp.delta).map_err(|reason| {
                        ErrorEnvelope::new(
                            ErrorCode::VlanConflict,
                            json!({ "domain": domain, "reason": reason, "proposal": resp.delta }),
                        )
                    })?;
                    debug!(%domain, round = rounds, "accepting counter-proposal");
                    adopt(design, i, resp.delta);
                }
            }
        }
    }

    // -----------------------------------------------------------------
    // Phase two: parallel commit

    /// Commits every touched RM in parallel. Synchronous calls wait for
    /// completion; asynchronous calls return once the commits are issued.
    pub async fn commit(self: &Arc<Self>, id: &str, asynchronous: bool) -> Result<ServiceResponse, ErrorEnvelope> {
        let slot = self.slot(id)?;
        let guard = slot.op.clone().lock_owned().await;
        let state = slot.read(|r| r.state);
        match state {
            ServiceState::Committing | ServiceState::Committed => return Ok(slot.read(InstanceRecord::response)),
            ServiceState::Reserved => {}
            s => return Err(bad_state(id, s, "commit")),
        }
        let now = self.clock.now();
        if let Some(exp) = slot.read(|r| r.hold_expires_at) {
            if now + self.config.guard_band_secs >= exp {
                let e = ErrorEnvelope::new(
                    ErrorCode::HoldExpired,
                    json!({ "instance_id": id, "hold_expires_at": exp, "now": now, "guard_band_secs": self.config.guard_band_secs }),
                );
                let domains: Vec<String> = slot.write(|rec| {
                    rec.set_state(ServiceState::Expired);
                    rec.error = Some(e.clone());
                    rec.deltas.keys().cloned().collect()
                });
                self.release(&slot, &domains, "expire").await;
                self.persist(&slot).await;
                return Err(e);
            }
        }
        slot.write(|rec| rec.set_state(ServiceState::Committing));
        self.persist(&slot).await;

        let events = self.events.subscribe();
        let started = Instant::now();
        let targets: Vec<(String, String)> =
            slot.read(|rec| rec.deltas.iter().map(|(d, v)| (d.clone(), v.delta_id.clone())).collect());
        let acks = join_all(targets.iter().map(|(d, delta_id)| async move {
            let r = match self.rm(d) {
                Ok(rm) => {
                    let _permit = rm.permits.acquire().await.expect("permits never close");
                    rm.api.commit(delta_id).await.map_err(|e| rm_rejection(d, &e))
                }
                Err(e) => Err(e),
            };
            (d.clone(), r)
        }))
        .await;
        let mut failures = BTreeMap::new();
        slot.write(|rec| {
            for (d, r) in &acks {
                match r {
                    Ok(ack) => {
                        if let Some(v) = rec.deltas.get_mut(d) {
                            v.state = Some(ack.state);
                        }
                    }
                    Err(e) => {
                        failures.insert(d.clone(), e.clone());
                    }
                }
            }
        });

        if asynchronous {
            let me = Arc::clone(self);
            tokio::spawn(async move {
                me.await_commit(&slot, started, events, failures, guard).await;
            });
            return Ok(self.slot(id)?.read(InstanceRecord::response));
        }
        self.await_commit(&slot, started, events, failures, guard).await;
        let (response, error) = slot.read(|r| (r.response(), r.error.clone()));
        match (response.state, error) {
            (ServiceState::Committed, _) => Ok(response),
            (_, Some(e)) => Err(e),
            (s, None) => Err(bad_state(id, s, "commit")),
        }
    }

    /// Waits until every issued commit is final, by notification or by
    /// polling, then settles the instance.
    async fn await_commit(
        &self,
        slot: &Slot,
        started: Instant,
        mut events: broadcast::Receiver<Notification>,
        mut failures: BTreeMap<String, ErrorEnvelope>,
        _op: OwnedMutexGuard<()>,
    ) {
        let mut pending: BTreeMap<String, String> = slot.read(|rec| {
            rec.deltas
                .iter()
                .filter(|(d, v)| !failures.contains_key(*d) && !v.state.is_some_and(DeltaStateWire::is_final))
                .map(|(d, v)| (v.delta_id.clone(), d.clone()))
                .collect()
        });
        let poll = self.config.poll_interval();
        let fallback = poll * 4;
        let deadline = started + Duration::from_secs_f64(self.config.commit_timeout_secs);
        let mark = |domain: &str, state: DeltaStateWire| {
            slot.write(|rec| {
                if let Some(v) = rec.deltas.get_mut(domain) {
                    v.state = Some(state);
                }
                rec.timings.commit_per_rm_ms.insert(domain.to_owned(), ms(started.elapsed()));
            });
        };
        while !pending.is_empty() {
            if Instant::now() >= deadline {
                for (_, d) in std::mem::take(&mut pending) {
                    failures.insert(
                        d.clone(),
                        ErrorEnvelope::new(ErrorCode::BadState, json!({ "domain": d, "reason": "commit-timeout" })),
                    );
                }
                break;
            }
            let mut poll_now = true;
            if self.config.use_notify {
                match tokio::time::timeout(fallback, events.recv()).await {
                    Ok(Ok(n)) => {
                        poll_now = false;
                        if let (Some(delta_id), Some(state)) = (&n.delta_id, n.state) {
                            if state.is_final() {
                                if let Some(d) = pending.remove(delta_id) {
                                    mark(&d, state);
                                }
                            }
                        }
                    }
                    Ok(Err(broadcast::error::RecvError::Lagged(_))) => {}
                    Ok(Err(broadcast::error::RecvError::Closed)) => tokio::time::sleep(poll).await,
                    Err(_) => {}
                }
            } else {
                tokio::time::sleep(poll).await;
            }
            if poll_now {
                let polled = join_all(pending.iter().map(|(delta_id, d)| async move {
                    let r = match self.rm(d) {
                        Ok(rm) => {
                            let _permit = rm.permits.acquire().await.expect("permits never close");
                            rm.api.delta_status(delta_id).await.ok()
                        }
                        Err(_) => None,
                    };
                    (delta_id.clone(), r)
                }))
                .await;
                for (delta_id, r) in polled {
                    if let Some(record) = r.filter(|r| r.state.is_final()) {
                        let d = pending.remove(&delta_id).expect("polled ids are pending");
                        mark(&d, record.state);
                    }
                }
            }
        }

        let (committed, bad): (Vec<String>, Vec<String>) = slot.read(|rec| {
            let mut ok = vec![];
            let mut bad: Vec<String> = failures.keys().cloned().collect();
            for (d, v) in &rec.deltas {
                match v.state {
                    Some(DeltaStateWire::Committed) => ok.push(d.clone()),
                    _ if failures.contains_key(d) => {}
                    _ => bad.push(d.clone()),
                }
            }
            (ok, bad)
        });
        slot.write(|rec| rec.timings.commit_ms = Some(ms(started.elapsed())));
        if bad.is_empty() {
            slot.write(|rec| rec.set_state(ServiceState::Committed));
            info!(instance = %slot.read(|r| r.instance_id.clone()), "service committed");
        } else {
            let detail: BTreeMap<String, serde_json::Value> = bad
                .iter()
                .map(|d| {
                    let v = match failures.get(d) {
                        Some(e) => json!(e),
                        None => json!({ "state": slot.read(|r| r.deltas[d].state) }),
                    };
                    (d.clone(), v)
                })
                .collect();
            let expired = slot.read(|r| r.deltas.values().any(|v| v.state == Some(DeltaStateWire::Expired)));
            let code = if expired { ErrorCode::HoldExpired } else { ErrorCode::BadState };
            let e = ErrorEnvelope::new(code, json!({ "reason": "partial-commit", "failed": detail }));
            slot.write(|rec| {
                rec.set_state(ServiceState::Failed);
                rec.error = Some(e);
            });
            // Domains that did commit get compensating reductions; the rest
            // are released too in case their allocations linger.
            let mut all = committed;
            all.extend(bad);
            self.release(slot, &all, "compensate").await;
        }
        self.persist(slot).await;
    }

    /// Tears a service down, releasing whatever the RMs hold for it.
    pub async fn cancel(&self, id: &str) -> Result<ServiceResponse, ErrorEnvelope> {
        let slot = self.slot(id)?;
        let _op = slot.op.lock().await;
        let (state, domains) = slot.read(|r| {
            let held = r.deltas.iter().filter(|(_, v)| v.state.is_some()).map(|(d, _)| d.clone()).collect::<Vec<_>>();
            (r.state, held)
        });
        match state {
            ServiceState::Created | ServiceState::Computed => {}
            ServiceState::Reserved | ServiceState::Committing | ServiceState::Committed => {
                self.release(&slot, &domains, "cancel").await;
            }
            s => return Err(bad_state(id, s, "cancel")),
        }
        let response = slot.write(|rec| {
            rec.set_state(ServiceState::Cancelled);
            rec.response()
        });
        self.persist(&slot).await;
        Ok(response)
    }

    // -----------------------------------------------------------------
    // Release: rollback, cancel and compensation

    /// Sends reduction deltas to `domains`. Failures are retried in the
    /// background with exponential backoff; until confirmed, a domain is
    /// listed in `pending_release`.
    async fn release(&self, slot: &Slot, domains: &[String], purpose: &str) {
        let jobs: Vec<(String, String, Vec<String>)> = slot.read(|rec| {
            domains
                .iter()
                .filter_map(|d| {
                    let base = rec.deltas.get(d)?.delta_id.clone();
                    let id = Uuid::new_v5(&Uuid::NAMESPACE_URL, format!("{base}/{purpose}").as_bytes()).to_string();
                    let conns = rec.connection_ids_in(d);
                    (!conns.is_empty()).then(|| (d.clone(), id, conns))
                })
                .collect()
        });
        let results = join_all(jobs.iter().map(|(d, id, conns)| self.release_domain(d, id, conns))).await;
        let mut pending = vec![];
        for ((d, id, conns), r) in jobs.into_iter().zip(results) {
            if let Err(e) = r {
                warn!(domain = %d, error = %e, "release failed; retrying in background");
                pending.push((d, id, conns));
            }
        }
        if pending.is_empty() {
            return;
        }
        slot.write(|rec| rec.pending_release.extend(pending.iter().map(|p| p.0.clone())));
        let instance_id = slot.read(|r| r.instance_id.clone());
        // Background retries need an owned handle to this orchestrator's RMs
        // and the slot, which the registry provides.
        let rms: BTreeMap<String, Arc<dyn RmApi>> =
            pending.iter().map(|(d, _, _)| (d.clone(), self.rms[d].api.clone())).collect();
        let slot = self.slot(&instance_id).expect("releasing slot is registered");
        let policy = self.config.rollback;
        let poll = self.config.poll_interval();
        tokio::spawn(async move {
            for (d, id, conns) in pending {
                let rm = rms[&d].clone();
                let mut done = false;
                for attempt in 0..policy.attempts {
                    tokio::time::sleep(policy.delay(attempt)).await;
                    if release_via(rm.as_ref(), &d, &id, &conns, poll).await.is_ok() {
                        done = true;
                        break;
                    }
                }
                if done {
                    slot.write(|rec| rec.pending_release.retain(|x| x != &d));
                } else {
                    error!(domain = %d, instance = %instance_id, "release abandoned; operator attention needed");
                }
            }
        });
    }

    async fn release_domain(&self, domain: &str, delta_id: &str, conns: &[String]) -> Result<(), RmError> {
        let rm = self.rms[domain].api.clone();
        let _permit = self.rms[domain].permits.acquire().await.expect("permits never close");
        release_via(rm.as_ref(), domain, delta_id, conns, self.config.poll_interval()).await
    }

    // -----------------------------------------------------------------
    // Recovery

    async fn recover(self: &Arc<Self>, records: BTreeMap<String, InstanceRecord>) {
        let opts = self.config.normalize_options();
        let mut committing = vec![];
        let mut propagating = vec![];
        for (id, mut rec) in records {
            match normalize_intent(&rec.document, rec.now, &opts) {
                Ok(i) => rec.intent = Some(i),
                Err(e) => warn!(instance = %id, error = %e, "journaled intent no longer normalizes"),
            }
            match rec.state {
                ServiceState::Committing => committing.push(id.clone()),
                ServiceState::Propagating => propagating.push(id.clone()),
                _ => {}
            }
            let slot = Arc::new(Slot { op: Arc::new(AsyncMutex::new(())), rec: Mutex::new(rec) });
            self.instances.write().expect("instances lock").insert(id, slot);
        }
        for id in propagating {
            let slot = self.slot(&id).expect("just inserted");
            let domains: Vec<String> = slot.read(|r| r.deltas.keys().cloned().collect());
            info!(instance = %id, "rolling back reserve interrupted by restart");
            slot.write(|rec| {
                rec.set_state(ServiceState::Failed);
                rec.error = Some(ErrorEnvelope::new(ErrorCode::BadState, json!({ "reason": "interrupted-by-restart" })));
            });
            self.release(&slot, &domains, "reduction").await;
            self.persist(&slot).await;
        }
        for id in committing {
            info!(instance = %id, "re-polling commit interrupted by restart");
            let slot = self.slot(&id).expect("just inserted");
            let guard = slot.op.clone().lock_owned().await;
            let me = Arc::clone(self);
            let events = self.events.subscribe();
            tokio::spawn(async move {
                me.await_commit(&slot, Instant::now(), events, BTreeMap::new(), guard).await;
            });
        }
    }
}

/// Propagates and commits one reduction delta, then waits for it to settle.
/// Safe to repeat: an already issued reduction is resumed, not reissued.
async fn release_via(
    rm: &dyn RmApi,
    domain: &str,
    delta_id: &str,
    conns: &[String],
    poll: Duration,
) -> Result<(), RmError> {
    let existing = match rm.delta_status(delta_id).await {
        Ok(r) => Some(r.state),
        Err(RmError::Rejected(e)) if e.code == ErrorCode::UnknownDelta => None,
        Err(e) => return Err(e),
    };
    if existing.is_none() {
        let base = match rm.get_model(None).await? {
            ModelFetch::Modified(m) => m.version,
            ModelFetch::NotModified => 0,
        };
        let delta = ModelDelta {
            delta_id: delta_id.to_owned(),
            target_domain: domain.to_owned(),
            base_model_version: base,
            addition: vec![],
            reduction: conns.to_vec(),
        };
        rm.propagate(&delta).await?;
    }
    if matches!(existing, None | Some(DeltaStateWire::Propagated)) {
        rm.commit(delta_id).await?;
    }
    let poll = poll.min(Duration::from_millis(100));
    loop {
        let r = rm.delta_status(delta_id).await?;
        match r.state {
            DeltaStateWire::Committed => return Ok(()),
            DeltaStateWire::Committing | DeltaStateWire::Propagated => tokio::time::sleep(poll).await,
            s => {
                return Err(RmError::Rejected(ErrorEnvelope::new(
                    ErrorCode::BadState,
                    json!({ "delta_id": delta_id, "state": s }),
                )))
            }
        }
    }
}

/// A counter-proposal may only change vlans, one per connection in the
/// domain, and a changed vlan must be translatable at the domain's
/// boundary ports and must not override a pinned terminal label.
pub fn validate_counter_proposal(
    union: &UnionModel,
    intent: &ServiceIntent,
    original: &ModelDelta,
    proposed: &ModelDelta,
) -> Result<(), String> {
    if proposed.delta_id != original.delta_id || proposed.target_domain != original.target_domain {
        return Err("proposal names a different delta".into());
    }
    if proposed.reduction != original.reduction || proposed.addition.len() != original.addition.len() {
        return Err("proposal changes the delta's shape".into());
    }
    let mut vlan_of: BTreeMap<&str, u16> = BTreeMap::new();
    for (o, p) in original.addition.iter().zip(&proposed.addition) {
        if o.connection_id != p.connection_id
            || o.port_urn != p.port_urn
            || o.bandwidth != p.bandwidth
            || o.qos_class != p.qos_class
            || o.interval != p.interval
        {
            return Err(format!("proposal alters more than the vlan on {}", o.port_urn));
        }
        if *vlan_of.entry(&p.connection_id).or_insert(p.vlan) != p.vlan {
            return Err(format!("proposal splits connection {} across vlans", p.connection_id));
        }
    }
    let pinned: BTreeMap<Urn, u16> = intent
        .connections
        .iter()
        .flat_map(|c| c.terminals.iter())
        .filter_map(|t| Some((union.terminal_port(&t.uri).ok()?, t.vlan?)))
        .collect();
    for (o, p) in original.addition.iter().zip(&proposed.addition) {
        if o.vlan == p.vlan {
            continue;
        }
        if let Some(v) = pinned.get(&p.port_urn) {
            if *v != p.vlan {
                return Err(format!("terminal {} is pinned to vlan {v}", p.port_urn));
            }
        }
        let Some(port) = union.port(&p.port_urn) else {
            return Err(format!("unknown port {}", p.port_urn));
        };
        if port.alias.is_some() && !port.swap_capable {
            return Err(format!("boundary port {} cannot translate vlan {} to {}", p.port_urn, o.vlan, p.vlan));
        }
    }
    Ok(())
}

/// Folds an accepted counter-proposal into the design.
fn adopt(design: &mut ServiceDesign, i: usize, proposed: ModelDelta) {
    let domain = proposed.target_domain.clone();
    let vlans: BTreeMap<String, u16> =
        proposed.addition.iter().map(|s| (s.connection_id.clone(), s.vlan)).collect();
    for c in &mut design.connections {
        if let Some(v) = vlans.get(&c.connection_id) {
            c.vlans.insert(domain.clone(), *v);
            for s in c.segments.iter_mut().filter(|s| s.port_urn.domain() == domain) {
                s.vlan = *v;
            }
        }
    }
    design.deltas[i] = proposed;
}
