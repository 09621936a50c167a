//! Wire contract shared by the orchestrator northbound interface, the
//! resource-manager API, and their clients.
//!
//! Every envelope decodes strictly: unknown fields are errors. Encoding is
//! canonical (sorted keys, two-space indentation, trailing newline), so
//! `encode(decode(bytes)) == bytes` for any canonical document.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{canonical_json, EpochSecs, ModelDelta, QosClass, Urn};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
}

pub fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    canonical_json(value)
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ProtocolError> {
    serde_json::from_slice(bytes).map_err(|e| ProtocolError::MalformedDocument(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    MalformedIntent,
    UnknownUrn,
    NoPath,
    NoLabel,
    InsufficientBandwidth,
    VlanConflict,
    HoldExpired,
    UnknownDelta,
    BadState,
    TooManyRounds,
    NoFeasibleWindow,
    NoFeasibleSchedule,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::MalformedIntent => 400,
            ErrorCode::UnknownUrn | ErrorCode::UnknownDelta => 404,
            ErrorCode::BadState | ErrorCode::TooManyRounds | ErrorCode::HoldExpired => 409,
            _ => 422,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorEnvelope {
    pub code: ErrorCode,
    pub detail: serde_json::Value,
}

impl ErrorEnvelope {
    pub fn new(code: ErrorCode, detail: serde_json::Value) -> Self {
        ErrorEnvelope { code, detail }
    }

    pub fn message(code: ErrorCode, message: impl Into<String>) -> Self {
        ErrorEnvelope {
            code,
            detail: serde_json::json!({ "message": message.into() }),
        }
    }
}

impl fmt::Display for ErrorEnvelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.detail)
    }
}

impl std::error::Error for ErrorEnvelope {}

/// Resource-manager delta states as they appear on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaStateWire {
    Propagated,
    Committing,
    Committed,
    Failed,
    Expired,
}

impl DeltaStateWire {
    pub fn is_final(self) -> bool {
        matches!(
            self,
            DeltaStateWire::Committed | DeltaStateWire::Failed | DeltaStateWire::Expired
        )
    }

    pub fn can_transition(self, to: DeltaStateWire) -> bool {
        use DeltaStateWire::*;
        matches!(
            (self, to),
            (Propagated, Committing) | (Propagated, Expired) | (Committing, Committed) | (Committing, Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaRecord {
    pub delta_id: String,
    pub state: DeltaStateWire,
    pub received_at: EpochSecs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committed_at: Option<EpochSecs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modified_delta: Option<ModelDelta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagateStatus {
    Accepted,
    Modified,
}

/// Reply to `POST /sense-rm/v1/deltas`. `modified` carries a counter-proposal
/// and places no hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateResponse {
    pub status: PropagateStatus,
    pub delta: ModelDelta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_expires_at: Option<EpochSecs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitAck {
    pub delta_id: String,
    pub state: DeltaStateWire,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriptionRequest {
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriptionResponse {
    pub subscription_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    ModelVersion,
    DeltaState,
}

/// Callback body POSTed to subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Notification {
    pub subscription_id: String,
    pub domain: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<DeltaStateWire>,
}

// ---------------------------------------------------------------------------
// Northbound intent documents

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServiceType {
    #[serde(rename = "Multi-Path P2P VLAN")]
    MultiPathP2pVlan,
    #[serde(rename = "Multi-Point VLAN Bridge")]
    MultiPointVlanBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthUnit {
    Mbps,
    Gbps,
}

impl BandwidthUnit {
    pub fn to_mbps(self, capacity: u64) -> u64 {
        match self {
            BandwidthUnit::Mbps => capacity,
            BandwidthUnit::Gbps => capacity * 1000,
        }
    }
}

/// Terminal label preference: the literal `"any"` or an explicit vlan id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelDoc {
    Any,
    Vlan(u16),
}

impl Serialize for LabelDoc {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LabelDoc::Any => s.serialize_str("any"),
            LabelDoc::Vlan(v) => s.serialize_u16(*v),
        }
    }
}

impl<'de> Deserialize<'de> for LabelDoc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Id(u16),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) if t == "any" => Ok(LabelDoc::Any),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("label must be \"any\" or a vlan id, got {t:?}"))),
            Raw::Id(v) => Ok(LabelDoc::Vlan(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalDoc {
    pub uri: Urn,
    pub label: LabelDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthDoc {
    pub qos_class: QosClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<BandwidthUnit>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<String>,
    #[serde(rename = "start-after", default, skip_serializing_if = "Option::is_none")]
    pub start_after: Option<String>,
    #[serde(rename = "end-before", default, skip_serializing_if = "Option::is_none")]
    pub end_before: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionDoc {
    pub name: String,
    pub terminals: Vec<TerminalDoc>,
    pub bandwidth: BandwidthDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ask {
    MaximumBandwidth,
    TotalBlockMaximumBandwidth,
    BandwidthSlidingWindow,
    TimeBandwidthProduct,
}

/// A duration given either as seconds or as a token such as `4h` / `+2d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DurationDoc {
    Seconds(i64),
    Token(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryOptions {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<DurationDoc>,
    #[serde(rename = "start-after", default, skip_serializing_if = "Option::is_none")]
    pub start_after: Option<String>,
    #[serde(rename = "end-before", default, skip_serializing_if = "Option::is_none")]
    pub end_before: Option<String>,
    #[serde(rename = "tbp-mbytes", default, skip_serializing_if = "Option::is_none")]
    pub tbp_mbytes: Option<u64>,
    #[serde(rename = "bandwidth-mbps <=", default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_max: Option<u64>,
    #[serde(rename = "bandwidth-mbps >=", default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_min: Option<u64>,
    #[serde(rename = "use-highest-bandwidth", default, skip_serializing_if = "Option::is_none")]
    pub use_highest_bandwidth: Option<bool>,
    #[serde(rename = "use-lowest-bandwidth", default, skip_serializing_if = "Option::is_none")]
    pub use_lowest_bandwidth: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryDoc {
    pub ask: Ask,
    pub options: QueryOptions,
}

/// Northbound service request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentDocument {
    pub service_type: ServiceType,
    pub service_alias: String,
    pub connections: Vec<ConnectionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<Vec<QueryDoc>>,
}

// ---------------------------------------------------------------------------
// Northbound responses

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthAnswer {
    pub qos_class: QosClass,
    pub capacity: u64,
    pub units: BandwidthUnit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerOptions {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<BandwidthUnit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<BandwidthUnit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<String>,
}

/// One answered query. Maximum-bandwidth answers echo the ask under
/// `asked`; scheduling answers under `ask`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ask: Option<Ask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asked: Option<Ask>,
    pub options: AnswerOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryResponseDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<BandwidthAnswer>,
    pub queries: Vec<AnswerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSummary {
    pub name: String,
    pub domains: Vec<String>,
    pub ports: Vec<Urn>,
    pub vlans: BTreeMap<String, u16>,
    pub bandwidth: u64,
    pub unit: BandwidthUnit,
    pub qos_class: QosClass,
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSummary {
    pub service_alias: String,
    pub service_type: ServiceType,
    pub connections: Vec<ConnectionSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceState {
    Created,
    Computed,
    ComputeFailed,
    Propagating,
    Reserved,
    Committing,
    Committed,
    Failed,
    Expired,
    Cancelled,
}

impl ServiceState {
    pub fn is_terminal(self) -> bool {
        use ServiceState::*;
        matches!(self, ComputeFailed | Failed | Expired | Cancelled)
    }

    /// Whether the lifecycle permits moving from `self` to `to`.
    pub fn can_transition(self, to: ServiceState) -> bool {
        use ServiceState::*;
        matches!(
            (self, to),
            (Created, Computed)
                | (Created, ComputeFailed)
                | (Computed, Propagating)
                | (Computed, Computed)
                | (Computed, ComputeFailed)
                | (Propagating, Reserved)
                | (Propagating, Failed)
                | (Reserved, Committing)
                | (Reserved, Expired)
                | (Reserved, Cancelled)
                | (Committing, Committed)
                | (Committing, Failed)
                | (Committing, Cancelled)
                | (Committed, Cancelled)
                | (Created, Cancelled)
                | (Computed, Cancelled)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceResponse {
    pub instance_id: String,
    pub state: ServiceState,
    pub revision: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<QueryResponseDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorEnvelope>,
}

/// Phase durations of one service, in milliseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTimings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compute_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagate_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub propagate_per_rm_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub commit_per_rm_ms: BTreeMap<String, f64>,
}

/// Per-domain view of the delta issued for a service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmDeltaView {
    pub delta_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<DeltaStateWire>,
}

/// Reply to `GET /sense-o/v1/services/{id}/status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceStatusDocument {
    pub instance_id: String,
    pub service_alias: String,
    pub state: ServiceState,
    pub revision: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<QueryResponseDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorEnvelope>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub deltas: BTreeMap<String, RmDeltaView>,
    pub phase_timings: PhaseTimings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_expires_at: Option<EpochSecs>,
    /// Domains whose release or rollback has not been confirmed yet.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pending_release: Vec<String>,
}

// ---------------------------------------------------------------------------
// Conformance corpus

/// Bumped whenever a golden document changes.
pub const CONFORMANCE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorKind {
    IntentRequest,
    IntentResponse,
    QueryRequest,
    QueryResponse,
    TbpRequest,
    TbpResponse,
}

#[derive(Debug, Clone, Copy)]
pub struct ConformanceVector {
    pub kind: VectorKind,
    /// Path relative to the corpus root, `conformance/{intent,query,tbp}/...`.
    pub path: &'static str,
    pub bytes: &'static [u8],
}

pub fn conformance_vectors() -> Vec<ConformanceVector> {
    macro_rules! vector {
        ($kind:expr, $path:literal) => {
            ConformanceVector {
                kind: $kind,
                path: $path,
                bytes: include_bytes!(concat!("../", $path)),
            }
        };
    }
    vec![
        vector!(VectorKind::IntentRequest, "conformance/intent/request.json"),
        vector!(VectorKind::IntentResponse, "conformance/intent/response.json"),
        vector!(VectorKind::QueryRequest, "conformance/query/request.json"),
        vector!(VectorKind::QueryResponse, "conformance/query/response.json"),
        vector!(VectorKind::TbpRequest, "conformance/tbp/request.json"),
        vector!(VectorKind::TbpResponse, "conformance/tbp/response.json"),
    ]
}

/// Decodes a vector with its envelope type and re-encodes it.
pub fn reencode_vector(v: &ConformanceVector) -> Result<Vec<u8>, ProtocolError> {
    Ok(match v.kind {
        VectorKind::IntentRequest | VectorKind::QueryRequest | VectorKind::TbpRequest => {
            encode(&decode::<IntentDocument>(v.bytes)?)
        }
        VectorKind::IntentResponse => encode(&decode::<DesignSummary>(v.bytes)?),
        VectorKind::QueryResponse | VectorKind::TbpResponse => {
            encode(&decode::<QueryResponseDocument>(v.bytes)?)
        }
    })
}

/// Writes the corpus below `root` using the vectors' relative paths.
pub fn write_conformance_corpus(root: &std::path::Path) -> std::io::Result<()> {
    for v in conformance_vectors() {
        let path = root.join(v.path);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, v.bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_documents_reencode_byte_identically() {
        for v in conformance_vectors() {
            let again = reencode_vector(&v).unwrap_or_else(|e| panic!("{}: {e}", v.path));
            assert_eq!(String::from_utf8(again).unwrap(), std::str::from_utf8(v.bytes).unwrap(), "{}", v.path);
        }
    }

    #[test]
    fn golden_request_is_ten_gbps() {
        let doc: IntentDocument = decode(conformance_vectors()[0].bytes).unwrap();
        assert_eq!(doc.service_type, ServiceType::MultiPathP2pVlan);
        assert_eq!(doc.service_alias, "sc18-p2p-b1");
        let c = &doc.connections[0];
        assert_eq!(c.bandwidth.capacity, Some(10));
        assert_eq!(c.bandwidth.unit, Some(BandwidthUnit::Gbps));
        assert_eq!(c.bandwidth.qos_class, QosClass::GuaranteedCapped);
        assert_eq!(c.terminals[0].uri.as_str(), "urn:ogf:network:nersc.gov:2013:server+dtm11.nersc.gov");
        assert_eq!(c.terminals[1].label, LabelDoc::Any);
    }

    #[test]
    fn golden_responses_carry_reported_values() {
        let v = conformance_vectors();
        let q: QueryResponseDocument = decode(v[3].bytes).unwrap();
        assert_eq!(q.bandwidth.as_ref().unwrap().capacity, 10_000);
        assert_eq!(q.queries[0].options.bandwidth, Some(100_000));
        let t: QueryResponseDocument = decode(v[5].bytes).unwrap();
        let o = &t.queries[0].options;
        assert_eq!(o.bandwidth, Some(5000));
        assert_eq!(o.start.as_deref(), Some("2018-9-01T10:00:00.000-0400"));
        assert_eq!(o.end.as_deref(), Some("2018-9-01T10:26:40.000-0400"));
    }

    #[test]
    fn corpus_is_pinned_to_its_version() {
        // FNV-1a over every golden file; changing a file requires bumping
        // CONFORMANCE_VERSION alongside this constant.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in conformance_vectors() {
            for &b in v.bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        assert_eq!((CONFORMANCE_VERSION, h), (1, PINNED_CORPUS_HASH));
    }

    const PINNED_CORPUS_HASH: u64 = 3_944_237_428_996_775_000;

    #[test]
    fn unknown_field_is_malformed() {
        let bytes = br#"{"service_type":"Multi-Path P2P VLAN","service_alias":"x","connections":[],"colour":1}"#;
        assert!(matches!(decode::<IntentDocument>(bytes), Err(ProtocolError::MalformedDocument(_))));
        let bytes = br#"{"service_type":"Multi-Path P3P","service_alias":"x","connections":[]}"#;
        assert!(decode::<IntentDocument>(bytes).is_err());
        let bytes = br#"{"code":"no-path","detail":{},"extra":true}"#;
        assert!(decode::<ErrorEnvelope>(bytes).is_err());
    }

    #[test]
    fn delta_states_follow_rm_lifecycle() {
        use DeltaStateWire::*;
        assert!(Propagated.can_transition(Committing));
        assert!(Propagated.can_transition(Expired));
        assert!(!Propagated.can_transition(Committed));
        assert!(!Committed.can_transition(Failed));
        assert!(Committed.is_final() && Expired.is_final() && !Committing.is_final());
    }

    fn arb_code() -> impl Strategy<Value = ErrorCode> {
        use ErrorCode::*;
        proptest::sample::select(vec![
            MalformedIntent, UnknownUrn, NoPath, NoLabel, InsufficientBandwidth, VlanConflict,
            HoldExpired, UnknownDelta, BadState, TooManyRounds, NoFeasibleWindow, NoFeasibleSchedule,
        ])
    }

    fn arb_state() -> impl Strategy<Value = DeltaStateWire> {
        use DeltaStateWire::*;
        proptest::sample::select(vec![Propagated, Committing, Committed, Failed, Expired])
    }

    proptest! {
        #[test]
        fn envelopes_round_trip(code in arb_code(), msg in "[a-z ]{0,20}", state in arb_state(),
                                id in "[a-f0-9-]{1,36}", at in any::<i32>(), v in any::<u32>()) {
            let e = ErrorEnvelope::message(code, msg);
            prop_assert_eq!(decode::<ErrorEnvelope>(&encode(&e)).unwrap(), e);
            let r = DeltaRecord { delta_id: id.clone(), state, received_at: at as i64, committed_at: None, modified_delta: None };
            prop_assert_eq!(decode::<DeltaRecord>(&encode(&r)).unwrap(), r);
            let n = Notification { subscription_id: id.clone(), domain: "d".into(), kind: EventKind::ModelVersion, version: Some(v as u64), delta_id: None, state: None };
            prop_assert_eq!(decode::<Notification>(&encode(&n)).unwrap(), n);
            let a = CommitAck { delta_id: id.clone(), state };
            prop_assert_eq!(decode::<CommitAck>(&encode(&a)).unwrap(), a);
            let st = ServiceStatusDocument {
                instance_id: id.clone(),
                service_alias: "a".into(),
                state: ServiceState::Committing,
                revision: v,
                design: None,
                answers: None,
                error: Some(ErrorEnvelope::message(code, "x")),
                deltas: BTreeMap::from([("d".to_owned(), RmDeltaView { delta_id: id, state: Some(state) })]),
                phase_timings: PhaseTimings { compute_ms: Some(at as f64 / 7.0), ..Default::default() },
                hold_expires_at: Some(at as i64),
                pending_release: vec!["d".into()],
            };
            prop_assert_eq!(decode::<ServiceStatusDocument>(&encode(&st)).unwrap(), st);
        }
    }
}
