//! Reduced multi-resource topology schema shared by the orchestrator and the
//! resource managers, its canonical JSON encoding, and delta application.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bandwidth in megabits per second.
pub type Mbps = u64;
/// Seconds since the Unix epoch.
pub type EpochSecs = i64;

pub const VLAN_MIN: u16 = 1;
pub const VLAN_MAX: u16 = 4094;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("invariant violation at {urn}: {reason}")]
    InvariantViolation { urn: String, reason: String },
    #[error("unknown port {0}")]
    UnknownPort(String),
    #[error("unknown connection {0}")]
    UnknownConnection(String),
    #[error("delta targets domain {delta} but model is {model}")]
    DomainMismatch { delta: String, model: String },
}

fn violation(urn: impl fmt::Display, reason: impl Into<String>) -> ModelError {
    ModelError::InvariantViolation {
        urn: urn.to_string(),
        reason: reason.into(),
    }
}

/// Hierarchical resource name of the form
/// `urn:ogf:network:<domain>:<year>:<local-id>[+<sub-id>...]`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Urn(String);

const URN_PREFIX: &str = "urn:ogf:network:";

impl Urn {
    pub fn parse(value: impl Into<String>) -> Result<Urn, ModelError> {
        let value = value.into();
        let bad = |why: &str| violation(&value, format!("bad urn: {why}"));
        let rest = value
            .strip_prefix(URN_PREFIX)
            .ok_or_else(|| bad("missing urn:ogf:network: prefix"))?;
        if value.chars().any(char::is_whitespace) {
            return Err(bad("contains whitespace"));
        }
        let mut parts = rest.splitn(3, ':');
        let domain = parts.next().unwrap_or_default();
        let year = parts.next().unwrap_or_default();
        let local = parts.next().unwrap_or_default();
        if domain.is_empty() {
            return Err(bad("empty domain"));
        }
        if year.len() != 4 || !year.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad("year must be four digits"));
        }
        if local.is_empty() || local.split('+').any(str::is_empty) {
            return Err(bad("empty local or sub identifier"));
        }
        Ok(Urn(value))
    }

    pub fn domain(&self) -> &str {
        let rest = &self.0[URN_PREFIX.len()..];
        rest.split(':').next().unwrap_or_default()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Child name `<self>:<suffix>`, used for port names under a node.
    pub fn child(&self, suffix: &str) -> Result<Urn, ModelError> {
        Urn::parse(format!("{}:{}", self.0, suffix))
    }
}

impl TryFrom<String> for Urn {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Urn::parse(value)
    }
}

impl From<Urn> for String {
    fn from(urn: Urn) -> String {
        urn.0
    }
}

impl fmt::Display for Urn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Urn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Urn({})", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Vlan,
}

/// Set of labels stored as sorted, coalesced inclusive intervals.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLabelRange", into = "RawLabelRange")]
pub struct LabelRange {
    kind: LabelKind,
    ranges: Vec<(u16, u16)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLabelRange {
    kind: LabelKind,
    ranges: Vec<[u16; 2]>,
}

impl TryFrom<RawLabelRange> for LabelRange {
    type Error = ModelError;
    fn try_from(raw: RawLabelRange) -> Result<Self, Self::Error> {
        let ranges: Vec<(u16, u16)> = raw.ranges.iter().map(|r| (r[0], r[1])).collect();
        for &(lo, hi) in &ranges {
            if lo < VLAN_MIN || hi > VLAN_MAX || lo > hi {
                return Err(violation(
                    format!("[{lo},{hi}]"),
                    "vlan range outside 1..=4094",
                ));
            }
        }
        let canonical = LabelRange::vlan(ranges.iter().copied())?;
        if canonical.ranges != ranges {
            return Err(ModelError::Malformed(
                "label ranges must be sorted and coalesced".into(),
            ));
        }
        Ok(canonical)
    }
}

impl From<LabelRange> for RawLabelRange {
    fn from(r: LabelRange) -> Self {
        RawLabelRange {
            kind: r.kind,
            ranges: r.ranges.iter().map(|&(lo, hi)| [lo, hi]).collect(),
        }
    }
}

impl LabelRange {
    /// Builds a vlan label set from arbitrary (possibly overlapping) intervals.
    pub fn vlan(ranges: impl IntoIterator<Item = (u16, u16)>) -> Result<LabelRange, ModelError> {
        let mut ranges: Vec<(u16, u16)> = ranges.into_iter().collect();
        for &(lo, hi) in &ranges {
            if lo < VLAN_MIN || hi > VLAN_MAX || lo > hi {
                return Err(violation(
                    format!("[{lo},{hi}]"),
                    "vlan range outside 1..=4094",
                ));
            }
        }
        ranges.sort_unstable();
        let mut merged: Vec<(u16, u16)> = Vec::with_capacity(ranges.len());
        for (lo, hi) in ranges {
            match merged.last_mut() {
                Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        Ok(LabelRange {
            kind: LabelKind::Vlan,
            ranges: merged,
        })
    }

    pub fn from_ids(ids: impl IntoIterator<Item = u16>) -> Result<LabelRange, ModelError> {
        LabelRange::vlan(ids.into_iter().map(|id| (id, id)))
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn ranges(&self) -> &[(u16, u16)] {
        &self.ranges
    }

    pub fn contains(&self, id: u16) -> bool {
        self.ranges.iter().any(|&(lo, hi)| lo <= id && id <= hi)
    }

    pub fn ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.ranges.iter().flat_map(|&(lo, hi)| lo..=hi)
    }

    pub fn to_set(&self) -> BTreeSet<u16> {
        self.ids().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QosClass {
    #[serde(rename = "guaranteedCapped")]
    GuaranteedCapped,
    #[serde(rename = "softCapped")]
    SoftCapped,
    #[serde(rename = "bestEffort")]
    BestEffort,
}

/// Half-open interval `[start, end)` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeInterval {
    pub start: EpochSecs,
    pub end: EpochSecs,
}

impl TimeInterval {
    pub fn new(start: EpochSecs, end: EpochSecs) -> Result<TimeInterval, ModelError> {
        if start >= end {
            return Err(violation(
                format!("[{start},{end})"),
                "interval start must precede end",
            ));
        }
        Ok(TimeInterval { start, end })
    }

    pub fn duration(&self) -> i64 {
        self.end - self.start
    }

    pub fn overlaps(&self, other: &TimeInterval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, other: &TimeInterval) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Port {
    pub urn: Urn,
    pub capacity: Mbps,
    pub reservable: Mbps,
    pub labels: LabelRange,
    pub swap_capable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<Urn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Switch,
    Dtn,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDesc {
    pub urn: Urn,
    pub kind: NodeKind,
    pub ports: Vec<Port>,
}

/// Declared intra-domain adjacency between ports of two nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub a: Urn,
    pub b: Urn,
}

impl Link {
    pub fn new(a: Urn, b: Urn) -> Link {
        if a <= b {
            Link { a, b }
        } else {
            Link { a: b, b: a }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verbosity {
    Static,
    Summary,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortUsage {
    pub port_urn: Urn,
    pub reserved: Mbps,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservationSegment {
    pub connection_id: String,
    pub port_urn: Urn,
    pub vlan: u16,
    pub bandwidth: Mbps,
    pub qos_class: QosClass,
    pub interval: TimeInterval,
}

impl ReservationSegment {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.interval.start >= self.interval.end {
            return Err(violation(&self.port_urn, "segment interval start >= end"));
        }
        if self.bandwidth == 0 {
            return Err(violation(&self.port_urn, "segment bandwidth must be positive"));
        }
        if !(VLAN_MIN..=VLAN_MAX).contains(&self.vlan) {
            return Err(violation(&self.port_urn, "segment vlan outside 1..=4094"));
        }
        if self.connection_id.is_empty() {
            return Err(violation(&self.port_urn, "segment without connection id"));
        }
        Ok(())
    }

    fn sort_key(&self) -> (&str, &Urn, EpochSecs, u16) {
        (&self.connection_id, &self.port_urn, self.interval.start, self.vlan)
    }
}

/// Versioned description of one resource manager's domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainModel {
    pub domain_id: String,
    pub version: u64,
    pub generated_at: EpochSecs,
    pub verbosity: Verbosity,
    pub nodes: Vec<NodeDesc>,
    #[serde(default)]
    pub links: Vec<Link>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port_usage: Option<Vec<PortUsage>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_reservations: Option<Vec<ReservationSegment>>,
}

impl DomainModel {
    /// Validates and canonicalizes a model. All constructors go through here.
    pub fn new(mut model: DomainModel) -> Result<DomainModel, ModelError> {
        model.canonicalize();
        model.validate()?;
        Ok(model)
    }

    fn canonicalize(&mut self) {
        for node in &mut self.nodes {
            node.ports.sort_by(|a, b| a.urn.cmp(&b.urn));
        }
        self.nodes.sort_by(|a, b| a.urn.cmp(&b.urn));
        for link in &mut self.links {
            if link.a > link.b {
                std::mem::swap(&mut link.a, &mut link.b);
            }
        }
        self.links.sort();
        if let Some(usage) = &mut self.port_usage {
            usage.sort_by(|a, b| a.port_urn.cmp(&b.port_urn));
        }
        if let Some(segments) = &mut self.active_reservations {
            segments.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.domain_id.is_empty() {
            return Err(violation("<model>", "empty domain_id"));
        }
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if node.urn.domain() != self.domain_id {
                return Err(violation(&node.urn, "node outside model domain"));
            }
            if !seen.insert(&node.urn) {
                return Err(violation(&node.urn, "duplicate urn"));
            }
            for port in &node.ports {
                if port.urn.domain() != self.domain_id {
                    return Err(violation(&port.urn, "port outside model domain"));
                }
                if !seen.insert(&port.urn) {
                    return Err(violation(&port.urn, "duplicate urn"));
                }
                if port.reservable > port.capacity {
                    return Err(violation(&port.urn, "reservable exceeds capacity"));
                }
                if let Some(alias) = &port.alias {
                    if alias.domain() == self.domain_id {
                        return Err(violation(&port.urn, "alias must name a foreign port"));
                    }
                }
            }
        }
        let ports: BTreeSet<&Urn> = self.ports().map(|p| &p.urn).collect();
        for link in &self.links {
            for end in [&link.a, &link.b] {
                if !ports.contains(end) {
                    return Err(violation(end, "link endpoint is not a port of this domain"));
                }
            }
            if link.a == link.b {
                return Err(violation(&link.a, "self link"));
            }
        }
        match (self.verbosity, &self.port_usage, &self.active_reservations) {
            (Verbosity::Static, None, None) => {}
            (Verbosity::Summary, Some(usage), None) => {
                for u in usage {
                    if !ports.contains(&u.port_urn) {
                        return Err(violation(&u.port_urn, "usage for unknown port"));
                    }
                }
            }
            (Verbosity::Full, None, Some(segments)) => {
                for s in segments {
                    s.validate()?;
                    if !ports.contains(&s.port_urn) {
                        return Err(violation(&s.port_urn, "reservation on unknown port"));
                    }
                }
            }
            _ => {
                return Err(violation(
                    "<model>",
                    "reservation detail does not match verbosity",
                ))
            }
        }
        Ok(())
    }

    pub fn ports(&self) -> impl Iterator<Item = &Port> {
        self.nodes.iter().flat_map(|n| n.ports.iter())
    }

    pub fn port(&self, urn: &Urn) -> Option<&Port> {
        self.ports().find(|p| &p.urn == urn)
    }

    pub fn reservations(&self) -> &[ReservationSegment] {
        self.active_reservations.as_deref().unwrap_or_default()
    }
}

/// Addition/reduction change-set exchanged during propagate and commit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDelta {
    pub delta_id: String,
    pub target_domain: String,
    pub base_model_version: u64,
    pub addition: Vec<ReservationSegment>,
    pub reduction: Vec<String>,
}

impl ModelDelta {
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut added = BTreeSet::new();
        for s in &self.addition {
            s.validate()?;
            if s.port_urn.domain() != self.target_domain {
                return Err(ModelError::UnknownPort(s.port_urn.to_string()));
            }
            added.insert(s.connection_id.as_str());
        }
        if let Some(c) = self.reduction.iter().find(|c| added.contains(c.as_str())) {
            return Err(violation(
                c,
                "connection appears in both addition and reduction",
            ));
        }
        Ok(())
    }

    pub fn connection_ids(&self) -> BTreeSet<&str> {
        self.addition
            .iter()
            .map(|s| s.connection_id.as_str())
            .collect()
    }
}

/// Canonical JSON encoding: sorted object keys, sorted arrays, trailing newline.
pub fn serialize_model(model: &DomainModel) -> Vec<u8> {
    let mut model = model.clone();
    model.canonicalize();
    canonical_json(&model)
}

pub fn parse_model(bytes: &[u8]) -> Result<DomainModel, ModelError> {
    let model: DomainModel =
        serde_json::from_slice(bytes).map_err(|e| classify_json_error(e, bytes))?;
    DomainModel::new(model)
}

pub fn serialize_delta(delta: &ModelDelta) -> Vec<u8> {
    let mut delta = delta.clone();
    delta
        .addition
        .sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    delta.reduction.sort();
    canonical_json(&delta)
}

pub fn parse_delta(bytes: &[u8]) -> Result<ModelDelta, ModelError> {
    let delta: ModelDelta =
        serde_json::from_slice(bytes).map_err(|e| classify_json_error(e, bytes))?;
    delta.validate()?;
    Ok(delta)
}

/// Invariant violations raised inside `try_from` conversions surface from
/// serde as data errors carrying our message; keep them distinguishable.
fn classify_json_error(e: serde_json::Error, _bytes: &[u8]) -> ModelError {
    let msg = e.to_string();
    if let Some(rest) = msg.strip_prefix("invariant violation at ") {
        let (urn, reason) = rest.split_once(": ").unwrap_or((rest, ""));
        let reason = reason.split(" at line ").next().unwrap_or(reason);
        return ModelError::InvariantViolation {
            urn: urn.to_string(),
            reason: reason.to_string(),
        };
    }
    ModelError::Malformed(msg)
}

/// Serializes through `serde_json::Value`, whose map type keeps keys sorted.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    let value = serde_json::to_value(value).expect("model types serialize infallibly");
    let mut out = serde_json::to_vec_pretty(&value).expect("json values serialize infallibly");
    out.push(b'\n');
    out
}

/// Applies a delta to a model, producing the next version.
pub fn apply_delta(model: &DomainModel, delta: &ModelDelta) -> Result<DomainModel, ModelError> {
    if delta.target_domain != model.domain_id {
        return Err(ModelError::DomainMismatch {
            delta: delta.target_domain.clone(),
            model: model.domain_id.clone(),
        });
    }
    delta.validate()?;
    for s in &delta.addition {
        if model.port(&s.port_urn).is_none() {
            return Err(ModelError::UnknownPort(s.port_urn.to_string()));
        }
    }
    let mut next = model.clone();
    next.version = model.version + 1;
    if let Some(segments) = &mut next.active_reservations {
        let present: BTreeSet<&str> = model
            .reservations()
            .iter()
            .map(|s| s.connection_id.as_str())
            .collect();
        if let Some(missing) = delta
            .reduction
            .iter()
            .find(|c| !present.contains(c.as_str()))
        {
            return Err(ModelError::UnknownConnection(missing.clone()));
        }
        let reduced: BTreeSet<&str> = delta.reduction.iter().map(String::as_str).collect();
        segments.retain(|s| !reduced.contains(s.connection_id.as_str()));
        segments.extend(delta.addition.iter().cloned());
    }
    DomainModel::new(next)
}

/// Multiset view of reservations keyed by connection id, used when comparing
/// model contents independently of ordering.
pub fn reservation_multiset(model: &DomainModel) -> BTreeMap<String, Vec<ReservationSegment>> {
    let mut out: BTreeMap<String, Vec<ReservationSegment>> = BTreeMap::new();
    for s in model.reservations() {
        out.entry(s.connection_id.clone()).or_default().push(s.clone());
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    }
    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn urn(s: &str) -> Urn {
        Urn::parse(s).unwrap()
    }

    pub fn port(urn_s: &str, cap: Mbps, alias: Option<&str>) -> Port {
        Port {
            urn: urn(urn_s),
            capacity: cap,
            reservable: cap,
            labels: LabelRange::vlan([(1780, 1799)]).unwrap(),
            swap_capable: false,
            alias: alias.map(urn),
        }
    }

    /// Two switches joined by one link, one port aliased to `peer.net`.
    pub fn esnet(verbosity: Verbosity) -> DomainModel {
        let sw1 = "urn:ogf:network:esnet:2013:sw1";
        let sw2 = "urn:ogf:network:esnet:2013:sw2";
        DomainModel::new(DomainModel {
            domain_id: "esnet".into(),
            version: 7,
            generated_at: 1_535_810_400,
            verbosity,
            nodes: vec![
                NodeDesc {
                    urn: urn(sw2),
                    kind: NodeKind::Switch,
                    ports: vec![
                        port(&format!("{sw2}:p2"), 100_000, Some("urn:ogf:network:peer.net:2013:sw:p1")),
                        port(&format!("{sw2}:p1"), 100_000, None),
                    ],
                },
                NodeDesc {
                    urn: urn(sw1),
                    kind: NodeKind::Switch,
                    ports: vec![
                        port(&format!("{sw1}:p1"), 100_000, None),
                        port(&format!("{sw1}:p2"), 100_000, None),
                    ],
                },
            ],
            links: vec![Link::new(urn(&format!("{sw1}:p2")), urn(&format!("{sw2}:p1")))],
            port_usage: match verbosity {
                Verbosity::Summary => Some(vec![]),
                _ => None,
            },
            active_reservations: match verbosity {
                Verbosity::Full => Some(vec![]),
                _ => None,
            },
        })
        .unwrap()
    }

    pub fn segment(conn: &str, port: &str, vlan: u16, bw: Mbps, start: i64, end: i64) -> ReservationSegment {
        ReservationSegment {
            connection_id: conn.into(),
            port_urn: urn(port),
            vlan,
            bandwidth: bw,
            qos_class: QosClass::GuaranteedCapped,
            interval: TimeInterval { start, end },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn urn_grammar() {
        let u = urn("urn:ogf:network:nersc.gov:2013:server+dtm11.nersc.gov");
        assert_eq!(u.domain(), "nersc.gov");
        assert!(Urn::parse("urn:ogf:network::2013:x").is_err());
        assert!(Urn::parse("urn:ogf:network:a.net:13:x").is_err());
        assert!(Urn::parse("urn:ogf:network:a.net:2013:x+").is_err());
        assert!(Urn::parse("urn:foo:a.net:2013:x").is_err());
        assert_eq!(u.child("eth0").unwrap().domain(), "nersc.gov");
    }

    #[test]
    fn label_range_coalesces() {
        let r = LabelRange::vlan([(5, 9), (1, 3), (4, 4), (20, 21)]).unwrap();
        assert_eq!(r.ranges(), &[(1, 9), (20, 21)]);
        assert!(LabelRange::vlan([(0, 5)]).is_err());
        assert!(LabelRange::vlan([(10, 4095)]).is_err());
    }

    #[test]
    fn empty_domain_serializes_with_version() {
        let m = DomainModel::new(DomainModel {
            domain_id: "empty.net".into(),
            version: 3,
            generated_at: 0,
            verbosity: Verbosity::Static,
            nodes: vec![],
            links: vec![],
            port_usage: None,
            active_reservations: None,
        })
        .unwrap();
        let text = String::from_utf8(serialize_model(&m)).unwrap();
        assert!(text.contains("\"nodes\": []"));
        assert!(text.contains("\"version\": 3"));
        assert_eq!(parse_model(text.as_bytes()).unwrap(), m);
    }

    #[test]
    fn fixture_round_trip_is_byte_stable() {
        let m = esnet(Verbosity::Full);
        let bytes = serialize_model(&m);
        let parsed = parse_model(&bytes).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(serialize_model(&parsed), bytes);
    }

    #[test]
    fn construction_order_does_not_change_bytes() {
        let a = esnet(Verbosity::Static);
        let mut b = a.clone();
        b.nodes.reverse();
        for n in &mut b.nodes {
            n.ports.reverse();
        }
        assert_eq!(serialize_model(&a), serialize_model(&b));
    }

    #[test]
    fn object_keys_are_sorted() {
        let text = String::from_utf8(serialize_model(&esnet(Verbosity::Full))).unwrap();
        let top: Vec<usize> = ["\"active_reservations\"", "\"domain_id\"", "\"generated_at\"", "\"links\"", "\"nodes\"", "\"verbosity\"", "\"version\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(top.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn vlan_zero_is_invariant_violation() {
        let m = esnet(Verbosity::Static);
        let mut doc: serde_json::Value = serde_json::from_slice(&serialize_model(&m)).unwrap();
        doc["nodes"][0]["ports"][0]["labels"]["ranges"][0] = serde_json::json!([0, 5]);
        let broken = serde_json::to_vec(&doc).unwrap();
        match parse_model(&broken) {
            Err(ModelError::InvariantViolation { .. }) => {}
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn reservable_over_capacity_names_port() {
        let m = esnet(Verbosity::Static);
        let text = String::from_utf8(serialize_model(&m)).unwrap();
        let broken = text.replacen("\"reservable\": 100000", "\"reservable\": 100001", 1);
        match parse_model(broken.as_bytes()) {
            Err(ModelError::InvariantViolation { urn, .. }) => assert!(urn.contains(":esnet:2013:sw1:p1")),
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn truncated_document_is_malformed() {
        let bytes = serialize_model(&esnet(Verbosity::Static));
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(parse_model(cut), Err(ModelError::Malformed(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = String::from_utf8(serialize_model(&esnet(Verbosity::Static))).unwrap();
        let extra = text.replacen("{", "{\"color\": 1,", 1);
        assert!(matches!(parse_model(extra.as_bytes()), Err(ModelError::Malformed(_))));
    }

    fn delta(add: Vec<ReservationSegment>, red: Vec<&str>) -> ModelDelta {
        ModelDelta {
            delta_id: "d".into(),
            target_domain: "esnet".into(),
            base_model_version: 7,
            addition: add,
            reduction: red.into_iter().map(String::from).collect(),
        }
    }

    #[test]
    fn empty_delta_only_bumps_version() {
        let m = esnet(Verbosity::Full);
        let next = apply_delta(&m, &delta(vec![], vec![])).unwrap();
        assert_eq!(next.version, m.version + 1);
        assert_eq!(DomainModel { version: m.version, ..next }, m);
    }

    #[test]
    fn add_then_reduce_restores_content() {
        let m = esnet(Verbosity::Full);
        let seg = segment("c1", "urn:ogf:network:esnet:2013:sw1:p1", 1780, 10_000, 0, 100);
        let added = apply_delta(&m, &delta(vec![seg.clone()], vec![])).unwrap();
        assert_eq!(added.reservations(), &[seg]);
        let restored = apply_delta(&added, &delta(vec![], vec!["c1"])).unwrap();
        assert_eq!(restored.version, m.version + 2);
        assert_eq!(reservation_multiset(&restored), reservation_multiset(&m));
        assert_eq!(DomainModel { version: m.version, ..restored }, m);
    }

    #[test]
    fn foreign_port_addition_rejected() {
        let m = esnet(Verbosity::Full);
        let seg = segment("c1", "urn:ogf:network:peer.net:2013:sw:p1", 1780, 10, 0, 100);
        assert!(matches!(
            apply_delta(&m, &delta(vec![seg], vec![])),
            Err(ModelError::UnknownPort(_))
        ));
        let seg = segment("c1", "urn:ogf:network:esnet:2013:sw9:p1", 1780, 10, 0, 100);
        assert!(matches!(
            apply_delta(&m, &delta(vec![seg], vec![])),
            Err(ModelError::UnknownPort(_))
        ));
    }

    #[test]
    fn unknown_reduction_rejected() {
        let m = esnet(Verbosity::Full);
        assert!(matches!(
            apply_delta(&m, &delta(vec![], vec!["ghost"])),
            Err(ModelError::UnknownConnection(_))
        ));
    }

    #[test]
    fn non_full_models_change_only_version() {
        let m = esnet(Verbosity::Summary);
        let seg = segment("c1", "urn:ogf:network:esnet:2013:sw1:p1", 1780, 10, 0, 100);
        let next = apply_delta(&m, &delta(vec![seg], vec![])).unwrap();
        assert_eq!(DomainModel { version: m.version, ..next }, m);
    }

    fn arb_model() -> impl Strategy<Value = DomainModel> {
        let port = (1u64..200_000, 0u64..=100, 1u16..4000, 0u16..50, any::<bool>(), any::<bool>());
        let node = (any::<bool>(), proptest::collection::vec(port, 1..4));
        let seg = (0usize..4, 1u16..4094, 1u64..1000, 0i64..10_000, 1i64..500, 0u8..3);
        (
            proptest::collection::vec(node, 0..5),
            proptest::collection::vec(seg, 0..6),
            0u64..1000,
            0u8..3,
        )
            .prop_map(|(nodes, segs, version, verb)| {
                let mut all_ports = vec![];
                let nodes: Vec<NodeDesc> = nodes
                    .into_iter()
                    .enumerate()
                    .map(|(i, (dtn, ports))| {
                        let nurn = urn(&format!("urn:ogf:network:d.net:2020:n{i}"));
                        let ports = ports
                            .into_iter()
                            .enumerate()
                            .map(|(j, (cap, pct, lo, width, swap, alias))| {
                                let p = Port {
                                    urn: nurn.child(&format!("p{j}")).unwrap(),
                                    capacity: cap,
                                    reservable: cap * pct / 100,
                                    labels: LabelRange::vlan([(lo, (lo + width).min(4094))]).unwrap(),
                                    swap_capable: swap,
                                    alias: alias.then(|| urn(&format!("urn:ogf:network:x.net:2020:n{i}:p{j}"))),
                                };
                                all_ports.push(p.urn.clone());
                                p
                            })
                            .collect();
                        NodeDesc { urn: nurn, kind: if dtn { NodeKind::Dtn } else { NodeKind::Switch }, ports }
                    })
                    .collect();
                let verbosity = [Verbosity::Static, Verbosity::Summary, Verbosity::Full][verb as usize];
                let segments: Vec<ReservationSegment> = if all_ports.is_empty() {
                    vec![]
                } else {
                    segs.into_iter()
                        .enumerate()
                        .map(|(k, (pi, vlan, bw, start, len, q))| ReservationSegment {
                            connection_id: format!("c{k}"),
                            port_urn: all_ports[pi % all_ports.len()].clone(),
                            vlan,
                            bandwidth: bw,
                            qos_class: [QosClass::GuaranteedCapped, QosClass::SoftCapped, QosClass::BestEffort][q as usize],
                            interval: TimeInterval { start, end: start + len },
                        })
                        .collect()
                };
                DomainModel::new(DomainModel {
                    domain_id: "d.net".into(),
                    version,
                    generated_at: 1000,
                    verbosity,
                    nodes,
                    links: vec![],
                    port_usage: (verbosity == Verbosity::Summary).then(|| {
                        all_ports.iter().map(|p| PortUsage { port_urn: p.clone(), reserved: 5 }).collect()
                    }),
                    active_reservations: (verbosity == Verbosity::Full).then_some(segments),
                })
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(m in arb_model()) {
            let bytes = serialize_model(&m);
            let parsed = parse_model(&bytes).unwrap();
            prop_assert_eq!(&parsed, &m);
            prop_assert_eq!(serialize_model(&parsed), bytes);
        }

        #[test]
        fn apply_delta_bumps_version_once(m in arb_model()) {
            let next = apply_delta(&m, &ModelDelta {
                delta_id: "x".into(),
                target_domain: m.domain_id.clone(),
                base_model_version: m.version,
                addition: vec![],
                reduction: vec![],
            }).unwrap();
            prop_assert_eq!(next.version, m.version + 1);
        }
    }
}
