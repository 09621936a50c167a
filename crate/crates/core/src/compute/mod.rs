//! Service computation: intent normalization, path search, label selection,
//! design partitioning and scheduling queries. Everything here is a pure
//! function of a union snapshot.

mod design;
mod intent;
mod path;
mod query;
mod vlan;

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;
use thiserror::Error;

use crate::calendar::ReservationCalendar;
use crate::model::{Mbps, QosClass, TimeInterval, Urn};
use crate::protocol::{ErrorCode, ErrorEnvelope};
use crate::topology::{TopologyError, UnionModel};

pub use design::{
    compute_design, compute_multipoint, compute_p2p, delta_id, partition_deltas, summarize, ConnectionDesign, ServiceDesign,
};
pub use intent::{
    format_wire_time, normalize_intent, parse_duration, parse_wire_time, ConnectionIntent, NormalizeOptions,
    QueryIntent, QueryKind, ServiceIntent, TbpMode, TerminalIntent, DEFAULT_DURATION_SECS,
};
pub use path::{find_path, lex_shortest, widest_path, Bottleneck};
pub use query::{
    answer_queries, query_bsw, query_max_bandwidth, query_tbmb, query_tbp, render_answers, tbp_duration,
    MaxBandwidth, QueryAnswer, TbpSchedule,
};
pub use vlan::select_vlans;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComputeError {
    #[error("malformed intent: {0}")]
    MalformedIntent(String),
    #[error("inconsistent schedule: {0}")]
    InconsistentSchedule(String),
    #[error("unknown urn {0}")]
    UnknownUrn(String),
    #[error("no path{}{}", connection.as_ref().map(|c| format!(" for {c}")).unwrap_or_default(),
            terminal.as_ref().map(|t| format!(" to attach {t}")).unwrap_or_default())]
    NoPath {
        connection: Option<String>,
        terminal: Option<Urn>,
        bottleneck: Option<Bottleneck>,
    },
    #[error("no common label in domain {domain}")]
    NoLabel { connection: Option<String>, domain: String },
    #[error("no feasible window for {0}")]
    NoFeasibleWindow(String),
    #[error("no feasible schedule for {0}")]
    NoFeasibleSchedule(String),
}

impl ComputeError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ComputeError::MalformedIntent(_) | ComputeError::InconsistentSchedule(_) => ErrorCode::MalformedIntent,
            ComputeError::UnknownUrn(_) => ErrorCode::UnknownUrn,
            ComputeError::NoPath { .. } => ErrorCode::NoPath,
            ComputeError::NoLabel { .. } => ErrorCode::NoLabel,
            ComputeError::NoFeasibleWindow(_) => ErrorCode::NoFeasibleWindow,
            ComputeError::NoFeasibleSchedule(_) => ErrorCode::NoFeasibleSchedule,
        }
    }

    pub fn envelope(&self) -> ErrorEnvelope {
        let detail = match self {
            ComputeError::NoPath { connection, terminal, bottleneck } => json!({
                "message": self.to_string(),
                "connection": connection,
                "terminal": terminal,
                "bottleneck": bottleneck,
            }),
            ComputeError::NoLabel { connection, domain } => json!({
                "message": self.to_string(),
                "connection": connection,
                "domain": domain,
            }),
            ComputeError::InconsistentSchedule(m) => json!({ "message": self.to_string(), "reason": "inconsistent-schedule", "detail": m }),
            _ => json!({ "message": self.to_string() }),
        };
        ErrorEnvelope::new(self.code(), detail)
    }

    pub(crate) fn for_connection(self, name: &str) -> ComputeError {
        match self {
            ComputeError::NoPath { connection: None, terminal, bottleneck } => ComputeError::NoPath {
                connection: Some(name.to_owned()),
                terminal,
                bottleneck,
            },
            ComputeError::NoLabel { connection: None, domain } => ComputeError::NoLabel {
                connection: Some(name.to_owned()),
                domain,
            },
            other => other,
        }
    }
}

impl From<TopologyError> for ComputeError {
    fn from(e: TopologyError) -> Self {
        match e {
            TopologyError::UnknownUrn(u) => ComputeError::UnknownUrn(u),
            other => ComputeError::MalformedIntent(other.to_string()),
        }
    }
}

/// Availability oracle over a union: either its live calendars, a scratch
/// copy carrying this design's own debits, or empty calendars.
#[derive(Clone, Copy)]
pub struct View<'a> {
    union: &'a UnionModel,
    calendars: Calendars<'a>,
}

#[derive(Clone, Copy)]
enum Calendars<'a> {
    Live,
    Scratch(&'a BTreeMap<Urn, ReservationCalendar>),
    Empty,
}

impl<'a> View<'a> {
    pub fn live(union: &'a UnionModel) -> View<'a> {
        View { union, calendars: Calendars::Live }
    }

    pub fn empty(union: &'a UnionModel) -> View<'a> {
        View { union, calendars: Calendars::Empty }
    }

    pub fn scratch(union: &'a UnionModel, calendars: &'a BTreeMap<Urn, ReservationCalendar>) -> View<'a> {
        View { union, calendars: Calendars::Scratch(calendars) }
    }

    pub fn union(&self) -> &'a UnionModel {
        self.union
    }

    fn calendar(&self, port: &Urn) -> Option<&'a ReservationCalendar> {
        match self.calendars {
            Calendars::Live | Calendars::Empty => self.union.calendar(port),
            Calendars::Scratch(c) => c.get(port),
        }
    }

    /// Guaranteed-minimum availability on `port` over `interval`.
    pub fn available(&self, port: &Urn, interval: TimeInterval, qos: QosClass) -> Mbps {
        match (self.calendars, self.calendar(port)) {
            (_, None) => 0,
            (Calendars::Empty, Some(c)) => c.cleared().available_bandwidth(interval, qos),
            (_, Some(c)) => c.available_bandwidth(interval, qos),
        }
    }

    pub fn labels(&self, port: &Urn, interval: TimeInterval) -> BTreeSet<u16> {
        match (self.calendars, self.calendar(port)) {
            (_, None) => BTreeSet::new(),
            (Calendars::Empty, Some(c)) => c.labels().to_set(),
            (_, Some(c)) => c.available_labels(interval),
        }
    }

    pub fn boundaries(&self, port: &Urn) -> BTreeSet<i64> {
        match (self.calendars, self.calendar(port)) {
            (Calendars::Empty, _) | (_, None) => BTreeSet::new(),
            (_, Some(c)) => c.boundaries(),
        }
    }

    /// Availability of every port in the union.
    pub fn availability_map(&self, interval: TimeInterval, qos: QosClass) -> BTreeMap<Urn, Mbps> {
        self.union
            .port_urns()
            .map(|p| (p.clone(), self.available(p, interval, qos)))
            .collect()
    }
}
