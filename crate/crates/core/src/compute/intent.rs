use chrono::{DateTime, FixedOffset, TimeZone};

use super::ComputeError;
use crate::model::{EpochSecs, Mbps, QosClass, TimeInterval, Urn};
use crate::protocol::{Ask, DurationDoc, IntentDocument, LabelDoc, QueryDoc, ScheduleDoc, ServiceType};

pub const DEFAULT_DURATION_SECS: i64 = 24 * 3600;

const WIRE_TIME_FORMAT: &str = "%Y-%-m-%dT%H:%M:%S%.3f%z";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeOptions {
    pub default_duration: i64,
    /// Offset for rendered times when the intent itself names none.
    pub display_offset: FixedOffset,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions {
            default_duration: DEFAULT_DURATION_SECS,
            display_offset: FixedOffset::east_opt(0).expect("zero offset"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalIntent {
    pub uri: Urn,
    pub vlan: Option<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionIntent {
    pub name: String,
    pub terminals: Vec<TerminalIntent>,
    pub qos_class: QosClass,
    /// Requested bandwidth in mbps; absent only for query-only intents.
    pub bandwidth: Option<Mbps>,
    pub interval: TimeInterval,
    /// Flexible placement window from `start-after` / `end-before`.
    pub window: Option<TimeInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbpMode {
    Highest,
    Lowest,
    EarliestCompletion,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryKind {
    MaximumBandwidth,
    TotalBlockMaximumBandwidth {
        block: TimeInterval,
    },
    BandwidthSlidingWindow {
        duration: i64,
        window: TimeInterval,
        bandwidth: Mbps,
    },
    TimeBandwidthProduct {
        tbp_mbytes: u64,
        window: TimeInterval,
        bmin: Option<Mbps>,
        bmax: Option<Mbps>,
        mode: TbpMode,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryIntent {
    /// Index into `ServiceIntent::connections`.
    pub connection: usize,
    pub kind: QueryKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceIntent {
    pub service_type: ServiceType,
    pub service_alias: String,
    pub connections: Vec<ConnectionIntent>,
    pub queries: Vec<QueryIntent>,
    pub now: EpochSecs,
    /// Offset used when rendering wire times back to the caller.
    pub offset: FixedOffset,
}

impl ServiceIntent {
    pub fn is_query(&self) -> bool {
        !self.queries.is_empty()
    }
}

/// Parses a wire time: `now`, `+<n>{d,h,m,s}`, or an ISO-8601 timestamp with
/// offset. Returns epoch seconds and the offset the caller wrote, if any.
pub fn parse_wire_time(value: &str, now: EpochSecs) -> Result<(EpochSecs, Option<FixedOffset>), ComputeError> {
    let v = value.trim();
    if v == "now" {
        return Ok((now, None));
    }
    if let Some(rest) = v.strip_prefix('+') {
        return Ok((now + parse_duration(rest)?, None));
    }
    for fmt in [WIRE_TIME_FORMAT, "%Y-%m-%dT%H:%M:%S%.f%:z", "%Y-%m-%dT%H:%M:%S%:z", "%Y-%m-%dT%H:%M:%S%z"] {
        if let Ok(t) = DateTime::parse_from_str(v, fmt) {
            return Ok((t.timestamp(), Some(*t.offset())));
        }
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(v) {
        return Ok((t.timestamp(), Some(*t.offset())));
    }
    Err(ComputeError::MalformedIntent(format!("unparseable time {value:?}")))
}

/// Parses `<n>d`, `<n>h`, `<n>m`, `<n>s` or a bare number of seconds.
pub fn parse_duration(value: &str) -> Result<i64, ComputeError> {
    let v = value.trim().trim_start_matches('+');
    let bad = || ComputeError::MalformedIntent(format!("unparseable duration {value:?}"));
    let (digits, scale) = match v.chars().last() {
        Some('d') => (&v[..v.len() - 1], 86_400),
        Some('h') => (&v[..v.len() - 1], 3_600),
        Some('m') => (&v[..v.len() - 1], 60),
        Some('s') => (&v[..v.len() - 1], 1),
        Some(c) if c.is_ascii_digit() => (v, 1),
        _ => return Err(bad()),
    };
    let n: i64 = digits.parse().map_err(|_| bad())?;
    if n < 0 {
        return Err(bad());
    }
    n.checked_mul(scale).ok_or_else(bad)
}

pub fn format_wire_time(t: EpochSecs, offset: FixedOffset) -> String {
    offset
        .timestamp_opt(t, 0)
        .single()
        .map(|d| d.format(WIRE_TIME_FORMAT).to_string())
        .unwrap_or_else(|| t.to_string())
}

fn interval(start: EpochSecs, end: EpochSecs, what: &str) -> Result<TimeInterval, ComputeError> {
    TimeInterval::new(start, end)
        .map_err(|_| ComputeError::InconsistentSchedule(format!("{what}: start {start} is not before end {end}")))
}

struct Resolver {
    now: EpochSecs,
    offset: Option<FixedOffset>,
}

impl Resolver {
    fn time(&mut self, v: &str) -> Result<EpochSecs, ComputeError> {
        let (t, off) = parse_wire_time(v, self.now)?;
        if self.offset.is_none() {
            self.offset = off;
        }
        Ok(t)
    }

    fn opt(&mut self, v: &Option<String>) -> Result<Option<EpochSecs>, ComputeError> {
        v.as_deref().map(|s| self.time(s)).transpose()
    }
}

fn schedule(
    doc: Option<&ScheduleDoc>,
    r: &mut Resolver,
    opts: &NormalizeOptions,
) -> Result<(TimeInterval, Option<TimeInterval>), ComputeError> {
    let empty = ScheduleDoc::default();
    let doc = doc.unwrap_or(&empty);
    let start = r.opt(&doc.start)?;
    let end = r.opt(&doc.end)?;
    let after = r.opt(&doc.start_after)?;
    let before = r.opt(&doc.end_before)?;
    let window = match (after, before) {
        (None, None) => None,
        (a, b) => {
            let a = a.unwrap_or(r.now);
            let b = b.unwrap_or(a + opts.default_duration);
            Some(interval(a, b, "window")?)
        }
    };
    let iv = match (start, end, window) {
        (Some(s), Some(e), _) => interval(s, e, "schedule")?,
        (Some(s), None, _) => interval(s, s + opts.default_duration, "schedule")?,
        (None, Some(e), _) => interval(r.now, e, "schedule")?,
        (None, None, Some(w)) => w,
        (None, None, None) => interval(r.now, r.now + opts.default_duration, "schedule")?,
    };
    if let Some(w) = window {
        if !w.contains(&iv) {
            return Err(ComputeError::InconsistentSchedule("schedule lies outside its window".into()));
        }
    }
    Ok((iv, window))
}

fn positive(v: Option<u64>, what: &str) -> Result<Option<u64>, ComputeError> {
    match v {
        Some(0) => Err(ComputeError::MalformedIntent(format!("{what} must be positive"))),
        other => Ok(other),
    }
}

fn query(
    q: &QueryDoc,
    connections: &[ConnectionIntent],
    r: &mut Resolver,
    opts: &NormalizeOptions,
) -> Result<QueryIntent, ComputeError> {
    let o = &q.options;
    let connection = connections
        .iter()
        .position(|c| c.name == o.name)
        .ok_or_else(|| ComputeError::MalformedIntent(format!("query names unknown connection {:?}", o.name)))?;
    let conn = &connections[connection];
    if conn.terminals.len() != 2 {
        return Err(ComputeError::MalformedIntent(format!(
            "queries need a two-terminal connection; {:?} has {}",
            conn.name,
            conn.terminals.len()
        )));
    }
    let window = |r: &mut Resolver| -> Result<TimeInterval, ComputeError> {
        let a = r.opt(&o.start_after)?;
        let b = r.opt(&o.end_before)?;
        match (a, b) {
            (None, None) => Ok(conn.window.unwrap_or(conn.interval)),
            (a, b) => {
                let a = a.unwrap_or(r.now);
                let b = b.unwrap_or(a + opts.default_duration);
                interval(a, b, "query window")
            }
        }
    };
    let kind = match q.ask {
        Ask::MaximumBandwidth => QueryKind::MaximumBandwidth,
        Ask::TotalBlockMaximumBandwidth => {
            let s = r.opt(&o.start)?.unwrap_or(conn.interval.start);
            let e = r.opt(&o.end)?.unwrap_or(conn.interval.end);
            QueryKind::TotalBlockMaximumBandwidth {
                block: interval(s, e, "block")?,
            }
        }
        Ask::BandwidthSlidingWindow => {
            let duration = match &o.duration {
                Some(DurationDoc::Seconds(s)) => *s,
                Some(DurationDoc::Token(t)) => parse_duration(t)?,
                None => return Err(ComputeError::MalformedIntent("bandwidth-sliding-window needs a duration".into())),
            };
            if duration <= 0 {
                return Err(ComputeError::MalformedIntent("duration must be positive".into()));
            }
            let bandwidth = positive(o.bandwidth_min, "bandwidth-mbps >=")?
                .or(conn.bandwidth)
                .ok_or_else(|| ComputeError::MalformedIntent("bandwidth-sliding-window needs a bandwidth".into()))?;
            QueryKind::BandwidthSlidingWindow {
                duration,
                window: window(r)?,
                bandwidth,
            }
        }
        Ask::TimeBandwidthProduct => {
            let tbp_mbytes = positive(o.tbp_mbytes, "tbp-mbytes")?
                .ok_or_else(|| ComputeError::MalformedIntent("time-bandwidth-product needs tbp-mbytes".into()))?;
            let bmin = positive(o.bandwidth_min, "bandwidth-mbps >=")?;
            let bmax = positive(o.bandwidth_max, "bandwidth-mbps <=")?;
            if let (Some(lo), Some(hi)) = (bmin, bmax) {
                if lo > hi {
                    return Err(ComputeError::MalformedIntent(format!("bandwidth bounds inverted: {lo} > {hi}")));
                }
            }
            let mode = match (o.use_highest_bandwidth.unwrap_or(false), o.use_lowest_bandwidth.unwrap_or(false)) {
                (true, true) => {
                    return Err(ComputeError::MalformedIntent(
                        "use-highest-bandwidth and use-lowest-bandwidth are exclusive".into(),
                    ))
                }
                (true, false) => TbpMode::Highest,
                (false, true) => TbpMode::Lowest,
                (false, false) => TbpMode::EarliestCompletion,
            };
            QueryKind::TimeBandwidthProduct {
                tbp_mbytes,
                window: window(r)?,
                bmin,
                bmax,
                mode,
            }
        }
    };
    Ok(QueryIntent { connection, kind })
}

pub fn normalize_intent(
    doc: &IntentDocument,
    now: EpochSecs,
    opts: &NormalizeOptions,
) -> Result<ServiceIntent, ComputeError> {
    if doc.connections.is_empty() {
        return Err(ComputeError::MalformedIntent("intent has no connections".into()));
    }
    let mut r = Resolver { now, offset: None };
    let queries = doc.queries.as_deref().unwrap_or_default();
    let mut connections = Vec::with_capacity(doc.connections.len());
    for c in &doc.connections {
        if connections.iter().any(|x: &ConnectionIntent| x.name == c.name) {
            return Err(ComputeError::MalformedIntent(format!("duplicate connection name {:?}", c.name)));
        }
        match doc.service_type {
            ServiceType::MultiPathP2pVlan if c.terminals.len() != 2 => {
                return Err(ComputeError::MalformedIntent(format!(
                    "point-to-point connection {:?} needs exactly 2 terminals, got {}",
                    c.name,
                    c.terminals.len()
                )))
            }
            ServiceType::MultiPointVlanBridge if c.terminals.len() < 3 => {
                return Err(ComputeError::MalformedIntent(format!(
                    "multipoint connection {:?} needs at least 3 terminals, got {}",
                    c.name,
                    c.terminals.len()
                )))
            }
            _ => {}
        }
        let terminals = c
            .terminals
            .iter()
            .map(|t| match t.label {
                LabelDoc::Any => Ok(TerminalIntent { uri: t.uri.clone(), vlan: None }),
                LabelDoc::Vlan(v) if (1..=4094).contains(&v) => Ok(TerminalIntent {
                    uri: t.uri.clone(),
                    vlan: Some(v),
                }),
                LabelDoc::Vlan(v) => Err(ComputeError::MalformedIntent(format!("vlan {v} outside 1..=4094"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bandwidth = match (c.bandwidth.capacity, c.bandwidth.unit) {
            (Some(0), _) => return Err(ComputeError::MalformedIntent("capacity must be positive".into())),
            (Some(cap), unit) => Some(
                unit.unwrap_or(crate::protocol::BandwidthUnit::Mbps)
                    .to_mbps(cap),
            ),
            (None, Some(_)) => return Err(ComputeError::MalformedIntent("unit given without capacity".into())),
            (None, None) if queries.is_empty() => {
                return Err(ComputeError::MalformedIntent(format!("connection {:?} has no capacity", c.name)))
            }
            (None, None) => None,
        };
        let (interval, window) = schedule(c.schedule.as_ref(), &mut r, opts)?;
        connections.push(ConnectionIntent {
            name: c.name.clone(),
            terminals,
            qos_class: c.bandwidth.qos_class,
            bandwidth,
            interval,
            window,
        });
    }
    let queries = queries
        .iter()
        .map(|q| query(q, &connections, &mut r, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ServiceIntent {
        service_type: doc.service_type,
        service_alias: doc.service_alias.clone(),
        connections,
        queries,
        now,
        offset: r.offset.unwrap_or(opts.display_offset),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{decode, BandwidthDoc, BandwidthUnit, ConnectionDoc, QueryOptions, TerminalDoc};

    const T: EpochSecs = 1_535_810_400;

    fn golden_request() -> IntentDocument {
        decode(include_bytes!("../../conformance/intent/request.json")).unwrap()
    }

    #[test]
    fn wire_time_matches_example_format() {
        let et = FixedOffset::west_opt(4 * 3600).unwrap();
        assert_eq!(format_wire_time(T, et), "2018-9-01T10:00:00.000-0400");
        assert_eq!(format_wire_time(T + 1600, et), "2018-9-01T10:26:40.000-0400");
        let (t, off) = parse_wire_time("2018-9-01T10:26:40.000-0400", 0).unwrap();
        assert_eq!((t, off), (T + 1600, Some(et)));
        assert_eq!(parse_wire_time("2018-09-01T14:00:00Z", 0).unwrap().0, T);
    }

    #[test]
    fn relative_tokens() {
        assert_eq!(parse_wire_time("now", T).unwrap().0, T);
        assert_eq!(parse_wire_time("+2d", T).unwrap().0, T + 172_800);
        assert_eq!(parse_wire_time("+3h", T).unwrap().0, T + 10_800);
        assert!(parse_wire_time("+2w", T).is_err());
        assert!(parse_wire_time("yesterday", T).is_err());
    }

    #[test]
    fn ten_gbps_becomes_ten_thousand_mbps() {
        let si = normalize_intent(&golden_request(), T, &NormalizeOptions::default()).unwrap();
        let c = &si.connections[0];
        assert_eq!(c.bandwidth, Some(10_000));
        assert_eq!(c.interval, TimeInterval { start: T, end: T + DEFAULT_DURATION_SECS });
        assert_eq!(c.terminals[0].vlan, None);
    }

    #[test]
    fn two_day_window_from_now() {
        let doc: IntentDocument = decode(include_bytes!("../../conformance/tbp/request.json")).unwrap();
        let si = normalize_intent(&doc, T, &NormalizeOptions::default()).unwrap();
        match &si.queries[0].kind {
            QueryKind::TimeBandwidthProduct { window, bmin, bmax, tbp_mbytes, mode } => {
                assert_eq!(*window, TimeInterval { start: T, end: T + 172_800 });
                assert_eq!((*bmin, *bmax, *tbp_mbytes), (Some(2000), Some(10_000), 1_000_000));
                assert_eq!(*mode, TbpMode::EarliestCompletion);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn terminal(u: &str) -> TerminalDoc {
        TerminalDoc { uri: Urn::parse(u).unwrap(), label: LabelDoc::Any }
    }

    #[test]
    fn p2p_with_three_terminals_is_malformed() {
        let mut doc = golden_request();
        doc.connections[0].terminals.push(terminal("urn:ogf:network:anl.gov:2013:dtn"));
        assert!(matches!(
            normalize_intent(&doc, T, &NormalizeOptions::default()),
            Err(ComputeError::MalformedIntent(_))
        ));
    }

    #[test]
    fn inverted_schedule_is_inconsistent() {
        let mut doc = golden_request();
        doc.connections[0].schedule = Some(ScheduleDoc {
            start: Some("+2h".into()),
            end: Some("+1h".into()),
            ..Default::default()
        });
        let err = normalize_intent(&doc, T, &NormalizeOptions::default()).unwrap_err();
        assert!(matches!(err, ComputeError::InconsistentSchedule(_)));
        assert_eq!(err.code(), crate::protocol::ErrorCode::MalformedIntent);
    }

    #[test]
    fn zero_volume_tbp_is_malformed() {
        let mut doc: IntentDocument = decode(include_bytes!("../../conformance/tbp/request.json")).unwrap();
        doc.queries.as_mut().unwrap()[0].options.tbp_mbytes = Some(0);
        assert!(matches!(
            normalize_intent(&doc, T, &NormalizeOptions::default()),
            Err(ComputeError::MalformedIntent(_))
        ));
    }

    #[test]
    fn query_must_name_a_connection() {
        let doc = IntentDocument {
            service_type: ServiceType::MultiPathP2pVlan,
            service_alias: "x".into(),
            connections: vec![ConnectionDoc {
                name: "a".into(),
                terminals: vec![terminal("urn:ogf:network:x.net:2013:a"), terminal("urn:ogf:network:x.net:2013:b")],
                bandwidth: BandwidthDoc { qos_class: QosClass::BestEffort, capacity: Some(1), unit: Some(BandwidthUnit::Gbps) },
                schedule: None,
            }],
            queries: Some(vec![QueryDoc {
                ask: Ask::MaximumBandwidth,
                options: QueryOptions { name: "b".into(), ..Default::default() },
            }]),
        };
        assert!(normalize_intent(&doc, T, &NormalizeOptions::default()).is_err());
    }
}
