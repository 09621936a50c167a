use std::collections::BTreeSet;

use super::intent::{format_wire_time, QueryKind, ServiceIntent, TbpMode};
use super::path::{find_path, widest_path};
use super::{ComputeError, View};
use crate::model::{EpochSecs, Mbps, QosClass, TimeInterval, Urn};
use crate::protocol::{AnswerDoc, AnswerOptions, Ask, BandwidthAnswer, BandwidthUnit, QueryResponseDocument};
use crate::topology::UnionModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxBandwidth {
    /// Widest path over the current allocations.
    pub capacity_now: Mbps,
    /// Widest path with every calendar empty.
    pub capability: Mbps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TbpSchedule {
    pub bandwidth: Mbps,
    pub interval: TimeInterval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryAnswer {
    MaximumBandwidth {
        name: String,
        qos_class: QosClass,
        result: MaxBandwidth,
    },
    TotalBlockMaximumBandwidth {
        name: String,
        bandwidth: Mbps,
        block: TimeInterval,
    },
    BandwidthSlidingWindow {
        name: String,
        bandwidth: Mbps,
        interval: TimeInterval,
    },
    TimeBandwidthProduct {
        name: String,
        schedule: TbpSchedule,
    },
}

/// Seconds needed to move `tbp_mbytes` at `mbps`, rounded up.
pub fn tbp_duration(tbp_mbytes: u64, mbps: Mbps) -> i64 {
    let bits = tbp_mbytes as u128 * 8;
    bits.div_ceil(mbps.max(1) as u128).min(i64::MAX as u128) as i64
}

pub fn query_max_bandwidth(
    union: &UnionModel,
    src: &Urn,
    dst: &Urn,
    interval: TimeInterval,
    qos: QosClass,
) -> Result<MaxBandwidth, ComputeError> {
    let (_, capacity_now) = widest_path(&View::live(union), src, dst, interval, qos)?;
    let (_, capability) = widest_path(&View::empty(union), src, dst, interval, qos)?;
    Ok(MaxBandwidth { capacity_now, capability })
}

/// Largest bandwidth continuously available end to end over `block`.
pub fn query_tbmb(union: &UnionModel, src: &Urn, dst: &Urn, block: TimeInterval, qos: QosClass) -> Result<Mbps, ComputeError> {
    if block.duration() <= 0 {
        return Err(ComputeError::MalformedIntent("block must have positive length".into()));
    }
    widest_path(&View::live(union), src, dst, block, qos).map(|(_, w)| w)
}

/// Allocation boundaries strictly inside `(after, until]`, ascending.
fn boundaries_within(union: &UnionModel, after: EpochSecs, until: EpochSecs) -> BTreeSet<EpochSecs> {
    let view = View::live(union);
    union
        .port_urns()
        .flat_map(|p| view.boundaries(p))
        .filter(|&t| t > after && t <= until)
        .collect()
}

fn fits(union: &UnionModel, src: &Urn, dst: &Urn, iv: TimeInterval, mbps: Mbps, qos: QosClass) -> Result<bool, ComputeError> {
    match find_path(&View::live(union), src, dst, iv, mbps, qos) {
        Ok(_) => Ok(true),
        Err(ComputeError::NoPath { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

fn earliest_fit(
    union: &UnionModel,
    src: &Urn,
    dst: &Urn,
    duration: i64,
    window: TimeInterval,
    mbps: Mbps,
    qos: QosClass,
) -> Result<Option<TimeInterval>, ComputeError> {
    if duration <= 0 || duration > window.duration() {
        return Ok(None);
    }
    let last = window.end - duration;
    let starts = std::iter::once(window.start).chain(boundaries_within(union, window.start, last));
    for t in starts {
        let iv = TimeInterval { start: t, end: t + duration };
        if fits(union, src, dst, iv, mbps, qos)? {
            return Ok(Some(iv));
        }
    }
    Ok(None)
}

/// Earliest `duration`-long interval inside `window` with a path of at
/// least `mbps` throughout. Only the window start and allocation
/// boundaries can be earliest starts, so only those are tried.
#[allow(clippy::too_many_arguments)]
pub fn query_bsw(
    union: &UnionModel,
    src: &Urn,
    dst: &Urn,
    duration: i64,
    window: TimeInterval,
    mbps: Mbps,
    qos: QosClass,
    name: &str,
) -> Result<TimeInterval, ComputeError> {
    earliest_fit(union, src, dst, duration, window, mbps, qos)?
        .ok_or_else(|| ComputeError::NoFeasibleWindow(name.to_owned()))
}

#[allow(clippy::too_many_arguments)]
pub fn query_tbp(
    union: &UnionModel,
    src: &Urn,
    dst: &Urn,
    tbp_mbytes: u64,
    window: TimeInterval,
    bmin: Option<Mbps>,
    bmax: Option<Mbps>,
    mode: TbpMode,
    qos: QosClass,
    name: &str,
) -> Result<TbpSchedule, ComputeError> {
    if tbp_mbytes == 0 {
        return Err(ComputeError::MalformedIntent("tbp-mbytes must be positive".into()));
    }
    let infeasible = || ComputeError::NoFeasibleSchedule(name.to_owned());
    let bmax = match bmax {
        Some(b) => b,
        None => widest_path(&View::empty(union), src, dst, window, qos)
            .map(|(_, w)| w)
            .map_err(|_| infeasible())?,
    };
    let bmin = bmin.unwrap_or(1).max(1);
    if bmin > bmax {
        return Err(infeasible());
    }
    let bits = tbp_mbytes as u128 * 8;
    let mut candidates: BTreeSet<Mbps> = BTreeSet::from([bmin, bmax]);
    for p in union.port_urns() {
        if let Some(cal) = union.calendar(p) {
            for (_, v) in cal.availability_steps(window, qos) {
                candidates.insert(v.clamp(bmin, bmax));
            }
        }
    }
    match mode {
        TbpMode::Highest => {
            for &b in candidates.iter().rev() {
                if let Some(interval) = earliest_fit(union, src, dst, tbp_duration(tbp_mbytes, b), window, b, qos)? {
                    return Ok(TbpSchedule { bandwidth: b, interval });
                }
            }
            Err(infeasible())
        }
        TbpMode::EarliestCompletion => {
            let mut best: Option<TbpSchedule> = None;
            for &b in candidates.iter().rev() {
                let Some(interval) = earliest_fit(union, src, dst, tbp_duration(tbp_mbytes, b), window, b, qos)? else {
                    continue;
                };
                // Descending bandwidth, so a tie keeps the larger one.
                if best.is_none_or(|x| interval.end < x.interval.end) {
                    best = Some(TbpSchedule { bandwidth: b, interval });
                }
            }
            best.ok_or_else(infeasible)
        }
        TbpMode::Lowest => {
            // The smallest feasible rate is bmin or the rate whose duration
            // exactly fills the gap from a candidate start to a boundary.
            let starts: Vec<EpochSecs> = std::iter::once(window.start)
                .chain(boundaries_within(union, window.start, window.end))
                .filter(|&t| t < window.end)
                .collect();
            let ends: Vec<EpochSecs> = boundaries_within(union, window.start, window.end)
                .into_iter()
                .chain(std::iter::once(window.end))
                .collect();
            let mut rates: BTreeSet<Mbps> = BTreeSet::from([bmin]);
            for &t in &starts {
                for &e in ends.iter().filter(|&&e| e > t) {
                    let b = bits.div_ceil((e - t) as u128).min(Mbps::MAX as u128) as Mbps;
                    if (bmin..=bmax).contains(&b) {
                        rates.insert(b);
                    }
                }
            }
            for b in rates {
                if let Some(interval) = earliest_fit(union, src, dst, tbp_duration(tbp_mbytes, b), window, b, qos)? {
                    return Ok(TbpSchedule { bandwidth: b, interval });
                }
            }
            Err(infeasible())
        }
    }
}

fn endpoints(union: &UnionModel, intent: &ServiceIntent, connection: usize) -> Result<(Urn, Urn), ComputeError> {
    let c = &intent.connections[connection];
    let src = union.terminal_port(&c.terminals[0].uri)?;
    let dst = union.terminal_port(&c.terminals[1].uri)?;
    Ok((src, dst))
}

/// Answers every query of a normalized intent. Queries are read-only; no
/// calendar is touched.
pub fn answer_queries(intent: &ServiceIntent, union: &UnionModel) -> Result<Vec<QueryAnswer>, ComputeError> {
    let mut out = Vec::with_capacity(intent.queries.len());
    for q in &intent.queries {
        let c = &intent.connections[q.connection];
        let name = c.name.clone();
        let (src, dst) = endpoints(union, intent, q.connection)?;
        let qos = c.qos_class;
        let answer = match &q.kind {
            QueryKind::MaximumBandwidth => QueryAnswer::MaximumBandwidth {
                result: query_max_bandwidth(union, &src, &dst, c.interval, qos).map_err(|e| e.for_connection(&name))?,
                qos_class: qos,
                name,
            },
            QueryKind::TotalBlockMaximumBandwidth { block } => QueryAnswer::TotalBlockMaximumBandwidth {
                bandwidth: query_tbmb(union, &src, &dst, *block, qos).map_err(|e| e.for_connection(&name))?,
                block: *block,
                name,
            },
            QueryKind::BandwidthSlidingWindow { duration, window, bandwidth } => QueryAnswer::BandwidthSlidingWindow {
                interval: query_bsw(union, &src, &dst, *duration, *window, *bandwidth, qos, &name)?,
                bandwidth: *bandwidth,
                name,
            },
            QueryKind::TimeBandwidthProduct { tbp_mbytes, window, bmin, bmax, mode } => QueryAnswer::TimeBandwidthProduct {
                schedule: query_tbp(union, &src, &dst, *tbp_mbytes, *window, *bmin, *bmax, *mode, qos, &name)?,
                name,
            },
        };
        out.push(answer);
    }
    Ok(out)
}

/// Wire rendering of query answers. The first maximum-bandwidth answer also
/// fills the top-level `bandwidth` block with the bandwidth available now.
pub fn render_answers(answers: &[QueryAnswer], intent: &ServiceIntent) -> QueryResponseDocument {
    let time = |t| Some(format_wire_time(t, intent.offset));
    let mut top = None;
    let queries = answers
        .iter()
        .map(|a| match a {
            QueryAnswer::MaximumBandwidth { name, qos_class, result } => {
                if top.is_none() {
                    top = Some(BandwidthAnswer {
                        qos_class: *qos_class,
                        capacity: result.capacity_now,
                        units: BandwidthUnit::Mbps,
                    });
                }
                AnswerDoc {
                    ask: None,
                    asked: Some(Ask::MaximumBandwidth),
                    options: AnswerOptions {
                        name: name.clone(),
                        bandwidth: Some(result.capability),
                        units: Some(BandwidthUnit::Mbps),
                        ..Default::default()
                    },
                }
            }
            QueryAnswer::TotalBlockMaximumBandwidth { name, bandwidth, block } => scheduled(
                Ask::TotalBlockMaximumBandwidth,
                name,
                *bandwidth,
                time(block.start),
                time(block.end),
            ),
            QueryAnswer::BandwidthSlidingWindow { name, bandwidth, interval } => scheduled(
                Ask::BandwidthSlidingWindow,
                name,
                *bandwidth,
                time(interval.start),
                time(interval.end),
            ),
            QueryAnswer::TimeBandwidthProduct { name, schedule } => scheduled(
                Ask::TimeBandwidthProduct,
                name,
                schedule.bandwidth,
                time(schedule.interval.start),
                time(schedule.interval.end),
            ),
        })
        .collect();
    QueryResponseDocument { bandwidth: top, queries }
}

fn scheduled(ask: Ask, name: &str, bandwidth: Mbps, start: Option<String>, end: Option<String>) -> AnswerDoc {
    AnswerDoc {
        ask: Some(ask),
        asked: None,
        options: AnswerOptions {
            name: name.to_owned(),
            bandwidth: Some(bandwidth),
            unit: Some(BandwidthUnit::Mbps),
            start,
            end,
            ..Default::default()
        },
    }
}
