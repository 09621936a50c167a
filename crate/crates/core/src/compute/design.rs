use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::intent::{format_wire_time, ConnectionIntent, ServiceIntent};
use super::path::{find_path, lex_shortest};
use super::vlan::{path_boundaries, select_vlans};
use super::{ComputeError, View};
use crate::calendar::ReservationCalendar;
use crate::model::{Mbps, ModelDelta, QosClass, ReservationSegment, TimeInterval, Urn};
use crate::protocol::{BandwidthUnit, ConnectionSummary, DesignSummary, ServiceType};
use crate::topology::UnionModel;

/// One connection realized as concrete per-port reservation segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionDesign {
    pub name: String,
    pub connection_id: String,
    /// Path order for point-to-point, attachment order for trees.
    pub ports: Vec<Urn>,
    pub edges: Vec<(Urn, Urn)>,
    /// Domains in first-touch order.
    pub domains: Vec<String>,
    pub vlans: BTreeMap<String, u16>,
    pub bandwidth: Mbps,
    pub qos_class: QosClass,
    pub interval: TimeInterval,
    pub segments: Vec<ReservationSegment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDesign {
    pub service_id: String,
    pub revision: u32,
    pub connections: Vec<ConnectionDesign>,
    pub deltas: Vec<ModelDelta>,
}

impl ServiceDesign {
    /// Touched domains in delta order.
    pub fn domains(&self) -> Vec<&str> {
        self.deltas.iter().map(|d| d.target_domain.as_str()).collect()
    }

    pub fn segments(&self) -> impl Iterator<Item = &ReservationSegment> {
        self.connections.iter().flat_map(|c| c.segments.iter())
    }

    pub fn delta_for(&self, domain: &str) -> Option<&ModelDelta> {
        self.deltas.iter().find(|d| d.target_domain == domain)
    }
}

/// Private copy of the live calendars that absorbs this design's own
/// reservations as connections are placed.
struct Scratch<'a> {
    union: &'a UnionModel,
    calendars: BTreeMap<Urn, ReservationCalendar>,
    now: i64,
}

impl<'a> Scratch<'a> {
    fn new(union: &'a UnionModel, now: i64) -> Self {
        Scratch { union, calendars: union.calendars().clone(), now }
    }

    fn view(&self) -> View<'_> {
        View::scratch(self.union, &self.calendars)
    }

    fn debit(&mut self, segments: &[ReservationSegment]) -> Result<(), ComputeError> {
        for s in segments {
            let cal = self
                .calendars
                .get_mut(&s.port_urn)
                .ok_or_else(|| ComputeError::UnknownUrn(s.port_urn.to_string()))?;
            cal.try_hold(s.clone(), None, self.now, i64::MAX / 4)
                .map_err(|e| ComputeError::MalformedIntent(format!("design does not fit its own calendar: {e}")))?;
        }
        Ok(())
    }
}

fn requested(c: &ConnectionIntent) -> Result<Mbps, ComputeError> {
    c.bandwidth
        .ok_or_else(|| ComputeError::MalformedIntent(format!("connection {:?} has no capacity", c.name)))
}

fn terminal_ports(union: &UnionModel, c: &ConnectionIntent) -> Result<(Vec<Urn>, BTreeMap<Urn, u16>), ComputeError> {
    let mut ports = Vec::new();
    let mut pinned = BTreeMap::new();
    for t in &c.terminals {
        let p = union.terminal_port(&t.uri)?;
        if ports.contains(&p) {
            return Err(ComputeError::MalformedIntent(format!(
                "zero-length request: terminals of {:?} share port {p}",
                c.name
            )));
        }
        if let Some(v) = t.vlan {
            pinned.insert(p.clone(), v);
        }
        ports.push(p);
    }
    Ok((ports, pinned))
}

fn realize(
    union: &UnionModel,
    c: &ConnectionIntent,
    connection_id: String,
    ports: Vec<Urn>,
    edges: Vec<(Urn, Urn)>,
    vlans: BTreeMap<String, u16>,
    bandwidth: Mbps,
) -> ConnectionDesign {
    let mut domains: Vec<String> = Vec::new();
    let segments = ports
        .iter()
        .map(|p| {
            let d = union.port_domain(p).expect("design ports are located").to_owned();
            let vlan = vlans[&d];
            if !domains.contains(&d) {
                domains.push(d);
            }
            ReservationSegment {
                connection_id: connection_id.clone(),
                port_urn: p.clone(),
                vlan,
                bandwidth,
                qos_class: c.qos_class,
                interval: c.interval,
            }
        })
        .collect();
    ConnectionDesign {
        name: c.name.clone(),
        connection_id,
        ports,
        edges,
        domains,
        vlans,
        bandwidth,
        qos_class: c.qos_class,
        interval: c.interval,
        segments,
    }
}

fn p2p_connection(scratch: &Scratch<'_>, service_id: &str, c: &ConnectionIntent) -> Result<ConnectionDesign, ComputeError> {
    let union = scratch.union;
    let bandwidth = requested(c)?;
    let (ends, pinned) = terminal_ports(union, c)?;
    let view = scratch.view();
    let path = find_path(&view, &ends[0], &ends[1], c.interval, bandwidth, c.qos_class)?;
    let boundaries = path_boundaries(&view, &path);
    let vlans = select_vlans(&view, &path, &boundaries, c.interval, &pinned)?;
    let edges = path.windows(2).map(|w| (w[0].clone(), w[1].clone())).collect();
    Ok(realize(union, c, format!("{service_id}/{}", c.name), path, edges, vlans, bandwidth))
}

fn tree_connection(scratch: &Scratch<'_>, service_id: &str, c: &ConnectionIntent) -> Result<ConnectionDesign, ComputeError> {
    let union = scratch.union;
    let bandwidth = requested(c)?;
    let (terminals, pinned) = terminal_ports(union, c)?;
    let view = scratch.view();
    let avail = view.availability_map(c.interval, c.qos_class);
    let feasible = |u: &Urn| avail.get(u).copied().unwrap_or(0) >= bandwidth;
    let mut in_tree: BTreeSet<Urn> = BTreeSet::from([terminals[0].clone()]);
    let mut ports = vec![terminals[0].clone()];
    let mut edges = Vec::new();
    let mut remaining: Vec<Urn> = terminals[1..].to_vec();
    if !feasible(&terminals[0]) {
        return Err(ComputeError::NoPath { connection: None, terminal: Some(terminals[0].clone()), bottleneck: None });
    }
    while !remaining.is_empty() {
        let best = remaining
            .iter()
            .enumerate()
            .filter_map(|(i, t)| lex_shortest(union, t, &in_tree, feasible).map(|p| (i, p)))
            .min_by_key(|(i, p)| (p.len(), *i));
        let Some((i, path)) = best else {
            return Err(ComputeError::NoPath { connection: None, terminal: Some(remaining[0].clone()), bottleneck: None });
        };
        remaining.remove(i);
        // The path runs from the new terminal to its attachment point.
        for w in path.windows(2) {
            edges.push((w[1].clone(), w[0].clone()));
        }
        for p in path.into_iter().rev() {
            if in_tree.insert(p.clone()) {
                ports.push(p);
            }
        }
    }
    let boundaries: Vec<(Urn, Urn)> = edges
        .iter()
        .filter(|(a, b)| union.port_domain(a) != union.port_domain(b))
        .cloned()
        .collect();
    let vlans = select_vlans(&view, &ports, &boundaries, c.interval, &pinned)?;
    Ok(realize(union, c, format!("{service_id}/{}", c.name), ports, edges, vlans, bandwidth))
}

fn compute_with(
    intent: &ServiceIntent,
    union: &UnionModel,
    service_id: &str,
    revision: u32,
    place: fn(&Scratch<'_>, &str, &ConnectionIntent) -> Result<ConnectionDesign, ComputeError>,
) -> Result<ServiceDesign, ComputeError> {
    let mut scratch = Scratch::new(union, intent.now);
    let mut connections = Vec::with_capacity(intent.connections.len());
    for c in &intent.connections {
        let design = place(&scratch, service_id, c).map_err(|e| e.for_connection(&c.name))?;
        scratch.debit(&design.segments)?;
        connections.push(design);
    }
    let deltas = partition_deltas(&connections, union, service_id, revision);
    Ok(ServiceDesign {
        service_id: service_id.to_owned(),
        revision,
        connections,
        deltas,
    })
}

/// Point-to-point design; connections are placed in intent order and each
/// one sees the bandwidth and labels taken by the ones before it.
pub fn compute_p2p(
    intent: &ServiceIntent,
    union: &UnionModel,
    service_id: &str,
    revision: u32,
) -> Result<ServiceDesign, ComputeError> {
    compute_with(intent, union, service_id, revision, p2p_connection)
}

/// Multipoint bridge realized as a nearest-terminal incremental tree.
pub fn compute_multipoint(
    intent: &ServiceIntent,
    union: &UnionModel,
    service_id: &str,
    revision: u32,
) -> Result<ServiceDesign, ComputeError> {
    compute_with(intent, union, service_id, revision, tree_connection)
}

pub fn compute_design(
    intent: &ServiceIntent,
    union: &UnionModel,
    service_id: &str,
    revision: u32,
) -> Result<ServiceDesign, ComputeError> {
    match intent.service_type {
        ServiceType::MultiPathP2pVlan => compute_p2p(intent, union, service_id, revision),
        ServiceType::MultiPointVlanBridge => compute_multipoint(intent, union, service_id, revision),
    }
}

/// Caller-facing summary of a computed design, times rendered in the
/// intent's offset.
pub fn summarize(intent: &ServiceIntent, design: &ServiceDesign) -> DesignSummary {
    DesignSummary {
        service_alias: intent.service_alias.clone(),
        service_type: intent.service_type,
        connections: design
            .connections
            .iter()
            .map(|c| ConnectionSummary {
                name: c.name.clone(),
                domains: c.domains.clone(),
                ports: c.ports.clone(),
                vlans: c.vlans.clone(),
                bandwidth: c.bandwidth,
                unit: BandwidthUnit::Mbps,
                qos_class: c.qos_class,
                start: format_wire_time(c.interval.start, intent.offset),
                end: format_wire_time(c.interval.end, intent.offset),
            })
            .collect(),
    }
}

pub fn delta_id(service_id: &str, revision: u32, domain: &str) -> String {
    Uuid::new_v5(&Uuid::NAMESPACE_URL, format!("{service_id}/{revision}/{domain}").as_bytes()).to_string()
}

/// One delta per touched domain, in first-touch order, stamped with the
/// model version the design was computed against.
pub fn partition_deltas(
    connections: &[ConnectionDesign],
    union: &UnionModel,
    service_id: &str,
    revision: u32,
) -> Vec<ModelDelta> {
    let mut deltas: Vec<ModelDelta> = Vec::new();
    for s in connections.iter().flat_map(|c| c.segments.iter()) {
        let domain = s.port_urn.domain();
        let i = match deltas.iter().position(|d| d.target_domain == domain) {
            Some(i) => i,
            None => {
                deltas.push(ModelDelta {
                    delta_id: delta_id(service_id, revision, domain),
                    target_domain: domain.to_owned(),
                    base_model_version: union.model(domain).map(|m| m.version).unwrap_or(0),
                    addition: vec![],
                    reduction: vec![],
                });
                deltas.len() - 1
            }
        };
        deltas[i].addition.push(s.clone());
    }
    deltas
}
