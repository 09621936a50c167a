//! Stitches per-domain models into one multi-domain graph.
//!
//! Graph vertices are ports. Intra edges join ports of the same node (the
//! switching fabric) and ports joined by a declared link; inter edges join two
//! ports of different domains whose aliases name each other.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{ReservationCalendar, DEFAULT_OVERBOOK_FACTOR};
use crate::model::{DomainModel, NodeDesc, NodeKind, Port, Urn, Verbosity};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("domain {0} supplied more than once")]
    DuplicateDomain(String),
    #[error("unknown urn {0}")]
    UnknownUrn(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeScope {
    Intra,
    Inter,
}

/// Undirected port-to-port adjacency; `a < b` always.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub a: Urn,
    pub b: Urn,
    pub scope: EdgeScope,
}

impl Edge {
    fn new(x: Urn, y: Urn, scope: EdgeScope) -> Edge {
        if x <= y {
            Edge { a: x, b: y, scope }
        } else {
            Edge { a: y, b: x, scope }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PortEntry {
    domain: String,
    node: Urn,
    port: Port,
}

/// Result of resolving a URN against the union.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Located<'a> {
    Node { domain: &'a str, node: &'a NodeDesc },
    Port { domain: &'a str, node: &'a NodeDesc, port: &'a Port },
}

impl Located<'_> {
    pub fn domain(&self) -> &str {
        match self {
            Located::Node { domain, .. } | Located::Port { domain, .. } => domain,
        }
    }
}

/// Immutable snapshot of the stitched multi-domain graph.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionModel {
    models: BTreeMap<String, DomainModel>,
    edges: BTreeSet<Edge>,
    ports: BTreeMap<Urn, PortEntry>,
    nodes: BTreeMap<Urn, String>,
    adjacency: BTreeMap<Urn, BTreeSet<Urn>>,
    calendars: BTreeMap<Urn, ReservationCalendar>,
    overbook_factor: f64,
}

pub fn integrate_models(models: Vec<DomainModel>) -> Result<UnionModel, TopologyError> {
    UnionModel::integrate(models, DEFAULT_OVERBOOK_FACTOR)
}

impl UnionModel {
    pub fn empty(overbook_factor: f64) -> UnionModel {
        UnionModel {
            models: BTreeMap::new(),
            edges: BTreeSet::new(),
            ports: BTreeMap::new(),
            nodes: BTreeMap::new(),
            adjacency: BTreeMap::new(),
            calendars: BTreeMap::new(),
            overbook_factor,
        }
    }

    pub fn integrate(models: Vec<DomainModel>, overbook_factor: f64) -> Result<UnionModel, TopologyError> {
        let mut ids = BTreeSet::new();
        for m in &models {
            if !ids.insert(m.domain_id.clone()) {
                return Err(TopologyError::DuplicateDomain(m.domain_id.clone()));
            }
        }
        let mut union = UnionModel::empty(overbook_factor);
        let mut models = models;
        models.sort_by(|a, b| a.domain_id.cmp(&b.domain_id));
        for m in models {
            union.insert_domain(m);
        }
        Ok(union)
    }

    /// New snapshot with one domain's model replaced (or added). Only that
    /// domain's subgraph and the inter edges touching it are rebuilt.
    pub fn replace_model(&self, model: DomainModel) -> UnionModel {
        let mut next = self.clone();
        next.remove_domain(&model.domain_id.clone());
        next.insert_domain(model);
        next
    }

    pub fn without_domain(&self, domain: &str) -> UnionModel {
        let mut next = self.clone();
        next.remove_domain(domain);
        next
    }

    fn add_edge(&mut self, edge: Edge) {
        self.adjacency.entry(edge.a.clone()).or_default().insert(edge.b.clone());
        self.adjacency.entry(edge.b.clone()).or_default().insert(edge.a.clone());
        self.edges.insert(edge);
    }

    fn insert_domain(&mut self, model: DomainModel) {
        let domain = model.domain_id.clone();
        let usage: BTreeMap<&Urn, u64> = model
            .port_usage
            .iter()
            .flatten()
            .map(|u| (&u.port_urn, u.reserved))
            .collect();
        for node in &model.nodes {
            self.nodes.insert(node.urn.clone(), domain.clone());
            for port in &node.ports {
                self.ports.insert(
                    port.urn.clone(),
                    PortEntry {
                        domain: domain.clone(),
                        node: node.urn.clone(),
                        port: port.clone(),
                    },
                );
                self.adjacency.entry(port.urn.clone()).or_default();
                let reservable = match model.verbosity {
                    Verbosity::Summary => port
                        .reservable
                        .saturating_sub(usage.get(&port.urn).copied().unwrap_or(0)),
                    _ => port.reservable,
                };
                let cal = ReservationCalendar::with_overbook(
                    port.urn.clone(),
                    reservable,
                    port.labels.clone(),
                    self.overbook_factor,
                );
                self.calendars.insert(port.urn.clone(), cal);
            }
            for (i, p) in node.ports.iter().enumerate() {
                for q in &node.ports[i + 1..] {
                    self.add_edge(Edge::new(p.urn.clone(), q.urn.clone(), EdgeScope::Intra));
                }
            }
        }
        for link in &model.links {
            self.add_edge(Edge::new(link.a.clone(), link.b.clone(), EdgeScope::Intra));
        }
        for seg in model.reservations() {
            if let Some(cal) = self.calendars.get_mut(&seg.port_urn) {
                cal.load_committed(seg.clone());
            }
        }
        let mut inter = Vec::new();
        for port in model.ports() {
            let Some(alias) = &port.alias else { continue };
            let Some(peer) = self.ports.get(alias) else { continue };
            if peer.domain != domain && peer.port.alias.as_ref() == Some(&port.urn) {
                inter.push(Edge::new(port.urn.clone(), alias.clone(), EdgeScope::Inter));
            }
        }
        for e in inter {
            self.add_edge(e);
        }
        self.models.insert(domain, model);
    }

    fn remove_domain(&mut self, domain: &str) {
        let Some(model) = self.models.remove(domain) else { return };
        let gone: BTreeSet<Urn> = model.ports().map(|p| p.urn.clone()).collect();
        self.edges.retain(|e| !gone.contains(&e.a) && !gone.contains(&e.b));
        for urn in &gone {
            if let Some(neigh) = self.adjacency.remove(urn) {
                for n in neigh {
                    if let Some(set) = self.adjacency.get_mut(&n) {
                        set.remove(urn);
                    }
                }
            }
            self.ports.remove(urn);
            self.calendars.remove(urn);
        }
        for node in &model.nodes {
            self.nodes.remove(&node.urn);
        }
    }

    pub fn models(&self) -> &BTreeMap<String, DomainModel> {
        &self.models
    }

    pub fn model(&self, domain: &str) -> Option<&DomainModel> {
        self.models.get(domain)
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn overbook_factor(&self) -> f64 {
        self.overbook_factor
    }

    pub fn inter_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.scope == EdgeScope::Inter)
    }

    pub fn calendars(&self) -> &BTreeMap<Urn, ReservationCalendar> {
        &self.calendars
    }

    pub fn calendar(&self, port: &Urn) -> Option<&ReservationCalendar> {
        self.calendars.get(port)
    }

    pub fn port(&self, urn: &Urn) -> Option<&Port> {
        self.ports.get(urn).map(|e| &e.port)
    }

    pub fn port_domain(&self, urn: &Urn) -> Option<&str> {
        self.ports.get(urn).map(|e| e.domain.as_str())
    }

    pub fn port_node(&self, urn: &Urn) -> Option<&Urn> {
        self.ports.get(urn).map(|e| &e.node)
    }

    pub fn port_urns(&self) -> impl Iterator<Item = &Urn> {
        self.ports.keys()
    }

    pub fn neighbors(&self, urn: &Urn) -> impl Iterator<Item = &Urn> {
        self.adjacency.get(urn).into_iter().flatten()
    }

    pub fn is_edge(&self, a: &Urn, b: &Urn) -> bool {
        self.adjacency.get(a).is_some_and(|s| s.contains(b))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Declared intra-domain links plus inter-domain edges.
    pub fn link_count(&self) -> usize {
        self.models.values().map(|m| m.links.len()).sum::<usize>() + self.inter_edges().count()
    }

    /// Aliased port pairs whose capacities disagree. Path math uses the
    /// elementwise minimum because every port on a path is checked.
    pub fn warnings(&self) -> Vec<String> {
        self.inter_edges()
            .filter_map(|e| {
                let (pa, pb) = (self.port(&e.a)?, self.port(&e.b)?);
                (pa.capacity != pb.capacity || pa.reservable != pb.reservable).then(|| {
                    format!(
                        "aliased ports {} ({} mbps) and {} ({} mbps) disagree on capacity",
                        e.a, pa.reservable, e.b, pb.reservable
                    )
                })
            })
            .collect()
    }

    pub fn locate(&self, urn: &Urn) -> Result<Located<'_>, TopologyError> {
        let unknown = || TopologyError::UnknownUrn(urn.to_string());
        if let Some(entry) = self.ports.get(urn) {
            let model = &self.models[&entry.domain];
            let node = model.nodes.iter().find(|n| n.urn == entry.node).ok_or_else(unknown)?;
            let port = node.ports.iter().find(|p| &p.urn == urn).ok_or_else(unknown)?;
            return Ok(Located::Port { domain: &model.domain_id, node, port });
        }
        if let Some(domain) = self.nodes.get(urn) {
            let model = &self.models[domain];
            let node = model.nodes.iter().find(|n| &n.urn == urn).ok_or_else(unknown)?;
            return Ok(Located::Node { domain: &model.domain_id, node });
        }
        Err(unknown())
    }

    /// Port where a terminal attaches: the port itself, a DTN's first port,
    /// or a switch's first port that has no link leaving the node.
    pub fn terminal_port(&self, urn: &Urn) -> Result<Urn, TopologyError> {
        match self.locate(urn)? {
            Located::Port { port, .. } => Ok(port.urn.clone()),
            Located::Node { node, .. } => {
                let first = node
                    .ports
                    .first()
                    .ok_or_else(|| TopologyError::UnknownUrn(format!("{urn} has no ports")))?;
                if node.kind == NodeKind::Dtn {
                    return Ok(first.urn.clone());
                }
                let edge_facing = node.ports.iter().find(|p| {
                    self.neighbors(&p.urn)
                        .all(|n| self.port_node(n) == Some(&node.urn))
                });
                Ok(edge_facing.unwrap_or(first).urn.clone())
            }
        }
    }

    /// Ordered, de-duplicated list of domains a port path traverses.
    pub fn domains_on_path(&self, path: &[Urn]) -> Result<Vec<String>, TopologyError> {
        if path.is_empty() {
            return Err(TopologyError::InvalidPath("empty path".into()));
        }
        for pair in path.windows(2) {
            if !self.is_edge(&pair[0], &pair[1]) {
                return Err(TopologyError::InvalidPath(format!(
                    "{} and {} are not adjacent",
                    pair[0], pair[1]
                )));
            }
        }
        let mut out: Vec<String> = Vec::new();
        for urn in path {
            let d = self
                .port_domain(urn)
                .ok_or_else(|| TopologyError::InvalidPath(format!("unknown port {urn}")))?;
            if !out.iter().any(|x| x == d) {
                out.push(d.to_owned());
            }
        }
        Ok(out)
    }

    /// Node-level adjacency document for visualization dumps.
    pub fn export_graph(&self) -> GraphDocument {
        let nodes = self
            .models
            .values()
            .flat_map(|m| {
                m.nodes.iter().map(|n| GraphNode {
                    id: n.urn.clone(),
                    domain: m.domain_id.clone(),
                    kind: n.kind,
                    ports: n.ports.iter().map(|p| p.urn.clone()).collect(),
                })
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                let (na, nb) = (self.port_node(&e.a)?, self.port_node(&e.b)?);
                (na != nb).then(|| GraphEdge {
                    source: na.clone(),
                    target: nb.clone(),
                    source_port: e.a.clone(),
                    target_port: e.b.clone(),
                    scope: e.scope,
                })
            })
            .collect();
        GraphDocument { nodes, edges }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphNode {
    pub id: Urn,
    pub domain: String,
    pub kind: NodeKind,
    pub ports: Vec<Urn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphEdge {
    pub source: Urn,
    pub target: Urn,
    pub source_port: Urn,
    pub target_port: Urn,
    pub scope: EdgeScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::urn;
    use crate::model::{LabelRange, Link, Mbps};
    use proptest::prelude::*;

    fn port(u: &str, cap: Mbps, alias: Option<&str>) -> Port {
        Port {
            urn: urn(u),
            capacity: cap,
            reservable: cap,
            labels: LabelRange::vlan([(100, 200)]).unwrap(),
            swap_capable: false,
            alias: alias.map(urn),
        }
    }

    /// Single-switch domain `d` with ports `west`/`east` aliased to neighbours.
    fn chain_domain(d: &str, west: Option<&str>, east: Option<&str>) -> DomainModel {
        let sw = format!("urn:ogf:network:{d}:2020:sw");
        let mut ports = vec![port(&format!("{sw}:host"), 100_000, None)];
        if let Some(w) = west {
            ports.push(port(&format!("{sw}:west"), 100_000, Some(&format!("urn:ogf:network:{w}:2020:sw:east"))));
        }
        if let Some(e) = east {
            ports.push(port(&format!("{sw}:east"), 100_000, Some(&format!("urn:ogf:network:{e}:2020:sw:west"))));
        }
        DomainModel::new(DomainModel {
            domain_id: d.into(),
            version: 1,
            generated_at: 0,
            verbosity: Verbosity::Static,
            nodes: vec![NodeDesc { urn: urn(&sw), kind: NodeKind::Switch, ports }],
            links: vec![],
            port_usage: None,
            active_reservations: None,
        })
        .unwrap()
    }

    fn line(n: usize) -> Vec<DomainModel> {
        let names: Vec<String> = (0..n).map(|i| format!("d{i}.net")).collect();
        (0..n)
            .map(|i| {
                chain_domain(
                    &names[i],
                    (i > 0).then(|| names[i - 1].as_str()),
                    (i + 1 < n).then(|| names[i + 1].as_str()),
                )
            })
            .collect()
    }

    #[test]
    fn single_domain_has_only_intra_edges() {
        let mut m = chain_domain("a.net", None, None);
        let sw = "urn:ogf:network:a.net:2020:sw";
        m.nodes.push(NodeDesc {
            urn: urn("urn:ogf:network:a.net:2020:dtn"),
            kind: NodeKind::Dtn,
            ports: vec![port("urn:ogf:network:a.net:2020:dtn:nic", 100_000, None)],
        });
        m.nodes[0].ports.push(port(&format!("{sw}:down"), 100_000, None));
        m.links.push(Link::new(urn(&format!("{sw}:down")), urn("urn:ogf:network:a.net:2020:dtn:nic")));
        let u = integrate_models(vec![DomainModel::new(m).unwrap()]).unwrap();
        assert!(u.edges().iter().all(|e| e.scope == EdgeScope::Intra));
        assert_eq!(u.edges().len(), 2);
        assert_eq!(u.link_count(), 1);
    }

    #[test]
    fn line_of_three_has_two_inter_edges() {
        let u = integrate_models(line(3)).unwrap();
        let inter: Vec<(String, String)> = u.inter_edges().map(|e| (e.a.domain().into(), e.b.domain().into())).collect();
        // hand-enumerated: d0.east<->d1.west, d1.east<->d2.west
        assert_eq!(inter, vec![("d0.net".into(), "d1.net".into()), ("d1.net".into(), "d2.net".into())]);
    }

    #[test]
    fn one_sided_alias_makes_no_edge() {
        let a = chain_domain("a.net", None, Some("b.net"));
        let b = chain_domain("b.net", None, None);
        let u = integrate_models(vec![a, b]).unwrap();
        assert_eq!(u.inter_edges().count(), 0);
    }

    #[test]
    fn duplicate_domain_rejected() {
        let a = chain_domain("a.net", None, None);
        assert_eq!(
            integrate_models(vec![a.clone(), a]),
            Err(TopologyError::DuplicateDomain("a.net".into()))
        );
    }

    #[test]
    fn locate_resolves_nodes_and_ports() {
        let u = integrate_models(line(2)).unwrap();
        let node = urn("urn:ogf:network:d1.net:2020:sw");
        assert!(matches!(u.locate(&node), Ok(Located::Node { domain: "d1.net", .. })));
        let p = urn("urn:ogf:network:d0.net:2020:sw:east");
        match u.locate(&p).unwrap() {
            Located::Port { domain, port, .. } => {
                assert_eq!(domain, "d0.net");
                assert_eq!(port.urn, p);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(u.locate(&urn("urn:ogf:network:zz:2020:q")), Err(TopologyError::UnknownUrn(_))));
        assert_eq!(u.terminal_port(&node).unwrap(), urn("urn:ogf:network:d1.net:2020:sw:host"));
    }

    #[test]
    fn domains_on_path_dedups_in_order() {
        let u = integrate_models(line(3)).unwrap();
        let p = |s: &str| urn(s);
        let path = vec![
            p("urn:ogf:network:d0.net:2020:sw:host"),
            p("urn:ogf:network:d0.net:2020:sw:east"),
            p("urn:ogf:network:d1.net:2020:sw:west"),
            p("urn:ogf:network:d1.net:2020:sw:east"),
            p("urn:ogf:network:d2.net:2020:sw:west"),
        ];
        assert_eq!(u.domains_on_path(&path).unwrap(), vec!["d0.net", "d1.net", "d2.net"]);
        assert_eq!(u.domains_on_path(&path[..2]).unwrap(), vec!["d0.net"]);
        assert!(matches!(
            u.domains_on_path(&[path[0].clone(), path[4].clone()]),
            Err(TopologyError::InvalidPath(_))
        ));
    }

    #[test]
    fn replacing_a_model_touches_only_its_domain() {
        let u = integrate_models(line(3)).unwrap();
        let mut newer = chain_domain("d1.net", Some("d0.net"), None);
        newer.version = 2;
        let v = u.replace_model(newer.clone());
        let others = |x: &UnionModel| -> BTreeSet<Edge> {
            x.edges().iter().filter(|e| e.a.domain() != "d1.net" && e.b.domain() != "d1.net").cloned().collect()
        };
        assert_eq!(others(&u), others(&v));
        assert_eq!(v.inter_edges().count(), 1);
        let mut models = line(3);
        models[1] = newer;
        assert_eq!(v, integrate_models(models).unwrap());
    }

    #[test]
    fn capacity_mismatch_is_warned() {
        let a = chain_domain("a.net", None, Some("b.net"));
        let mut b = chain_domain("b.net", Some("a.net"), None);
        for p in &mut b.nodes[0].ports {
            p.reservable = 40_000;
        }
        let u = integrate_models(vec![a, b]).unwrap();
        assert_eq!(u.warnings().len(), 1);
    }

    #[test]
    fn export_counts_nodes() {
        let u = integrate_models(line(4)).unwrap();
        let g = u.export_graph();
        assert_eq!(g.nodes.len(), u.node_count());
        assert_eq!(g.edges.len(), 3);
    }

    proptest! {
        #[test]
        fn integration_is_order_insensitive(n in 1usize..7, seed in any::<u64>()) {
            let models = line(n);
            let mut shuffled = models.clone();
            let len = shuffled.len();
            for i in 0..len {
                let j = ((seed >> (i % 16)) as usize + i * 7) % len;
                shuffled.swap(i, j);
            }
            let u = integrate_models(models).unwrap();
            prop_assert_eq!(&u, &integrate_models(shuffled).unwrap());
            prop_assert_eq!(u.inter_edges().count(), n - 1);
        }
    }
}
