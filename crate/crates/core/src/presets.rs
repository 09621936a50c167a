//! Reference topologies: the eight-domain testbed roster and a seeded
//! scale-out generator.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DomainModel, LabelRange, Link, Mbps, NodeDesc, NodeKind, Port, Urn, Verbosity};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PresetError {
    #[error("disconnected topology spec: {0}")]
    DisconnectedSpec(String),
    #[error("invalid topology spec: {0}")]
    Invalid(String),
}

/// Whether a domain is a wide-area network or an end site with DTNs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRole {
    Network,
    EndSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDomain {
    pub role: DomainRole,
    pub model: DomainModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub transit_domains: usize,
    pub endsite_domains: usize,
    pub dtns_per_endsite: usize,
    /// Transit domains each end site attaches to.
    pub uplinks_per_endsite: usize,
    /// Random transit-to-transit links added on top of a ring.
    pub transit_chords: usize,
    pub capacity_mbps: Mbps,
    pub label_range: (u16, u16),
    pub seed: u64,
}

impl TopologySpec {
    pub fn scaleout67(seed: u64) -> TopologySpec {
        TopologySpec {
            transit_domains: 42,
            endsite_domains: 25,
            dtns_per_endsite: 1,
            uplinks_per_endsite: 2,
            transit_chords: 90,
            capacity_mbps: 100_000,
            label_range: (1000, 1999),
            seed,
        }
    }
}

const YEAR: &str = "2013";

fn urn(s: String) -> Urn {
    Urn::parse(s).expect("preset urns follow the grammar")
}

struct DomainBuilder {
    domain: String,
    nodes: BTreeMap<String, NodeDesc>,
    links: Vec<Link>,
    capacity: Mbps,
    labels: LabelRange,
}

impl DomainBuilder {
    fn new(domain: &str, capacity: Mbps, labels: (u16, u16)) -> Self {
        DomainBuilder {
            domain: domain.to_owned(),
            nodes: BTreeMap::new(),
            links: Vec::new(),
            capacity,
            labels: LabelRange::vlan([labels]).expect("preset label range is valid"),
        }
    }

    fn node_urn(&self, local: &str) -> Urn {
        urn(format!("urn:ogf:network:{}:{YEAR}:{local}", self.domain))
    }

    fn port_urn(&self, node: &str, port: &str) -> Urn {
        urn(format!("urn:ogf:network:{}:{YEAR}:{node}:{port}", self.domain))
    }

    fn node(&mut self, local: &str, kind: NodeKind) {
        let u = self.node_urn(local);
        self.nodes.entry(local.to_owned()).or_insert(NodeDesc { urn: u, kind, ports: vec![] });
    }

    fn port(&mut self, node: &str, port: &str, alias: Option<Urn>) -> Urn {
        let u = self.port_urn(node, port);
        let n = self.nodes.get_mut(node).expect("node declared before its ports");
        n.ports.push(Port {
            urn: u.clone(),
            capacity: self.capacity,
            reservable: self.capacity,
            labels: self.labels.clone(),
            swap_capable: n.kind == NodeKind::Switch,
            alias,
        });
        u
    }

    fn link(&mut self, a: Urn, b: Urn) {
        self.links.push(Link::new(a, b));
    }

    fn build(self, verbosity: Verbosity) -> DomainModel {
        DomainModel::new(DomainModel {
            domain_id: self.domain,
            version: 1,
            generated_at: 0,
            verbosity,
            nodes: self.nodes.into_values().collect(),
            links: self.links,
            port_usage: (verbosity == Verbosity::Summary).then(Vec::new),
            active_reservations: (verbosity == Verbosity::Full).then(Vec::new),
        })
        .expect("preset models are valid")
    }
}

/// Port URN of the inter-domain interface on `domain`'s `node` facing `peer`.
fn facing(domain: &str, node: &str, peer: &str) -> Urn {
    urn(format!("urn:ogf:network:{domain}:{YEAR}:{node}:to-{peer}"))
}

/// DTN URNs of the eight-domain testbed, by end-site domain.
pub const BASELINE8_DTNS: [(&str, &str); 5] = [
    ("nersc.gov", "server+dtm11.nersc.gov"),
    ("anl.gov", "server+dtn01.anl.gov"),
    ("fnal.gov", "server+dtn01.fnal.gov"),
    ("caltech.edu", "server+xfer-2.ultralight.org"),
    ("umd.edu", "server+dtn01.umd.edu"),
];

pub const ESNET: &str = "es.net";
pub const ESNET_TESTBED: &str = "testbed.es.net";
pub const CENIC: &str = "cenic.net";

pub fn dtn_urn(domain: &str, local: &str) -> Urn {
    urn(format!("urn:ogf:network:{domain}:{YEAR}:{local}"))
}

/// The eight-domain testbed: three networks and five DTN end sites.
///
/// NERSC reaches the production network only through the testbed network
/// and Caltech only through CENIC, so the point-to-point and multipoint
/// services between these sites touch 3 to 8 domains.
pub fn baseline8(verbosity: Verbosity) -> Vec<GeneratedDomain> {
    let cap = 100_000;
    let labels = (1780, 1899);
    // (end site, network, network node)
    let uplinks = [
        ("nersc.gov", ESNET_TESTBED, "sw"),
        ("anl.gov", ESNET, "chic"),
        ("fnal.gov", ESNET, "chic"),
        ("caltech.edu", CENIC, "lax"),
        ("umd.edu", ESNET, "wash"),
    ];
    let mut out = Vec::new();
    for (site, dtn) in BASELINE8_DTNS {
        let (_, net, net_node) = uplinks.iter().find(|u| u.0 == site).expect("every site has an uplink");
        let mut b = DomainBuilder::new(site, cap, labels);
        b.node(dtn, NodeKind::Dtn);
        b.node("sw", NodeKind::Switch);
        let nic = b.port(dtn, "eth0", None);
        let down = b.port("sw", "dtn", None);
        b.link(nic, down);
        b.port("sw", &format!("to-{net}"), Some(facing(net, net_node, site)));
        out.push(GeneratedDomain { role: DomainRole::EndSite, model: b.build(verbosity) });
    }

    let mut es = DomainBuilder::new(ESNET, cap, labels);
    for n in ["chic", "sunn", "wash"] {
        es.node(n, NodeKind::Switch);
    }
    for (site, net, node) in uplinks.iter().filter(|u| u.1 == ESNET) {
        es.port(node, &format!("to-{site}"), Some(facing(site, "sw", net)));
    }
    es.port("sunn", &format!("to-{ESNET_TESTBED}"), Some(facing(ESNET_TESTBED, "sw", ESNET)));
    es.port("sunn", &format!("to-{CENIC}"), Some(facing(CENIC, "lax", ESNET)));
    let a = es.port("sunn", "to-chic", None);
    let b = es.port("chic", "to-sunn", None);
    es.link(a, b);
    let a = es.port("chic", "to-wash", None);
    let b = es.port("wash", "to-chic", None);
    es.link(a, b);
    out.push(GeneratedDomain { role: DomainRole::Network, model: es.build(verbosity) });

    let mut tb = DomainBuilder::new(ESNET_TESTBED, cap, labels);
    tb.node("sw", NodeKind::Switch);
    tb.port("sw", "to-nersc.gov", Some(facing("nersc.gov", "sw", ESNET_TESTBED)));
    tb.port("sw", &format!("to-{ESNET}"), Some(facing(ESNET, "sunn", ESNET_TESTBED)));
    out.push(GeneratedDomain { role: DomainRole::Network, model: tb.build(verbosity) });

    let mut ce = DomainBuilder::new(CENIC, cap, labels);
    ce.node("lax", NodeKind::Switch);
    ce.port("lax", "to-caltech.edu", Some(facing("caltech.edu", "sw", CENIC)));
    ce.port("lax", &format!("to-{ESNET}"), Some(facing(ESNET, "sunn", CENIC)));
    out.push(GeneratedDomain { role: DomainRole::Network, model: ce.build(verbosity) });
    out
}

pub fn transit_domain(i: usize) -> String {
    format!("t{i:02}.net")
}

pub fn endsite_domain(i: usize) -> String {
    format!("site{i:02}.edu")
}

pub fn endsite_dtn(i: usize, k: usize) -> Urn {
    let d = endsite_domain(i);
    urn(format!("urn:ogf:network:{d}:{YEAR}:server+dtn{k}.{d}"))
}

/// Seeded scale-out topology: a ring of single-switch transit domains with
/// random chords, and multi-homed end sites each holding DTNs behind one
/// switch. Deterministic for a given spec.
pub fn generate(spec: &TopologySpec, verbosity: Verbosity) -> Result<Vec<GeneratedDomain>, PresetError> {
    if spec.transit_domains < 1 || spec.dtns_per_endsite < 1 {
        return Err(PresetError::Invalid("need at least one transit domain and one DTN per site".into()));
    }
    if spec.endsite_domains > 0 && spec.uplinks_per_endsite == 0 {
        return Err(PresetError::DisconnectedSpec("end sites without uplinks".into()));
    }
    if spec.uplinks_per_endsite > spec.transit_domains {
        return Err(PresetError::Invalid("more uplinks than transit domains".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.transit_domains;
    let mut transit_pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    if n > 1 {
        for i in 0..n {
            let j = (i + 1) % n;
            if i != j {
                transit_pairs.insert((i.min(j), i.max(j)));
            }
        }
    }
    let max_pairs = n * (n - 1) / 2;
    let mut guard = 0;
    while transit_pairs.len() < (n + spec.transit_chords).min(max_pairs) && guard < 100_000 {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i != j {
            transit_pairs.insert((i.min(j), i.max(j)));
        }
        guard += 1;
    }
    let mut uplinks: Vec<Vec<usize>> = Vec::new();
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..spec.endsite_domains {
        let mut pick: Vec<usize> = all.choose_multiple(&mut rng, spec.uplinks_per_endsite).copied().collect();
        pick.sort();
        uplinks.push(pick);
    }

    let mut transit: Vec<DomainBuilder> = (0..n)
        .map(|i| {
            let mut b = DomainBuilder::new(&transit_domain(i), spec.capacity_mbps, spec.label_range);
            b.node("sw", NodeKind::Switch);
            b
        })
        .collect();
    for &(i, j) in &transit_pairs {
        let (di, dj) = (transit_domain(i), transit_domain(j));
        transit[i].port("sw", &format!("to-{dj}"), Some(facing(&dj, "sw", &di)));
        transit[j].port("sw", &format!("to-{di}"), Some(facing(&di, "sw", &dj)));
    }
    let mut out = Vec::new();
    for (s, ups) in uplinks.iter().enumerate() {
        let site = endsite_domain(s);
        let mut b = DomainBuilder::new(&site, spec.capacity_mbps, spec.label_range);
        b.node("sw", NodeKind::Switch);
        for k in 0..spec.dtns_per_endsite {
            let local = format!("server+dtn{k}.{site}");
            b.node(&local, NodeKind::Dtn);
            let nic = b.port(&local, "eth0", None);
            let down = b.port("sw", &format!("dtn{k}"), None);
            b.link(nic, down);
        }
        for &t in ups {
            let td = transit_domain(t);
            b.port("sw", &format!("to-{td}"), Some(facing(&td, "sw", &site)));
            transit[t].port("sw", &format!("to-{site}"), Some(facing(&site, "sw", &td)));
        }
        out.push(GeneratedDomain { role: DomainRole::EndSite, model: b.build(verbosity) });
    }
    for b in transit {
        out.push(GeneratedDomain { role: DomainRole::Network, model: b.build(verbosity) });
    }
    let models: Vec<DomainModel> = out.iter().map(|g| g.model.clone()).collect();
    if !is_connected(&models) {
        return Err(PresetError::DisconnectedSpec(format!("seed {} yields a disconnected graph", spec.seed)));
    }
    Ok(out)
}

fn is_connected(models: &[DomainModel]) -> bool {
    let Ok(union) = crate::topology::integrate_models(models.to_vec()) else {
        return false;
    };
    let Some(start) = union.port_urns().next().cloned() else {
        return true;
    };
    let mut seen = BTreeSet::from([start.clone()]);
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for n in union.neighbors(&u) {
            if seen.insert(n.clone()) {
                stack.push(n.clone());
            }
        }
    }
    seen.len() == union.port_urns().count()
}
