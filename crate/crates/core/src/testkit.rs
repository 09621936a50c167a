//! Synthetic networks, random instance generators and exhaustive oracles
//! shared by unit tests and the acceptance suite.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use crate::model::{
    DomainModel, LabelRange, Link, Mbps, NodeDesc, NodeKind, Port, QosClass, ReservationSegment, TimeInterval, Urn,
    Verbosity,
};
use crate::topology::UnionModel;

pub const T0: i64 = 1_535_810_400;

pub fn urn(s: &str) -> Urn {
    Urn::parse(s).unwrap()
}

pub struct PortSpec {
    pub urn: Urn,
    pub capacity: Mbps,
    pub alias: Option<Urn>,
}

pub struct NodeSpec {
    pub urn: Urn,
    pub kind: NodeKind,
    pub ports: Vec<PortSpec>,
}

#[derive(Default)]
pub struct Spec {
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<(Urn, Urn)>,
    pub reservations: Vec<ReservationSegment>,
    pub labels: Option<BTreeMap<String, (u16, u16)>>,
    pub swap_capable: bool,
}

pub fn build(spec: Spec) -> UnionModel {
    let mut models: BTreeMap<String, DomainModel> = BTreeMap::new();
    for n in spec.nodes {
        let domain = n.urn.domain().to_owned();
        let range = spec
            .labels
            .as_ref()
            .and_then(|l| l.get(&domain).copied())
            .unwrap_or((1780, 1799));
        let m = models.entry(domain.clone()).or_insert_with(|| DomainModel {
            domain_id: domain.clone(),
            version: 1,
            generated_at: T0,
            verbosity: Verbosity::Full,
            nodes: vec![],
            links: vec![],
            port_usage: None,
            active_reservations: Some(vec![]),
        });
        m.nodes.push(NodeDesc {
            urn: n.urn,
            kind: n.kind,
            ports: n
                .ports
                .into_iter()
                .map(|p| Port {
                    urn: p.urn,
                    capacity: p.capacity,
                    reservable: p.capacity,
                    labels: LabelRange::vlan([range]).unwrap(),
                    swap_capable: spec.swap_capable,
                    alias: p.alias,
                })
                .collect(),
        });
    }
    for (a, b) in spec.links {
        models.get_mut(a.domain()).unwrap().links.push(Link::new(a, b));
    }
    for s in spec.reservations {
        models
            .get_mut(s.port_urn.domain())
            .unwrap()
            .active_reservations
            .as_mut()
            .unwrap()
            .push(s);
    }
    let models = models.into_values().map(|m| DomainModel::new(m).unwrap()).collect();
    UnionModel::integrate(models, 2.0).unwrap()
}

/// Adds committed guaranteed reservations of `mbps` on each port.
pub fn saturate(u: &mut UnionModel, ports: &[Urn], mbps: Mbps, interval: TimeInterval) {
    let mut models: Vec<DomainModel> = u.models().values().cloned().collect();
    for (i, p) in ports.iter().enumerate() {
        let m = models.iter_mut().find(|m| m.domain_id == p.domain()).unwrap();
        m.active_reservations.as_mut().unwrap().push(ReservationSegment {
            connection_id: format!("background-{i}"),
            port_urn: p.clone(),
            vlan: 1799,
            bandwidth: mbps,
            qos_class: QosClass::GuaranteedCapped,
            interval,
        });
    }
    let models = models.into_iter().map(|m| DomainModel::new(m).unwrap()).collect();
    *u = UnionModel::integrate(models, u.overbook_factor()).unwrap();
}

pub fn port(i: usize, name: &str) -> Urn {
    urn(&format!("urn:ogf:network:d{i}.net:2013:sw:{name}"))
}

/// `n` single-switch domains in a row; each switch has terminal ports `a`
/// and `b`, plus `west`/`east` toward its neighbours.
pub fn line(n: usize, cap: Mbps) -> UnionModel {
    let mut spec = Spec::default();
    for i in 0..n {
        let mut ports = vec![
            PortSpec { urn: port(i, "a"), capacity: cap, alias: None },
            PortSpec { urn: port(i, "b"), capacity: cap, alias: None },
        ];
        if i > 0 {
            ports.push(PortSpec { urn: port(i, "west"), capacity: cap, alias: Some(port(i - 1, "east")) });
        }
        if i + 1 < n {
            ports.push(PortSpec { urn: port(i, "east"), capacity: cap, alias: Some(port(i + 1, "west")) });
        }
        spec.nodes.push(NodeSpec {
            urn: urn(&format!("urn:ogf:network:d{i}.net:2013:sw")),
            kind: NodeKind::Switch,
            ports,
        });
    }
    build(spec)
}

pub fn dport(node: &str, name: &str) -> Urn {
    urn(&format!("urn:ogf:network:{node}.net:2013:sw:{name}"))
}

/// s and t joined through two parallel single-switch domains m1 and m2.
pub fn diamond(cap: Mbps) -> UnionModel {
    let p = |n: &str, name: &str, alias: Option<Urn>| PortSpec { urn: dport(n, name), capacity: cap, alias };
    let node = |n: &str, ports| NodeSpec { urn: urn(&format!("urn:ogf:network:{n}.net:2013:sw")), kind: NodeKind::Switch, ports };
    build(Spec {
        nodes: vec![
            node("s", vec![p("s", "a", None), p("s", "p1", Some(dport("m1", "w"))), p("s", "p2", Some(dport("m2", "w")))]),
            node("m1", vec![p("m1", "w", Some(dport("s", "p1"))), p("m1", "e", Some(dport("t", "p1")))]),
            node("m2", vec![p("m2", "w", Some(dport("s", "p2"))), p("m2", "e", Some(dport("t", "p2")))]),
            node("t", vec![p("t", "a", None), p("t", "p1", Some(dport("m1", "e"))), p("t", "p2", Some(dport("m2", "e")))]),
        ],
        ..Default::default()
    })
}

/// Every simple port path from `s` to `d`.
/// Every simple path from `s` to `d` that passes through each node as one
/// run of at most two ports. Paths outside that shape revisit a node or
/// wander inside one, and always have a shortcut that is shorter and no
/// narrower, so they never decide a widest or shortest answer.
pub fn simple_paths(u: &UnionModel, s: &Urn, d: &Urn) -> Vec<Vec<Urn>> {
    let mut out = Vec::new();
    for_each_simple_path(u, s, d, |p| out.push(p.to_vec()));
    out
}

pub fn for_each_simple_path(u: &UnionModel, s: &Urn, d: &Urn, mut f: impl FnMut(&[Urn])) {
    fn go(
        u: &UnionModel,
        d: &Urn,
        nodes: &mut BTreeSet<Urn>,
        path: &mut Vec<Urn>,
        run: usize,
        f: &mut dyn FnMut(&[Urn]),
    ) {
        let cur = path.last().expect("path starts non-empty").clone();
        if &cur == d {
            f(path);
            return;
        }
        let here = u.port_node(&cur).cloned();
        let next: Vec<Urn> = u.neighbors(&cur).cloned().collect();
        for n in next {
            if path.contains(&n) {
                continue;
            }
            let node = u.port_node(&n).cloned();
            if node == here {
                if run >= 2 {
                    continue;
                }
                path.push(n);
                go(u, d, nodes, path, run + 1, f);
                path.pop();
            } else {
                let Some(node) = node else { continue };
                if !nodes.insert(node.clone()) {
                    continue;
                }
                path.push(n);
                go(u, d, nodes, path, 1, f);
                path.pop();
                nodes.remove(&node);
            }
        }
    }
    let mut nodes: BTreeSet<Urn> = u.port_node(s).cloned().into_iter().collect();
    go(u, d, &mut nodes, &mut vec![s.clone()], 1, &mut f);
}

/// Fewest hops from `s` to `d` using only ports with at least `min` available.
pub fn bfs_hops(u: &UnionModel, avail: &BTreeMap<Urn, Mbps>, s: &Urn, d: &Urn, min: Mbps) -> Option<usize> {
    let ok = |p: &Urn| avail.get(p).copied().unwrap_or(0) >= min;
    if !ok(s) || !ok(d) {
        return None;
    }
    let mut dist = BTreeMap::from([(s.clone(), 0usize)]);
    let mut queue = std::collections::VecDeque::from([s.clone()]);
    while let Some(x) = queue.pop_front() {
        if &x == d {
            return dist.get(d).copied();
        }
        let k = dist[&x];
        for n in u.neighbors(&x) {
            if ok(n) && !dist.contains_key(n) {
                dist.insert(n.clone(), k + 1);
                queue.push_back(n.clone());
            }
        }
    }
    None
}

pub fn path_min(avail: &BTreeMap<Urn, Mbps>, path: &[Urn]) -> Mbps {
    path.iter().map(|p| avail.get(p).copied().unwrap_or(0)).min().unwrap_or(0)
}

/// A random multi-domain network with time-varying reservations.
#[derive(Debug, Clone)]
pub struct RandomNet {
    pub domain_of: Vec<usize>,
    pub caps: Vec<Mbps>,
    pub edges: Vec<(usize, usize)>,
    /// (port pick, start offset, length, percent of capacity, soft)
    pub allocations: Vec<(usize, i64, i64, u64, bool)>,
    pub src: usize,
    pub dst: usize,
    pub query: (i64, i64),
}

pub fn node_urn(net: &RandomNet, i: usize) -> String {
    format!("urn:ogf:network:d{}.net:2013:sw{i:02}", net.domain_of[i])
}

impl RandomNet {
    pub fn union(&self) -> UnionModel {
        let n = self.domain_of.len();
        let mut ports: Vec<Vec<PortSpec>> = (0..n)
            .map(|i| vec![PortSpec { urn: urn(&format!("{}:t", node_urn(self, i))), capacity: self.caps[i], alias: None }])
            .collect();
        let mut links = Vec::new();
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            let pi = urn(&format!("{}:e{k:02}", node_urn(self, i)));
            let pj = urn(&format!("{}:e{k:02}", node_urn(self, j)));
            let same = self.domain_of[i] == self.domain_of[j];
            ports[i].push(PortSpec { urn: pi.clone(), capacity: self.caps[i], alias: (!same).then(|| pj.clone()) });
            ports[j].push(PortSpec { urn: pj.clone(), capacity: self.caps[j], alias: (!same).then(|| pi.clone()) });
            if same {
                links.push((pi, pj));
            }
        }
        let all: Vec<(Urn, Mbps)> = ports.iter().flatten().map(|p| (p.urn.clone(), p.capacity)).collect();
        let mut per_port: BTreeMap<usize, u16> = BTreeMap::new();
        let mut reservations = Vec::new();
        for (k, &(pick, start, len, pct, soft)) in self.allocations.iter().enumerate() {
            let idx = pick % all.len();
            let count = per_port.entry(idx).or_default();
            if *count >= 10 {
                continue;
            }
            *count += 1;
            let (p, cap) = &all[idx];
            reservations.push(ReservationSegment {
                connection_id: format!("bg{k}"),
                port_urn: p.clone(),
                vlan: 1780 + *count,
                bandwidth: (cap * pct / 100).max(1),
                qos_class: if soft { QosClass::SoftCapped } else { QosClass::GuaranteedCapped },
                interval: TimeInterval { start: T0 + start, end: T0 + start + len },
            });
        }
        build(Spec {
            nodes: ports
                .into_iter()
                .enumerate()
                .map(|(i, ports)| NodeSpec { urn: urn(&node_urn(self, i)), kind: NodeKind::Switch, ports })
                .collect(),
            links,
            reservations,
            ..Default::default()
        })
    }

    pub fn endpoints(&self) -> (Urn, Urn) {
        (urn(&format!("{}:t", node_urn(self, self.src))), urn(&format!("{}:t", node_urn(self, self.dst))))
    }

    pub fn query_interval(&self) -> TimeInterval {
        TimeInterval { start: T0 + self.query.0, end: T0 + self.query.0 + self.query.1 }
    }
}

prop_compose! {
    pub fn arb_net()(n in 2usize..=16, k in 1usize..=8)
        (domain_of in proptest::collection::vec(0..k, n),
         caps in proptest::collection::vec(proptest::sample::select(vec![10_000u64, 40_000, 100_000]), n),
         edges in proptest::collection::vec((0..n, 0..n), 1..=n + 3),
         allocations in proptest::collection::vec((0usize..1000, 0i64..200, 1i64..120, 1u64..=10, any::<bool>()), 0..40),
         src in 0..n, dst in 0..n, query in (0i64..200, 1i64..150))
        -> RandomNet
    {
        let edges: Vec<(usize, usize)> = edges.into_iter().filter(|(i, j)| i != j).collect();
        let n = caps.len();
        let dst = if dst == src { (src + 1) % n } else { dst };
        RandomNet { domain_of, caps, edges, allocations, src, dst, query }
    }
}

/// Brute-force widest value: best path minimum over every simple path.
pub fn brute_widest(u: &UnionModel, paths: &[Vec<Urn>], interval: TimeInterval, qos: QosClass) -> Option<Mbps> {
    let mut cache: BTreeMap<&Urn, Mbps> = BTreeMap::new();
    let mut best = None;
    for p in paths {
        let m = p
            .iter()
            .map(|x| *cache.entry(x).or_insert_with(|| u.calendar(x).map(|c| c.available_bandwidth(interval, qos)).unwrap_or(0)))
            .min()
            .unwrap_or(0);
        best = best.max(Some(m));
    }
    best
}

/// Same network with every port's capacity and reservable raised by `extra`.
pub fn with_more_capacity(u: &UnionModel, extra: Mbps) -> UnionModel {
    let models = u
        .models()
        .values()
        .cloned()
        .map(|mut m| {
            for n in &mut m.nodes {
                for p in &mut n.ports {
                    p.capacity += extra;
                    p.reservable += extra;
                }
            }
            DomainModel::new(m).unwrap()
        })
        .collect();
    UnionModel::integrate(models, u.overbook_factor()).unwrap()
}

/// Earliest per-second start `t` in `window` whose `[t, t + duration)` has a
/// simple path of at least `mbps`.
pub fn brute_bsw(
    u: &UnionModel,
    paths: &[Vec<Urn>],
    duration: i64,
    window: TimeInterval,
    mbps: Mbps,
    qos: QosClass,
) -> Option<TimeInterval> {
    (window.start..=window.end - duration).find_map(|t| {
        let iv = TimeInterval { start: t, end: t + duration };
        (brute_widest(u, paths, iv, qos)? >= mbps).then_some(iv)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BruteTbpMode {
    Highest,
    Lowest,
    EarliestCompletion,
}

/// Exhaustive TBP: every integer rate in `[bmin, bmax]` and every start
/// second. Returns (rate, interval).
#[allow(clippy::too_many_arguments)]
pub fn brute_tbp(
    u: &UnionModel,
    paths: &[Vec<Urn>],
    tbp_mbytes: u64,
    window: TimeInterval,
    bmin: Mbps,
    bmax: Mbps,
    mode: BruteTbpMode,
    qos: QosClass,
) -> Option<(Mbps, TimeInterval)> {
    let mut widest: BTreeMap<(i64, i64), Option<Mbps>> = BTreeMap::new();
    let mut feasible = Vec::new();
    for b in bmin..=bmax {
        let d = (tbp_mbytes as u128 * 8).div_ceil(b as u128) as i64;
        if d > window.duration() {
            continue;
        }
        let hit = (window.start..=window.end - d).find(|&t| {
            let w = *widest
                .entry((t, d))
                .or_insert_with(|| brute_widest(u, paths, TimeInterval { start: t, end: t + d }, qos));
            w.is_some_and(|w| w >= b)
        });
        if let Some(t) = hit {
            feasible.push((b, TimeInterval { start: t, end: t + d }));
        }
    }
    match mode {
        BruteTbpMode::Highest => feasible.last().copied(),
        BruteTbpMode::Lowest => feasible.first().copied(),
        BruteTbpMode::EarliestCompletion => feasible
            .iter()
            .copied()
            .min_by_key(|(b, iv)| (iv.end, std::cmp::Reverse(*b))),
    }
}

/// A random network plus the parameters for every scheduling query.
#[derive(Debug, Clone)]
pub struct QueryCase {
    pub net: RandomNet,
    pub duration: i64,
    pub mbps: Mbps,
    pub bmin: Mbps,
    pub span: Mbps,
    pub tbp_seconds: i64,
    pub mode: BruteTbpMode,
}

impl QueryCase {
    pub fn bmax(&self) -> Mbps {
        self.bmin + self.span
    }

    /// Volume that takes roughly `tbp_seconds` at the lower bound.
    pub fn tbp_mbytes(&self) -> u64 {
        (self.bmin * self.tbp_seconds as u64 / 8).max(1)
    }
}

prop_compose! {
    pub fn arb_query_case()(net in arb_net(), duration in 1i64..160, mbps in 1u64..100_000,
                            bmin in 500u64..50_000, span in 0u64..5000, tbp_seconds in 1i64..150,
                            mode in proptest::sample::select(vec![BruteTbpMode::Highest, BruteTbpMode::Lowest, BruteTbpMode::EarliestCompletion]))
        -> QueryCase
    {
        QueryCase { net, duration, mbps, bmin, span, tbp_seconds, mode }
    }
}
