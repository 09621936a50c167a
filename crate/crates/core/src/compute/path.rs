use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{ComputeError, View};
use crate::model::{Mbps, QosClass, TimeInterval, Urn};
use crate::topology::UnionModel;

/// The edge that limits the widest available path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bottleneck {
    pub a: Urn,
    pub b: Urn,
    pub available: Mbps,
}

/// Hop-count shortest path from `from` to any member of `targets` through
/// feasible ports; among shortest paths, the lexicographically smallest URN
/// sequence. Returns `[from]` when `from` is itself a target.
pub fn lex_shortest(
    union: &UnionModel,
    from: &Urn,
    targets: &BTreeSet<Urn>,
    feasible: impl Fn(&Urn) -> bool,
) -> Option<Vec<Urn>> {
    if !feasible(from) {
        return None;
    }
    let mut dist: HashMap<&Urn, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    for t in targets.iter().filter(|t| feasible(t)) {
        dist.insert(t, 0);
        queue.push_back(t);
    }
    while let Some(u) = queue.pop_front() {
        if u == from {
            break;
        }
        let d = dist[u];
        for n in union.neighbors(u) {
            if !dist.contains_key(n) && feasible(n) {
                dist.insert(n, d + 1);
                queue.push_back(n);
            }
        }
    }
    let mut d = *dist.get(from)?;
    let mut path = vec![from.clone()];
    let mut cur = from;
    while d > 0 {
        // Neighbors iterate in URN order, so the first hit is the smallest.
        cur = union.neighbors(cur).find(|n| dist.get(n) == Some(&(d - 1)))?;
        path.push(cur.clone());
        d -= 1;
    }
    Some(path)
}

fn connected(union: &UnionModel, src: &Urn, dst: &Urn, ok: impl Fn(&Urn) -> bool) -> bool {
    if !ok(src) || !ok(dst) {
        return false;
    }
    let mut seen = BTreeSet::from([src]);
    let mut stack = vec![src];
    while let Some(u) = stack.pop() {
        if u == dst {
            return true;
        }
        for n in union.neighbors(u) {
            if ok(n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    false
}

fn located(union: &UnionModel, urn: &Urn) -> Result<(), ComputeError> {
    match union.port(urn) {
        Some(_) => Ok(()),
        None => Err(ComputeError::UnknownUrn(urn.to_string())),
    }
}

/// Widest path over a precomputed availability map.
pub(crate) fn widest_in(
    union: &UnionModel,
    avail: &BTreeMap<Urn, Mbps>,
    src: &Urn,
    dst: &Urn,
) -> Option<(Vec<Urn>, Mbps)> {
    let at = |u: &Urn| avail.get(u).copied().unwrap_or(0);
    let mut levels: Vec<Mbps> = avail.values().copied().collect::<BTreeSet<_>>().into_iter().collect();
    levels.retain(|&w| w <= at(src).min(at(dst)));
    // Connectivity is monotone in the threshold; find the largest feasible one.
    let ok = |w: Mbps| connected(union, src, dst, |u| at(u) >= w);
    if levels.is_empty() || !ok(levels[0]) {
        return None;
    }
    let (mut lo, mut hi) = (0usize, levels.len() - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if ok(levels[mid]) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let w = levels[lo];
    let path = lex_shortest(union, src, &BTreeSet::from([dst.clone()]), |u| at(u) >= w)?;
    Some((path, w))
}

/// Path maximizing the minimum port availability over `interval`; ties go
/// to fewer hops, then to the lexicographically smaller URN sequence.
pub fn widest_path(
    view: &View<'_>,
    src: &Urn,
    dst: &Urn,
    interval: TimeInterval,
    qos: QosClass,
) -> Result<(Vec<Urn>, Mbps), ComputeError> {
    let union = view.union();
    located(union, src)?;
    located(union, dst)?;
    if src == dst {
        return Err(ComputeError::MalformedIntent(format!("zero-length request at {src}")));
    }
    let avail = view.availability_map(interval, qos);
    widest_in(union, &avail, src, dst).ok_or(ComputeError::NoPath {
        connection: None,
        terminal: None,
        bottleneck: None,
    })
}

/// The weakest edge of `path`; ties prefer edges whose both ends are weak,
/// then declared links over node-internal pairs, then the earliest edge.
pub(crate) fn bottleneck_of(union: &UnionModel, avail: &BTreeMap<Urn, Mbps>, path: &[Urn]) -> Option<Bottleneck> {
    let at = |u: &Urn| avail.get(u).copied().unwrap_or(0);
    path.windows(2)
        .min_by_key(|p| {
            let (x, y) = (at(&p[0]), at(&p[1]));
            let same_node = union.port_node(&p[0]) == union.port_node(&p[1]);
            (x.min(y), x.max(y), same_node)
        })
        .map(|p| Bottleneck {
            a: p[0].clone(),
            b: p[1].clone(),
            available: at(&p[0]).min(at(&p[1])),
        })
}

/// Hop-count shortest path whose every port has at least `mbps` available
/// over `interval`; lexicographic tie-break.
pub fn find_path(
    view: &View<'_>,
    src: &Urn,
    dst: &Urn,
    interval: TimeInterval,
    mbps: Mbps,
    qos: QosClass,
) -> Result<Vec<Urn>, ComputeError> {
    let union = view.union();
    located(union, src)?;
    located(union, dst)?;
    if src == dst {
        return Err(ComputeError::MalformedIntent(format!("zero-length request at {src}")));
    }
    let avail = view.availability_map(interval, qos);
    let at = |u: &Urn| avail.get(u).copied().unwrap_or(0);
    if let Some(p) = lex_shortest(union, src, &BTreeSet::from([dst.clone()]), |u| at(u) >= mbps) {
        return Ok(p);
    }
    let bottleneck = widest_in(union, &avail, src, dst).and_then(|(p, _)| bottleneck_of(union, &avail, &p));
    Err(ComputeError::NoPath {
        connection: None,
        terminal: None,
        bottleneck,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::testkit::*;
    use proptest::prelude::*;

    const T: i64 = 1_535_810_400;

    fn iv() -> TimeInterval {
        TimeInterval { start: T, end: T + 3600 }
    }

    #[test]
    fn same_switch_is_two_ports() {
        let u = line(1, 100_000);
        let v = View::live(&u);
        let p = find_path(&v, &port(0, "a"), &port(0, "b"), iv(), 1000, QosClass::GuaranteedCapped).unwrap();
        assert_eq!(p, vec![port(0, "a"), port(0, "b")]);
    }

    #[test]
    fn saturated_middle_link_is_the_bottleneck() {
        let mut u = line(3, 100_000);
        saturate(&mut u, &[port(1, "east"), port(2, "west")], 95_000, iv());
        let v = View::live(&u);
        let err = find_path(&v, &port(0, "a"), &port(2, "b"), iv(), 10_000, QosClass::GuaranteedCapped).unwrap_err();
        let ComputeError::NoPath { bottleneck: Some(b), .. } = err else { panic!("{err:?}") };
        assert_eq!((b.a, b.b, b.available), (port(1, "east"), port(2, "west"), 5_000));
        // Oracle: every simple path crosses that link, so its minimum is 5000.
        let all = simple_paths(&u, &port(0, "a"), &port(2, "b"));
        assert!(!all.is_empty());
        let avail = v.availability_map(iv(), QosClass::GuaranteedCapped);
        assert!(all.iter().all(|p| path_min(&avail, p) == 5_000));
    }

    #[test]
    fn equal_length_paths_break_ties_lexicographically() {
        let u = diamond(100_000);
        let v = View::live(&u);
        let p = find_path(&v, &dport("s", "a"), &dport("t", "a"), iv(), 1000, QosClass::GuaranteedCapped).unwrap();
        let shortest: Vec<_> = simple_paths(&u, &dport("s", "a"), &dport("t", "a"))
            .into_iter()
            .filter(|q| q.len() == p.len())
            .collect();
        assert!(shortest.len() >= 2);
        assert_eq!(&p, shortest.iter().min().unwrap());
    }

    #[test]
    fn ninety_of_hundred_committed_leaves_ten() {
        let mut u = line(3, 100_000);
        saturate(&mut u, &[port(1, "east"), port(2, "west")], 90_000, iv());
        let (_, w) = widest_path(&View::live(&u), &port(0, "a"), &port(2, "b"), iv(), QosClass::GuaranteedCapped).unwrap();
        assert_eq!(w, 10_000);
        let (_, cap) = widest_path(&View::empty(&u), &port(0, "a"), &port(2, "b"), iv(), QosClass::GuaranteedCapped).unwrap();
        assert_eq!(cap, 100_000);
    }

    #[test]
    fn unknown_terminal_is_reported() {
        let u = line(2, 1000);
        let bogus = Urn::parse("urn:ogf:network:nowhere.net:2013:x").unwrap();
        let err = find_path(&View::live(&u), &bogus, &port(0, "a"), iv(), 1, QosClass::BestEffort).unwrap_err();
        assert!(matches!(err, ComputeError::UnknownUrn(_)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn widest_matches_exhaustive_enumeration(net in arb_net()) {
            let u = net.union();
            let v = View::live(&u);
            let iv = net.query_interval();
            let avail = v.availability_map(iv, QosClass::GuaranteedCapped);
            let (s, d) = net.endpoints();
            let paths = simple_paths(&u, &s, &d);
            let best = paths.iter().map(|p| path_min(&avail, p)).max();
            match widest_path(&v, &s, &d, iv, QosClass::GuaranteedCapped) {
                Ok((p, w)) => {
                    prop_assert_eq!(Some(w), best);
                    prop_assert_eq!(path_min(&avail, &p), w);
                    let mut widest: Vec<_> = paths.iter().filter(|q| path_min(&avail, q) == w).collect();
                    widest.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
                    prop_assert_eq!(Some(&&p), widest.first());
                }
                Err(_) => prop_assert!(best.is_none()),
            }
        }

        #[test]
        fn find_path_matches_exhaustive_shortest_feasible(net in arb_net(), need in 1u64..100_000) {
            let u = net.union();
            let v = View::live(&u);
            let iv = net.query_interval();
            let avail = v.availability_map(iv, QosClass::GuaranteedCapped);
            let (s, d) = net.endpoints();
            let mut feasible: Vec<_> = simple_paths(&u, &s, &d)
                .into_iter()
                .filter(|p| path_min(&avail, p) >= need)
                .collect();
            feasible.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
            match find_path(&v, &s, &d, iv, need, QosClass::GuaranteedCapped) {
                Ok(p) => prop_assert_eq!(Some(&p), feasible.first()),
                Err(_) => prop_assert!(feasible.is_empty()),
            }
        }
    }
}
