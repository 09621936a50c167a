use std::collections::{BTreeMap, BTreeSet};

use super::{ComputeError, View};
use crate::model::{TimeInterval, Urn};

/// Picks one vlan per domain for a set of ports (a path or a tree).
///
/// A label free on every port wins and its minimum is used everywhere.
/// Otherwise each domain takes the minimum of its own intersection, which
/// is only allowed when every inter-domain boundary in `boundaries` is
/// swap-capable on both ends. `pinned` restricts individual ports.
pub fn select_vlans(
    view: &View<'_>,
    ports: &[Urn],
    boundaries: &[(Urn, Urn)],
    interval: TimeInterval,
    pinned: &BTreeMap<Urn, u16>,
) -> Result<BTreeMap<String, u16>, ComputeError> {
    let union = view.union();
    let mut order: Vec<String> = Vec::new();
    let mut per_domain: BTreeMap<String, BTreeSet<u16>> = BTreeMap::new();
    let mut global: Option<BTreeSet<u16>> = None;
    for p in ports {
        let domain = union
            .port_domain(p)
            .ok_or_else(|| ComputeError::UnknownUrn(p.to_string()))?
            .to_owned();
        let mut free = view.labels(p, interval);
        if let Some(v) = pinned.get(p) {
            free.retain(|x| x == v);
        }
        global = Some(match global {
            None => free.clone(),
            Some(g) => g.intersection(&free).copied().collect(),
        });
        match per_domain.get_mut(&domain) {
            Some(s) => s.retain(|x| free.contains(x)),
            None => {
                order.push(domain.clone());
                per_domain.insert(domain, free);
            }
        }
    }
    if let Some(v) = global.as_ref().and_then(|g| g.first()) {
        return Ok(order.into_iter().map(|d| (d, *v)).collect());
    }
    if let Some(d) = order.iter().find(|d| per_domain[*d].is_empty()) {
        return Err(ComputeError::NoLabel { connection: None, domain: d.clone() });
    }
    let swappable = |u: &Urn| union.port(u).is_some_and(|p| p.swap_capable);
    if let Some((a, _)) = boundaries.iter().find(|(a, b)| !(swappable(a) && swappable(b))) {
        // Without translation the whole path needs one label; name the
        // domain where the running intersection first runs dry.
        let mut running: Option<BTreeSet<u16>> = None;
        for d in &order {
            let s = &per_domain[d];
            let next: BTreeSet<u16> = match running {
                None => s.clone(),
                Some(r) => r.intersection(s).copied().collect(),
            };
            if next.is_empty() {
                return Err(ComputeError::NoLabel { connection: None, domain: d.clone() });
            }
            running = Some(next);
        }
        let domain = union.port_domain(a).unwrap_or_default().to_owned();
        return Err(ComputeError::NoLabel { connection: None, domain });
    }
    Ok(order
        .into_iter()
        .map(|d| {
            let v = *per_domain[&d].first().expect("checked non-empty");
            (d, v)
        })
        .collect())
}

/// Consecutive path ports that sit in different domains.
pub(crate) fn path_boundaries(view: &View<'_>, path: &[Urn]) -> Vec<(Urn, Urn)> {
    let union = view.union();
    path.windows(2)
        .filter(|w| union.port_domain(&w[0]) != union.port_domain(&w[1]))
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::*;
    use crate::compute::{find_path, View};
    use crate::model::{NodeKind, QosClass};
    use proptest::prelude::*;

    fn iv() -> TimeInterval {
        TimeInterval { start: T0, end: T0 + 3600 }
    }

    fn two_domains(swap: bool, a: (u16, u16), b: (u16, u16)) -> crate::topology::UnionModel {
        let p = |d: &str, n: &str, alias: Option<Urn>| PortSpec { urn: dport(d, n), capacity: 100_000, alias };
        build(Spec {
            nodes: vec![
                NodeSpec { urn: urn("urn:ogf:network:x.net:2013:sw"), kind: NodeKind::Switch, ports: vec![p("x", "a", None), p("x", "e", Some(dport("y", "w")))] },
                NodeSpec { urn: urn("urn:ogf:network:y.net:2013:sw"), kind: NodeKind::Switch, ports: vec![p("y", "a", None), p("y", "w", Some(dport("x", "e")))] },
            ],
            labels: Some(BTreeMap::from([("x.net".to_owned(), a), ("y.net".to_owned(), b)])),
            swap_capable: swap,
            ..Default::default()
        })
    }

    fn run(u: &crate::topology::UnionModel, pinned: &BTreeMap<Urn, u16>) -> Result<BTreeMap<String, u16>, ComputeError> {
        let v = View::live(u);
        let path = find_path(&v, &dport("x", "a"), &dport("y", "a"), iv(), 1000, QosClass::GuaranteedCapped).unwrap();
        select_vlans(&v, &path, &path_boundaries(&v, &path), iv(), pinned)
    }

    #[test]
    fn shared_range_uses_its_minimum() {
        let u = two_domains(false, (1780, 1799), (1780, 1799));
        let m = run(&u, &BTreeMap::new()).unwrap();
        assert_eq!(m.values().copied().collect::<Vec<_>>(), vec![1780, 1780]);
    }

    #[test]
    fn pinned_terminal_label_is_used_end_to_end() {
        let u = two_domains(false, (1780, 1799), (1780, 1799));
        let m = run(&u, &BTreeMap::from([(dport("x", "a"), 1785)])).unwrap();
        assert!(m.values().all(|&v| v == 1785));
    }

    #[test]
    fn disjoint_ranges_translate_only_when_swap_capable() {
        let u = two_domains(true, (100, 110), (200, 210));
        let m = run(&u, &BTreeMap::new()).unwrap();
        assert_eq!(m["x.net"], 100);
        assert_eq!(m["y.net"], 200);
        let u = two_domains(false, (100, 110), (200, 210));
        assert!(matches!(run(&u, &BTreeMap::new()), Err(ComputeError::NoLabel { .. })));
    }

    proptest! {
        #[test]
        fn matches_set_intersection_oracle(a_lo in 1u16..60, a_len in 0u16..20, b_lo in 1u16..60, b_len in 0u16..20, swap: bool) {
            let (a, b) = ((a_lo, a_lo + a_len), (b_lo, b_lo + b_len));
            let u = two_domains(swap, a, b);
            let got = run(&u, &BTreeMap::new());
            let sa: BTreeSet<u16> = (a.0..=a.1).collect();
            let sb: BTreeSet<u16> = (b.0..=b.1).collect();
            let common = sa.intersection(&sb).min().copied();
            match (common, swap) {
                (Some(v), _) => prop_assert_eq!(got.unwrap().values().copied().collect::<Vec<_>>(), vec![v, v]),
                (None, true) => {
                    let m = got.unwrap();
                    prop_assert_eq!((m["x.net"], m["y.net"]), (a.0, b.0));
                }
                (None, false) => prop_assert!(got.is_err()),
            }
        }
    }
}
