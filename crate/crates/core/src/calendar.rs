//! Per-port time-interval ledger of bandwidth and VLAN allocations.
//!
//! Guaranteed and soft-capped bandwidth are tracked as a step function keyed
//! by boundary instants: the level stored under key `t` is in force on
//! `[t, next key)`. Before the first key the level is zero. Queries walk the
//! steps overlapping the requested interval.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    EpochSecs, LabelRange, Mbps, ModelError, QosClass, ReservationSegment, TimeInterval, Urn,
};

pub const DEFAULT_OVERBOOK_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalendarError {
    #[error("segment names port {got}, calendar belongs to {expected}")]
    PortMismatch { expected: Urn, got: Urn },
    #[error(transparent)]
    InvalidSegment(#[from] ModelError),
    #[error("insufficient bandwidth on {port}: at most {max} mbps admissible")]
    InsufficientBandwidth { port: Urn, max: Mbps },
    #[error("vlan {vlan} unavailable on {port}")]
    VlanConflict {
        port: Urn,
        vlan: u16,
        alternatives: BTreeSet<u16>,
    },
    #[error("hold for delta {delta_id} expired")]
    HoldExpired { delta_id: String },
    #[error("no allocation for delta {delta_id}")]
    UnknownAllocation { delta_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationState {
    Held,
    Committed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub segment: ReservationSegment,
    pub state: AllocationState,
    pub hold_expires_at: Option<EpochSecs>,
    /// Delta that placed the allocation, when it came through propagate.
    pub delta_id: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Level {
    guaranteed: Mbps,
    soft: Mbps,
}

/// A broken calendar invariant, reported by [`ReservationCalendar::audit`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarViolation {
    pub port_urn: Urn,
    pub at: Option<EpochSecs>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservationCalendar {
    port_urn: Urn,
    reservable: Mbps,
    labels: LabelRange,
    overbook_factor: f64,
    allocations: Vec<Allocation>,
    levels: BTreeMap<EpochSecs, Level>,
}

impl ReservationCalendar {
    pub fn new(port_urn: Urn, reservable: Mbps, labels: LabelRange) -> Self {
        Self::with_overbook(port_urn, reservable, labels, DEFAULT_OVERBOOK_FACTOR)
    }

    pub fn with_overbook(port_urn: Urn, reservable: Mbps, labels: LabelRange, overbook_factor: f64) -> Self {
        assert!(
            overbook_factor.is_finite() && overbook_factor > 0.0,
            "overbook factor must be positive"
        );
        ReservationCalendar {
            port_urn,
            reservable,
            labels,
            overbook_factor,
            allocations: Vec::new(),
            levels: BTreeMap::new(),
        }
    }

    pub fn port_urn(&self) -> &Urn {
        &self.port_urn
    }

    pub fn reservable(&self) -> Mbps {
        self.reservable
    }

    pub fn labels(&self) -> &LabelRange {
        &self.labels
    }

    pub fn overbook_factor(&self) -> f64 {
        self.overbook_factor
    }

    pub fn allocations(&self) -> &[Allocation] {
        &self.allocations
    }

    pub fn is_empty(&self) -> bool {
        self.allocations.is_empty()
    }

    /// Copy with the same port attributes and no allocations.
    pub fn cleared(&self) -> Self {
        Self::with_overbook(
            self.port_urn.clone(),
            self.reservable,
            self.labels.clone(),
            self.overbook_factor,
        )
    }

    fn level_at(&self, t: EpochSecs) -> Level {
        self.levels
            .range(..=t)
            .next_back()
            .map(|(_, l)| *l)
            .unwrap_or_default()
    }

    /// Steps of the level function overlapping `interval`, clipped to it.
    fn steps(&self, interval: TimeInterval) -> Vec<(TimeInterval, Level)> {
        let mut out = Vec::new();
        let mut cursor = interval.start;
        let mut level = self.level_at(interval.start);
        for (&t, &l) in self.levels.range(interval.start + 1..interval.end) {
            out.push((TimeInterval { start: cursor, end: t }, level));
            cursor = t;
            level = l;
        }
        out.push((TimeInterval { start: cursor, end: interval.end }, level));
        out
    }

    fn adjust(&mut self, interval: TimeInterval, qos: QosClass, bandwidth: Mbps, add: bool) {
        if qos == QosClass::BestEffort {
            return;
        }
        for t in [interval.start, interval.end] {
            if !self.levels.contains_key(&t) {
                let l = self.level_at(t);
                self.levels.insert(t, l);
            }
        }
        for (_, l) in self.levels.range_mut(interval.start..interval.end) {
            let slot = match qos {
                QosClass::GuaranteedCapped => &mut l.guaranteed,
                _ => &mut l.soft,
            };
            *slot = if add { *slot + bandwidth } else { *slot - bandwidth };
        }
        for t in [interval.start, interval.end] {
            let prev = self
                .levels
                .range(..t)
                .next_back()
                .map(|(_, l)| *l)
                .unwrap_or_default();
            if self.levels.get(&t) == Some(&prev) {
                self.levels.remove(&t);
            }
        }
    }

    fn headroom(&self, level: Level, qos: QosClass) -> Mbps {
        let r = self.reservable as f64;
        let g = level.guaranteed as f64;
        let s = level.soft as f64;
        let free = match qos {
            QosClass::GuaranteedCapped => (r - g - s / self.overbook_factor).floor(),
            QosClass::SoftCapped => (self.overbook_factor * (r - g).max(0.0)).floor() - s,
            QosClass::BestEffort => r,
        };
        free.max(0.0) as Mbps
    }

    /// Largest bandwidth of class `qos` admissible throughout `interval`.
    pub fn available_bandwidth(&self, interval: TimeInterval, qos: QosClass) -> Mbps {
        if qos == QosClass::BestEffort {
            return self.reservable;
        }
        self.steps(interval)
            .into_iter()
            .map(|(_, l)| self.headroom(l, qos))
            .min()
            .unwrap_or(self.reservable)
    }

    /// Constant bandwidth available over a whole time block; identical to
    /// [`Self::available_bandwidth`], kept as the per-resource block primitive.
    pub fn max_constant_bandwidth(&self, interval: TimeInterval, qos: QosClass) -> Mbps {
        self.available_bandwidth(interval, qos)
    }

    /// Availability as a step function over `interval`.
    pub fn availability_steps(&self, interval: TimeInterval, qos: QosClass) -> Vec<(TimeInterval, Mbps)> {
        if qos == QosClass::BestEffort {
            return vec![(interval, self.reservable)];
        }
        let mut out: Vec<(TimeInterval, Mbps)> = Vec::new();
        for (iv, l) in self.steps(interval) {
            let avail = self.headroom(l, qos);
            match out.last_mut() {
                Some((prev, a)) if *a == avail => prev.end = iv.end,
                _ => out.push((iv, avail)),
            }
        }
        out
    }

    pub fn available_labels(&self, interval: TimeInterval) -> BTreeSet<u16> {
        let mut ids = self.labels.to_set();
        for a in &self.allocations {
            if a.segment.interval.overlaps(&interval) {
                ids.remove(&a.segment.vlan);
            }
        }
        ids
    }

    /// Distinct allocation start/end instants, ascending.
    pub fn boundaries(&self) -> BTreeSet<EpochSecs> {
        self.allocations
            .iter()
            .flat_map(|a| [a.segment.interval.start, a.segment.interval.end])
            .collect()
    }

    fn check_admission(&self, segment: &ReservationSegment) -> Result<(), CalendarError> {
        if segment.port_urn != self.port_urn {
            return Err(CalendarError::PortMismatch {
                expected: self.port_urn.clone(),
                got: segment.port_urn.clone(),
            });
        }
        segment.validate()?;
        if segment.qos_class != QosClass::BestEffort {
            let max = self.available_bandwidth(segment.interval, segment.qos_class);
            if segment.bandwidth > max {
                return Err(CalendarError::InsufficientBandwidth {
                    port: self.port_urn.clone(),
                    max,
                });
            }
        }
        let free = self.available_labels(segment.interval);
        if !free.contains(&segment.vlan) {
            return Err(CalendarError::VlanConflict {
                port: self.port_urn.clone(),
                vlan: segment.vlan,
                alternatives: free,
            });
        }
        Ok(())
    }

    fn insert(&mut self, allocation: Allocation) {
        let s = &allocation.segment;
        self.adjust(s.interval, s.qos_class, s.bandwidth, true);
        self.allocations.push(allocation);
    }

    /// Places a held allocation expiring at `now + hold_duration` if every
    /// calendar invariant still holds afterwards.
    pub fn try_hold(
        &mut self,
        segment: ReservationSegment,
        delta_id: Option<&str>,
        now: EpochSecs,
        hold_duration: i64,
    ) -> Result<Allocation, CalendarError> {
        self.check_admission(&segment)?;
        let allocation = Allocation {
            segment,
            state: AllocationState::Held,
            hold_expires_at: Some(now + hold_duration),
            delta_id: delta_id.map(str::to_owned),
        };
        self.insert(allocation.clone());
        Ok(allocation)
    }

    /// Inserts a committed allocation without admission control. Used to
    /// mirror state reported by the authoritative owner of the calendar.
    pub fn load_committed(&mut self, segment: ReservationSegment) {
        self.insert(Allocation {
            segment,
            state: AllocationState::Committed,
            hold_expires_at: None,
            delta_id: None,
        });
    }

    /// Moves every allocation placed by `delta_id` to committed. Committing an
    /// already committed delta succeeds without change.
    pub fn commit_hold(&mut self, delta_id: &str, now: EpochSecs) -> Result<usize, CalendarError> {
        let mut matched = 0;
        for a in &self.allocations {
            if a.delta_id.as_deref() != Some(delta_id) {
                continue;
            }
            matched += 1;
            if a.state == AllocationState::Held && a.hold_expires_at.is_some_and(|e| e <= now) {
                return Err(CalendarError::HoldExpired {
                    delta_id: delta_id.to_owned(),
                });
            }
        }
        if matched == 0 {
            return Err(CalendarError::UnknownAllocation {
                delta_id: delta_id.to_owned(),
            });
        }
        for a in &mut self.allocations {
            if a.delta_id.as_deref() == Some(delta_id) {
                a.state = AllocationState::Committed;
                a.hold_expires_at = None;
            }
        }
        Ok(matched)
    }

    fn remove_where(&mut self, pred: impl Fn(&Allocation) -> bool) -> Vec<Allocation> {
        let (gone, kept): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.allocations).into_iter().partition(|a| pred(a));
        self.allocations = kept;
        for a in &gone {
            let s = &a.segment;
            self.adjust(s.interval, s.qos_class, s.bandwidth, false);
        }
        gone
    }

    /// Removes every allocation of `connection_id`; absent ids are a no-op.
    pub fn release(&mut self, connection_id: &str) -> Vec<Allocation> {
        self.remove_where(|a| a.segment.connection_id == connection_id)
    }

    pub fn release_delta(&mut self, delta_id: &str) -> Vec<Allocation> {
        self.remove_where(|a| a.delta_id.as_deref() == Some(delta_id))
    }

    /// Drops holds whose expiry is at or before `now`.
    pub fn expire_holds(&mut self, now: EpochSecs) -> Vec<String> {
        let gone = self.remove_where(|a| {
            a.state == AllocationState::Held && a.hold_expires_at.is_some_and(|e| e <= now)
        });
        let ids: BTreeSet<String> = gone.into_iter().map(|a| a.segment.connection_id).collect();
        ids.into_iter().collect()
    }

    pub fn connection_ids(&self) -> BTreeSet<&str> {
        self.allocations
            .iter()
            .map(|a| a.segment.connection_id.as_str())
            .collect()
    }

    /// Checks every calendar invariant exactly, sweeping allocation boundaries.
    pub fn audit(&self) -> Vec<CalendarViolation> {
        let mut out = Vec::new();
        let mut report = |at: Option<EpochSecs>, reason: String| {
            out.push(CalendarViolation {
                port_urn: self.port_urn.clone(),
                at,
                reason,
            })
        };
        for a in &self.allocations {
            let s = &a.segment;
            if s.port_urn != self.port_urn {
                report(None, format!("allocation {} names port {}", s.connection_id, s.port_urn));
            }
            if !self.labels.contains(s.vlan) {
                report(Some(s.interval.start), format!("vlan {} outside port labels", s.vlan));
            }
            match (a.state, a.hold_expires_at) {
                (AllocationState::Held, None) => report(None, format!("hold {} without expiry", s.connection_id)),
                (AllocationState::Committed, Some(_)) => {
                    report(None, format!("committed {} carries an expiry", s.connection_id))
                }
                _ => {}
            }
        }
        let mut rebuilt = self.cleared();
        for a in &self.allocations {
            rebuilt.insert(a.clone());
        }
        if rebuilt.levels != self.levels {
            report(None, "level index disagrees with allocations".into());
        }
        let f = self.overbook_factor;
        let r = self.reservable as f64;
        for (&t, l) in &rebuilt.levels {
            if l.guaranteed > self.reservable {
                report(Some(t), format!("guaranteed {} exceeds reservable {}", l.guaranteed, self.reservable));
            }
            if l.soft as f64 > f * (r - l.guaranteed as f64).max(0.0) {
                report(Some(t), format!("soft {} exceeds overbooked headroom", l.soft));
            }
        }
        for (i, a) in self.allocations.iter().enumerate() {
            for b in &self.allocations[i + 1..] {
                if a.segment.vlan == b.segment.vlan && a.segment.interval.overlaps(&b.segment.interval) {
                    report(
                        Some(a.segment.interval.start.max(b.segment.interval.start)),
                        format!(
                            "vlan {} shared by {} and {}",
                            a.segment.vlan, a.segment.connection_id, b.segment.connection_id
                        ),
                    );
                }
            }
        }
        out
    }
}
