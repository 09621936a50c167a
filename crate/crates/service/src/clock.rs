//! Wall-clock abstraction so hold expiry and intent times can be driven by
//! tests.

use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use fabric_core::model::EpochSecs;

pub trait Clock: Send + Sync + std::fmt::Debug {
    fn now(&self) -> EpochSecs;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> EpochSecs {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as EpochSecs)
            .unwrap_or_default()
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: EpochSecs) -> Self {
        ManualClock(AtomicI64::new(start))
    }

    pub fn advance(&self, secs: i64) -> EpochSecs {
        self.0.fetch_add(secs, Ordering::SeqCst) + secs
    }

    pub fn set(&self, now: EpochSecs) {
        self.0.store(now, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> EpochSecs {
        self.0.load(Ordering::SeqCst)
    }
}
