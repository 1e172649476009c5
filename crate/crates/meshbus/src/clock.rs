//! Time system: relative time since a settable reference epoch.
//!
//! In real mode `now()` is the monotonic time elapsed since the epoch. In
//! virtual mode time only moves when the owner advances it, which makes
//! simulations and tests deterministic.

use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::time::{Duration, Instant};

#[derive(Debug)]
pub struct TimeSystem {
    /// Fixed origin all offsets are measured from.
    base: Instant,
    /// Epoch as nanoseconds after `base` (may be negative).
    epoch_ns: AtomicI64,
    virtual_mode: AtomicBool,
    /// Current virtual time as nanoseconds after `base`.
    virtual_ns: AtomicI64,
}

impl Default for TimeSystem {
    fn default() -> Self {
        Self::new()
    }
}

fn signed_offset(base: Instant, at: Instant) -> i64 {
    match at.checked_duration_since(base) {
        Some(d) => d.as_nanos() as i64,
        None => -(base.duration_since(at).as_nanos() as i64),
    }
}

impl TimeSystem {
    /// Real-time clock with the epoch set to now.
    pub fn new() -> Self {
        Self {
            base: Instant::now(),
            epoch_ns: AtomicI64::new(0),
            virtual_mode: AtomicBool::new(false),
            virtual_ns: AtomicI64::new(0),
        }
    }

    /// Virtual clock starting at `wall` with epoch `epoch`, both expressed
    /// as offsets on a caller-chosen timeline.
    pub fn new_virtual(epoch: Duration, wall: Duration) -> Self {
        let ts = Self::new();
        ts.virtual_mode.store(true, Ordering::Release);
        ts.epoch_ns.store(epoch.as_nanos() as i64, Ordering::Release);
        ts.virtual_ns.store(wall.as_nanos() as i64, Ordering::Release);
        ts
    }

    pub fn is_virtual(&self) -> bool {
        self.virtual_mode.load(Ordering::Acquire)
    }

    /// Sets the reference instant. Real mode only.
    pub fn set_epoch(&self, instant: Instant) {
        self.epoch_ns
            .store(signed_offset(self.base, instant), Ordering::Release);
    }

    /// Resets the epoch to the current instant (or current virtual time).
    pub fn reset_epoch(&self) {
        let now = self.raw_ns();
        self.epoch_ns.store(now, Ordering::Release);
    }

    /// Sets the epoch on the virtual timeline.
    pub fn set_virtual_epoch(&self, epoch: Duration) {
        self.epoch_ns.store(epoch.as_nanos() as i64, Ordering::Release);
    }

    /// Moves virtual time forward by `by`.
    pub fn advance(&self, by: Duration) {
        self.virtual_ns
            .fetch_add(by.as_nanos() as i64, Ordering::AcqRel);
    }

    /// Sets virtual time. Going backwards is ignored to keep `now()`
    /// monotonic.
    pub fn set_virtual_now(&self, wall: Duration) {
        self.virtual_ns
            .fetch_max(wall.as_nanos() as i64, Ordering::AcqRel);
    }

    fn raw_ns(&self) -> i64 {
        if self.is_virtual() {
            self.virtual_ns.load(Ordering::Acquire)
        } else {
            self.base.elapsed().as_nanos() as i64
        }
    }

    /// Time since the epoch. Zero if the epoch lies in the future.
    pub fn now(&self) -> Duration {
        let delta = self.raw_ns() - self.epoch_ns.load(Ordering::Acquire);
        Duration::from_nanos(delta.max(0) as u64)
    }

    pub fn now_ns(&self) -> u64 {
        self.now().as_nanos() as u64
    }
}
