use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use crate::types::Millis;

/// Source of engine timestamps in milliseconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> Millis;
}

/// Manually advanced clock for deterministic runs.
#[derive(Debug, Default)]
pub struct VirtualClock {
    bits: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, t: Millis) {
        self.bits.store(t.to_bits(), Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Millis {
        f64::from_bits(self.bits.load(Ordering::SeqCst))
    }
}

/// Wall clock measured from construction.
#[derive(Debug)]
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
        }
    }

    pub fn start(&self) -> Instant {
        self.start
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Millis {
        self.start.elapsed().as_secs_f64() * 1000.0
    }
}
