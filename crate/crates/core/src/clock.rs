//! Time source for query deadlines and latency measurement.
//!
//! The system clock measures wall time. The virtual clock only moves when a
//! simulated component advances it, which makes latency figures and deadline
//! breaches reproducible in tests and benchmarks.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

#[derive(Debug, Default)]
pub struct VirtualClock {
    nanos: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Arc<Self> {
        Arc::new(VirtualClock::default())
    }

    pub fn advance(&self, by: Duration) {
        self.nanos.fetch_add(by.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn elapsed(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone)]
pub enum Clock {
    System(Instant),
    Virtual(Arc<VirtualClock>),
}

impl Default for Clock {
    fn default() -> Self {
        Clock::system()
    }
}

impl Clock {
    pub fn system() -> Self {
        Clock::System(Instant::now())
    }

    pub fn virtual_clock() -> (Self, Arc<VirtualClock>) {
        let v = VirtualClock::new();
        (Clock::Virtual(v.clone()), v)
    }

    /// Time since the clock's origin.
    pub fn now(&self) -> Duration {
        match self {
            Clock::System(origin) => origin.elapsed(),
            Clock::Virtual(v) => v.elapsed(),
        }
    }

    pub fn sleep(&self, d: Duration) {
        match self {
            Clock::System(_) => std::thread::sleep(d),
            Clock::Virtual(v) => v.advance(d),
        }
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual(_))
    }
}
