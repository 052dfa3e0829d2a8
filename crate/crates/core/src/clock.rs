//! Session time sources. Everything in the engine reads time through
//! [`Clock`] so tests and simulations can run on a virtual clock.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    /// Milliseconds since the clock's origin.
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

/// Advances only when slept on.
#[derive(Clone, Default)]
pub struct VirtualClock {
    now: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new(start_ms: u64) -> Self {
        VirtualClock { now: Arc::new(AtomicU64::new(start_ms)) }
    }

    pub fn advance_to(&self, t_ms: u64) {
        self.now.fetch_max(t_ms, Ordering::AcqRel);
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::Acquire)
    }

    fn sleep_ms(&self, ms: u64) {
        self.now.fetch_add(ms, Ordering::AcqRel);
    }
}

/// Wall-clock time, optionally running faster than real time.
#[derive(Clone)]
pub struct SystemClock {
    origin: Instant,
    speed: f64,
}

impl SystemClock {
    pub fn new() -> Self {
        Self::scaled(1.0)
    }

    /// `speed` session milliseconds pass per real millisecond.
    pub fn scaled(speed: f64) -> Self {
        assert!(speed > 0.0, "clock speed must be positive");
        SystemClock { origin: Instant::now(), speed }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        (self.origin.elapsed().as_secs_f64() * 1000.0 * self.speed) as u64
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_secs_f64(ms as f64 / 1000.0 / self.speed));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_moves_only_when_told() {
        let c = VirtualClock::new(100);
        assert_eq!(c.now_ms(), 100);
        c.sleep_ms(50);
        assert_eq!(c.now_ms(), 150);
        c.advance_to(120);
        assert_eq!(c.now_ms(), 150);
        c.advance_to(400);
        assert_eq!(c.now_ms(), 400);
    }

    #[test]
    fn scaled_clock_runs_fast() {
        let c = SystemClock::scaled(100.0);
        c.sleep_ms(1000);
        assert!(c.now_ms() >= 1000);
    }
}
