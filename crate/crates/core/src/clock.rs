//! Injectable wall clock.
//!
//! Every timestamp the framework records comes from a [`Clock`]. Production
//! code uses [`SystemClock`]; fixtures and tests use [`ManualClock`], whose
//! `sleep` advances virtual time instead of blocking, so stalls far longer
//! than a temporal window can be simulated instantly.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, DurationRound, TimeDelta, Utc};

/// UTC timestamp with millisecond precision.
pub type Timestamp = DateTime<Utc>;

pub trait Clock: Send + Sync + std::fmt::Debug {
    fn now(&self) -> Timestamp;
    fn sleep(&self, d: Duration);
}

/// Truncates a timestamp to whole milliseconds.
pub fn truncate_ms(t: Timestamp) -> Timestamp {
    t.duration_trunc(TimeDelta::milliseconds(1)).unwrap_or(t)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        truncate_ms(Utc::now())
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// A clock that only moves when told to (or when someone sleeps on it).
#[derive(Debug, Clone)]
pub struct ManualClock {
    now: Arc<Mutex<Timestamp>>,
}

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        ManualClock {
            now: Arc::new(Mutex::new(truncate_ms(start))),
        }
    }

    pub fn advance(&self, d: Duration) {
        let mut now = self.now.lock().unwrap_or_else(|e| e.into_inner());
        *now += TimeDelta::from_std(d).unwrap_or(TimeDelta::MAX);
    }

    pub fn set(&self, t: Timestamp) {
        *self.now.lock().unwrap_or_else(|e| e.into_inner()) = truncate_ms(t);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        *self.now.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Signed difference `a - b` as a std duration, clamped at zero.
pub fn elapsed_between(later: Timestamp, earlier: Timestamp) -> Duration {
    (later - earlier).to_std().unwrap_or(Duration::ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manual_clock_sleep_advances() {
        let start = DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z")
            .unwrap()
            .with_timezone(&Utc);
        let clock = ManualClock::new(start);
        clock.sleep(Duration::from_secs(60));
        assert_eq!(elapsed_between(clock.now(), start), Duration::from_secs(60));
        // shared state across clones
        let other = clock.clone();
        other.advance(Duration::from_millis(5));
        assert_eq!((clock.now() - start).num_milliseconds(), 60_005);
    }

    #[test]
    fn system_clock_is_ms_truncated() {
        let t = SystemClock.now();
        assert_eq!(t.timestamp_subsec_nanos() % 1_000_000, 0);
    }
}
