//! Injectable time source.
//!
//! Every wait in the acquisition path goes through [`Clock`], so the same
//! sampler and scheduler code runs against wall time in the field and against
//! [`SimClock`] in tests, where a simulated day completes in seconds.

use std::sync::Mutex;
use std::time::Duration;

use chrono::{FixedOffset, NaiveDateTime, TimeDelta, Timelike, Utc};

pub trait Clock: Send + Sync {
    /// Local civil time at the site.
    fn now(&self) -> NaiveDateTime;

    fn sleep(&self, duration: Duration);

    fn sleep_until(&self, deadline: NaiveDateTime) {
        let now = self.now();
        if deadline > now {
            self.sleep((deadline - now).to_std().unwrap_or_default());
        }
    }
}

/// Wall clock shifted to the site's fixed UTC offset.
#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    offset: FixedOffset,
}

impl SystemClock {
    pub fn new(offset: FixedOffset) -> Self {
        Self { offset }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> NaiveDateTime {
        Utc::now().with_timezone(&self.offset).naive_local()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Virtual clock. `sleep` returns immediately after moving time forward.
#[derive(Debug)]
pub struct SimClock {
    now: Mutex<NaiveDateTime>,
}

impl SimClock {
    pub fn new(start: NaiveDateTime) -> Self {
        Self {
            now: Mutex::new(start),
        }
    }

    /// Moves time forward to `t`. Moving backwards is ignored.
    pub fn advance_to(&self, t: NaiveDateTime) {
        let mut now = self.now.lock().unwrap();
        if t > *now {
            *now = t;
        }
    }

    pub fn advance(&self, d: Duration) {
        let mut now = self.now.lock().unwrap();
        *now += TimeDelta::from_std(d).expect("duration out of range");
    }
}

impl Clock for SimClock {
    fn now(&self) -> NaiveDateTime {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, duration: Duration) {
        self.advance(duration);
    }
}

/// Smallest minute boundary `>= t`.
pub fn ceil_minute(t: NaiveDateTime) -> NaiveDateTime {
    let floor = floor_minute(t);
    if floor == t {
        t
    } else {
        floor + TimeDelta::minutes(1)
    }
}

pub fn floor_minute(t: NaiveDateTime) -> NaiveDateTime {
    t.with_second(0).unwrap().with_nanosecond(0).unwrap()
}

/// Smallest whole second `>= t`.
pub fn ceil_second(t: NaiveDateTime) -> NaiveDateTime {
    let floor = t.with_nanosecond(0).unwrap();
    if floor == t {
        t
    } else {
        floor + TimeDelta::seconds(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn at(h: u32, m: u32, s: u32, ms: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2025, 3, 10)
            .unwrap()
            .and_hms_milli_opt(h, m, s, ms)
            .unwrap()
    }

    #[test]
    fn sim_clock_sleep_advances() {
        let clock = SimClock::new(at(5, 0, 0, 0));
        clock.sleep(Duration::from_millis(16));
        assert_eq!(clock.now(), at(5, 0, 0, 16));
        clock.sleep_until(at(5, 0, 0, 10));
        assert_eq!(clock.now(), at(5, 0, 0, 16));
        clock.advance_to(at(4, 0, 0, 0));
        assert_eq!(clock.now(), at(5, 0, 0, 16));
    }

    #[test]
    fn minute_rounding() {
        assert_eq!(ceil_minute(at(12, 0, 0, 0)), at(12, 0, 0, 0));
        assert_eq!(ceil_minute(at(12, 0, 30, 0)), at(12, 1, 0, 0));
        assert_eq!(ceil_minute(at(12, 0, 0, 1)), at(12, 1, 0, 0));
        assert_eq!(ceil_second(at(12, 0, 0, 360)), at(12, 0, 1, 0));
    }
}
