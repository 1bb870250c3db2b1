use std::collections::VecDeque;
use std::time::Duration;

use chrono::{NaiveDateTime, TimeDelta};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no samples within the averaging horizon")]
pub struct EmptyWindow;

/// Timestamped samples over a fixed horizon, oldest first.
///
/// A sample stays while its age relative to the newest sample is strictly
/// less than the horizon. Averages are recomputed from the retained samples
/// in timestamp order, so they match a plain mean over the same list exactly.
#[derive(Debug, Clone)]
pub struct RollingWindow {
    capacity: usize,
    horizon: TimeDelta,
    samples: VecDeque<(NaiveDateTime, f64)>,
}

impl RollingWindow {
    pub fn new(capacity: usize, horizon: Duration) -> Self {
        assert!(capacity > 0, "window capacity must be positive");
        Self {
            capacity,
            horizon: TimeDelta::from_std(horizon).expect("horizon out of range"),
            samples: VecDeque::with_capacity(capacity.min(64)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn horizon(&self) -> Duration {
        self.horizon.to_std().unwrap()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn newest(&self) -> Option<NaiveDateTime> {
        self.samples.back().map(|(t, _)| *t)
    }

    pub fn samples(&self) -> impl Iterator<Item = (NaiveDateTime, f64)> + '_ {
        self.samples.iter().copied()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    /// Inserts in timestamp order. Returns false when the sample is already
    /// outside the horizon and was dropped.
    pub fn push(&mut self, at: NaiveDateTime, value: f64) -> bool {
        if let Some(newest) = self.newest() {
            if newest - at >= self.horizon {
                return false;
            }
        }
        let pos = self.samples.partition_point(|(t, _)| *t <= at);
        self.samples.insert(pos, (at, value));
        let newest = self.newest().unwrap();
        while let Some((t, _)) = self.samples.front() {
            if newest - *t >= self.horizon || self.samples.len() > self.capacity {
                self.samples.pop_front();
            } else {
                break;
            }
        }
        true
    }

    /// Mean of the retained samples.
    pub fn average(&self) -> Result<f64, EmptyWindow> {
        mean(self.samples.iter().map(|(_, v)| *v))
    }

    /// Mean of samples younger than the horizon as seen from `now`.
    pub fn average_at(&self, now: NaiveDateTime) -> Result<f64, EmptyWindow> {
        mean(self.in_horizon(now).map(|(_, v)| v))
    }

    /// Sum and count of samples younger than the horizon as seen from `now`.
    pub fn sum_at(&self, now: NaiveDateTime) -> (f64, usize) {
        self.in_horizon(now).fold((0.0, 0), |(s, n), (_, v)| (s + v, n + 1))
    }

    fn in_horizon(&self, now: NaiveDateTime) -> impl Iterator<Item = (NaiveDateTime, f64)> + '_ {
        let horizon = self.horizon;
        self.samples
            .iter()
            .copied()
            .filter(move |(t, _)| *t <= now && now - *t < horizon)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Result<f64, EmptyWindow> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        Err(EmptyWindow)
    } else {
        Ok(sum / n as f64)
    }
}
