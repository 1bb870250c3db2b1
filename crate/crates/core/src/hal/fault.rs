//! Timed fault directives for the simulator.
//!
//! A script is a TOML file with one `[[fault]]` table per entry:
//!
//! ```toml
//! [[fault]]
//! at = "12:00:00"        # time of day on the simulated date, or a full ISO timestamp
//! kind = "sensor_fail"
//! target = "T11"         # T0..T19, IRR+, IRR-, VANE, DHT, PM0, PM1, SEL
//! duration_s = 600
//!
//! [[fault]]
//! at = "12:00:30"
//! kind = "power_cycle"
//! down_s = 600
//!
//! [[fault]]
//! at = "10:00:00"
//! kind = "net_outage"
//! duration_s = 2700
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, TimeDelta};
use serde::Deserialize;
use thiserror::Error;

use super::channel_map::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultTarget {
    Signal(Signal),
    /// The single-wire ambient sensor.
    Dht,
    /// Power monitor for the given panel index.
    PowerMonitor(usize),
    /// Shared mux select lines; every mux selection fails.
    SelectLines,
}

impl fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultTarget::Signal(s) => s.fmt(f),
            FaultTarget::Dht => f.write_str("DHT"),
            FaultTarget::PowerMonitor(p) => write!(f, "PM{p}"),
            FaultTarget::SelectLines => f.write_str("SEL"),
        }
    }
}

impl FromStr for FaultTarget {
    type Err = FaultScriptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DHT" => Ok(FaultTarget::Dht),
            "SEL" => Ok(FaultTarget::SelectLines),
            "PM0" => Ok(FaultTarget::PowerMonitor(0)),
            "PM1" => Ok(FaultTarget::PowerMonitor(1)),
            _ => s
                .parse::<Signal>()
                .map(FaultTarget::Signal)
                .map_err(|_| FaultScriptError::Target(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    SensorFail { target: FaultTarget, duration: Duration },
    PowerCycle { down_for: Duration },
    NetOutage { duration: Duration },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultEntry {
    pub at: NaiveDateTime,
    pub kind: FaultKind,
}

impl FaultEntry {
    /// End of the entry's effect, exclusive.
    pub fn until(&self) -> NaiveDateTime {
        let d = match self.kind {
            FaultKind::SensorFail { duration, .. } => duration,
            FaultKind::PowerCycle { down_for } => down_for,
            FaultKind::NetOutage { duration } => duration,
        };
        self.at + TimeDelta::from_std(d).unwrap()
    }

    pub fn covers(&self, t: NaiveDateTime) -> bool {
        self.at <= t && t < self.until()
    }
}

#[derive(Debug, Error)]
pub enum FaultScriptError {
    #[error("fault script io: {0}")]
    Io(#[from] std::io::Error),
    #[error("fault script syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("unknown fault target `{0}`")]
    Target(String),
    #[error("unknown fault kind `{0}`")]
    Kind(String),
    #[error("bad activation time `{0}`")]
    Time(String),
    #[error("fault #{0}: duration must be positive")]
    Duration(usize),
    #[error("fault #{0}: missing `{1}`")]
    Missing(usize, &'static str),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultScript {
    entries: Vec<FaultEntry>,
}

impl FaultScript {
    /// Sorts entries by activation time (stable) and rejects zero durations.
    pub fn new(mut entries: Vec<FaultEntry>) -> Result<Self, FaultScriptError> {
        for (i, e) in entries.iter().enumerate() {
            if e.until() <= e.at {
                return Err(FaultScriptError::Duration(i));
            }
        }
        entries.sort_by_key(|e| e.at);
        Ok(Self { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[FaultEntry] {
        &self.entries
    }

    pub fn sensor_faults(&self) -> impl Iterator<Item = (FaultTarget, &FaultEntry)> {
        self.entries.iter().filter_map(|e| match e.kind {
            FaultKind::SensorFail { target, .. } => Some((target, e)),
            _ => None,
        })
    }

    pub fn power_cycles(&self) -> impl Iterator<Item = &FaultEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.kind, FaultKind::PowerCycle { .. }))
    }

    pub fn net_outages(&self) -> impl Iterator<Item = &FaultEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.kind, FaultKind::NetOutage { .. }))
    }

    pub fn net_down_at(&self, t: NaiveDateTime) -> bool {
        self.net_outages().any(|e| e.covers(t))
    }

    pub fn parse(text: &str, date: NaiveDate) -> Result<Self, FaultScriptError> {
        #[derive(Deserialize)]
        struct File {
            #[serde(default)]
            fault: Vec<RawEntry>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawEntry {
            at: String,
            kind: String,
            target: Option<String>,
            duration_s: Option<f64>,
            down_s: Option<f64>,
        }

        let file: File = toml::from_str(text)?;
        let mut entries = Vec::with_capacity(file.fault.len());
        for (i, raw) in file.fault.into_iter().enumerate() {
            let at = parse_activation(&raw.at, date)?;
            let secs = |v: Option<f64>, name| {
                let v = v.ok_or(FaultScriptError::Missing(i, name))?;
                if v.is_nan() || v <= 0.0 {
                    return Err(FaultScriptError::Duration(i));
                }
                Ok(Duration::from_secs_f64(v))
            };
            let kind = match raw.kind.as_str() {
                "sensor_fail" => FaultKind::SensorFail {
                    target: raw
                        .target
                        .as_deref()
                        .ok_or(FaultScriptError::Missing(i, "target"))?
                        .parse()?,
                    duration: secs(raw.duration_s, "duration_s")?,
                },
                "power_cycle" => FaultKind::PowerCycle {
                    down_for: secs(raw.down_s, "down_s")?,
                },
                "net_outage" => FaultKind::NetOutage {
                    duration: secs(raw.duration_s, "duration_s")?,
                },
                other => return Err(FaultScriptError::Kind(other.to_string())),
            };
            entries.push(FaultEntry { at, kind });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path, date: NaiveDate) -> Result<Self, FaultScriptError> {
        Self::parse(&std::fs::read_to_string(path)?, date)
    }
}

fn parse_activation(s: &str, date: NaiveDate) -> Result<NaiveDateTime, FaultScriptError> {
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(t);
    }
    for fmt in ["%H:%M:%S", "%H:%M"] {
        if let Ok(t) = NaiveTime::parse_from_str(s, fmt) {
            return Ok(date.and_time(t));
        }
    }
    Err(FaultScriptError::Time(s.to_string()))
}
