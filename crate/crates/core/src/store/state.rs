//! Session state file `daq_state.txt`.
//!
//! Plain `key=value` lines in a fixed order:
//!
//! | key | value |
//! |-----|-------|
//! | `schema_version` | integer, currently 1 |
//! | `session_date` | `YYYY-MM-DD` |
//! | `csv_path` | archive file of the session, empty when idle |
//! | `rows_written` | data rows appended this session |
//! | `rain_day_accum` | mm since day start |
//! | `energy_offsets` | `p0,p1` J added to the monitors' registers |
//! | `energy_last` | `p0,p1` last reported cumulative J |
//! | `recording` | `true` / `false` |
//! | `last_write` | `YYYY-MM-DDTHH:MM:SS` local time |
//! | `checksum` | SHA-256 hex of every preceding byte |
//!
//! The file is replaced atomically, so a reader sees one complete version.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::atomic::{write_atomic_with, CrashPoint};
use crate::acquire::{SessionCounters, PANEL_COUNT};

pub const STATE_FILE: &str = "daq_state.txt";
pub const SCHEMA_VERSION: u32 = 1;
const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub schema_version: u32,
    pub session_date: NaiveDate,
    pub csv_path: Option<PathBuf>,
    pub rows_written: u64,
    pub counters: SessionCounters,
    pub recording: bool,
    pub last_write: NaiveDateTime,
}

impl SessionState {
    /// State with no open session and zeroed counters.
    pub fn idle(now: NaiveDateTime) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            session_date: now.date(),
            csv_path: None,
            rows_written: 0,
            counters: SessionCounters::default(),
            recording: false,
            last_write: now,
        }
    }

    pub fn encode(&self) -> String {
        let pair = |v: [f64; PANEL_COUNT]| format!("{},{}", v[0], v[1]);
        let mut body = String::new();
        let _ = writeln!(body, "schema_version={}", self.schema_version);
        let _ = writeln!(body, "session_date={}", self.session_date.format("%Y-%m-%d"));
        let _ = writeln!(
            body,
            "csv_path={}",
            self.csv_path.as_deref().map(|p| p.display().to_string()).unwrap_or_default()
        );
        let _ = writeln!(body, "rows_written={}", self.rows_written);
        let _ = writeln!(body, "rain_day_accum={}", self.counters.rain_day_accum);
        let _ = writeln!(body, "energy_offsets={}", pair(self.counters.energy_offsets));
        let _ = writeln!(body, "energy_last={}", pair(self.counters.energy_last));
        let _ = writeln!(body, "recording={}", self.recording);
        let _ = writeln!(body, "last_write={}", self.last_write.format(TS_FORMAT));
        let sum = hex::encode(Sha256::digest(body.as_bytes()));
        let _ = writeln!(body, "checksum={sum}");
        body
    }

    pub fn decode(text: &str) -> Result<Self, String> {
        let body_end = text
            .rfind("checksum=")
            .ok_or_else(|| "missing checksum line".to_string())?;
        let (body, tail) = text.split_at(body_end);
        let sum = tail
            .strip_prefix("checksum=")
            .and_then(|s| s.strip_suffix('\n'))
            .ok_or("truncated checksum line")?;
        if hex::encode(Sha256::digest(body.as_bytes())) != sum {
            return Err("checksum mismatch".into());
        }

        let mut lines = body.lines();
        let mut next = |key: &str| -> Result<String, String> {
            let line = lines.next().ok_or_else(|| format!("missing `{key}`"))?;
            line.strip_prefix(key)
                .and_then(|s| s.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| format!("expected `{key}`, found `{line}`"))
        };
        let num = |key: &str, v: String| v.parse::<f64>().map_err(|e| format!("{key}: {e}"));
        let pair = |key: &str, v: String| -> Result<[f64; PANEL_COUNT], String> {
            let (a, b) = v.split_once(',').ok_or_else(|| format!("{key}: expected two values"))?;
            Ok([num(key, a.into())?, num(key, b.into())?])
        };

        let schema_version: u32 = next("schema_version")?
            .parse()
            .map_err(|e| format!("schema_version: {e}"))?;
        if schema_version != SCHEMA_VERSION {
            return Err(format!("schema_version {schema_version}, expected {SCHEMA_VERSION}"));
        }
        let session_date = NaiveDate::parse_from_str(&next("session_date")?, "%Y-%m-%d")
            .map_err(|e| format!("session_date: {e}"))?;
        let csv_path = Some(next("csv_path")?)
            .filter(|s| !s.is_empty())
            .map(PathBuf::from);
        let rows_written = next("rows_written")?
            .parse()
            .map_err(|e| format!("rows_written: {e}"))?;
        let rain_day_accum = num("rain_day_accum", next("rain_day_accum")?)?;
        let energy_offsets = pair("energy_offsets", next("energy_offsets")?)?;
        let energy_last = pair("energy_last", next("energy_last")?)?;
        let recording = next("recording")?
            .parse()
            .map_err(|e| format!("recording: {e}"))?;
        let last_write = NaiveDateTime::parse_from_str(&next("last_write")?, TS_FORMAT)
            .map_err(|e| format!("last_write: {e}"))?;
        Ok(Self {
            schema_version,
            session_date,
            csv_path,
            rows_written,
            counters: SessionCounters {
                rain_day_accum,
                energy_offsets,
                energy_last,
            },
            recording,
            last_write,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateLoad {
    Absent,
    /// Present but unusable; treated as absent by recovery.
    Corrupt(String),
    Valid(SessionState),
}

impl StateLoad {
    pub fn valid(&self) -> Option<&SessionState> {
        match self {
            StateLoad::Valid(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum StateError {
    #[error("state write to {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("state write interrupted at {0:?}")]
    Crashed(CrashPoint),
}

pub fn state_path(dir: &Path) -> PathBuf {
    dir.join(STATE_FILE)
}

pub fn write_state(dir: &Path, state: &SessionState) -> Result<(), StateError> {
    write_state_with(dir, state, None)
}

/// [`write_state`] with an optional injected crash.
pub fn write_state_with(dir: &Path, state: &SessionState, crash: Option<CrashPoint>) -> Result<(), StateError> {
    let path = state_path(dir);
    match write_atomic_with(&path, state.encode().as_bytes(), crash) {
        Ok(true) => Ok(()),
        Ok(false) => Err(StateError::Crashed(crash.unwrap())),
        Err(source) => Err(StateError::Io { path, source }),
    }
}

pub fn load_state(dir: &Path) -> StateLoad {
    match fs::read(state_path(dir)) {
        Err(e) if e.kind() == io::ErrorKind::NotFound => StateLoad::Absent,
        Err(e) => StateLoad::Corrupt(e.to_string()),
        Ok(bytes) => match String::from_utf8(bytes) {
            Err(_) => StateLoad::Corrupt("not UTF-8".into()),
            Ok(text) => match SessionState::decode(&text) {
                Ok(s) => StateLoad::Valid(s),
                Err(e) => StateLoad::Corrupt(e),
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(rows: u64) -> SessionState {
        let date = NaiveDate::from_ymd_opt(2025, 3, 10).unwrap();
        SessionState {
            schema_version: SCHEMA_VERSION,
            session_date: date,
            csv_path: Some(PathBuf::from("/data/archive/data_20250310.csv")),
            rows_written: rows,
            counters: SessionCounters {
                rain_day_accum: 1.1176,
                energy_offsets: [0.0, 12.5],
                energy_last: [1234.5678, 1301.25],
            },
            recording: true,
            last_write: date.and_hms_opt(12, 0, 0).unwrap(),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(load_state(dir.path()), StateLoad::Absent);
        write_state(dir.path(), &sample(420)).unwrap();
        assert_eq!(load_state(dir.path()), StateLoad::Valid(sample(420)));
        let idle = SessionState::idle(sample(0).last_write);
        write_state(dir.path(), &idle).unwrap();
        assert_eq!(load_state(dir.path()), StateLoad::Valid(idle));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let text = sample(3).encode();
        for cut in 0..text.len() {
            fs::write(state_path(dir.path()), &text[..cut]).unwrap();
            assert!(matches!(load_state(dir.path()), StateLoad::Corrupt(_)), "cut at {cut}");
        }
    }

    #[test]
    fn flipped_value_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let text = sample(3).encode().replace("rows_written=3", "rows_written=4");
        fs::write(state_path(dir.path()), text).unwrap();
        assert_eq!(
            load_state(dir.path()),
            StateLoad::Corrupt("checksum mismatch".into())
        );
    }

    #[test]
    fn every_crash_point_leaves_old_or_new() {
        let old = sample(10);
        let new = sample(11);
        let points = CrashPoint::all(new.encode().len());
        for p in points {
            let dir = tempfile::tempdir().unwrap();
            write_state(dir.path(), &old).unwrap();
            assert!(write_state_with(dir.path(), &new, Some(p)).is_err());
            match load_state(dir.path()) {
                StateLoad::Valid(s) => assert!(s == old || s == new, "{p:?}"),
                other => panic!("{p:?}: {other:?}"),
            }
            // A later clean write recovers from any leftover temp file.
            write_state(dir.path(), &new).unwrap();
            assert_eq!(load_state(dir.path()), StateLoad::Valid(new.clone()));
        }
    }
}
