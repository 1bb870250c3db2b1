//! Startup recovery, the consecutive-failure policy, health checks and the
//! once-only shutdown guard.

use std::fmt;
use std::fs::OpenOptions;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::acquire::{Field, OperatingWindow};
use crate::hal::{Hal, HalError};
use crate::store::csv::{read_archive, ArchiveError};
use crate::store::state::{SessionState, StateLoad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecoveryMode {
    Resume,
    FreshActive,
    FreshIdle,
}

impl fmt::Display for RecoveryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecoveryMode::Resume => "RESUME",
            RecoveryMode::FreshActive => "FRESH_ACTIVE",
            RecoveryMode::FreshIdle => "FRESH_IDLE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryReason {
    Resumed,
    NoSavedState,
    CorruptState,
    DifferentDay,
    OutsideWindow,
    NotRecording,
    ArchiveMissing,
    HeaderMismatch,
    ArchiveUnparsable,
    ArchiveTruncated,
}

impl fmt::Display for RecoveryReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap())
    }
}

impl RecoveryReason {
    /// The saved session exists but its archive failed the integrity check.
    pub fn is_integrity_failure(self) -> bool {
        matches!(
            self,
            RecoveryReason::ArchiveMissing
                | RecoveryReason::HeaderMismatch
                | RecoveryReason::ArchiveUnparsable
                | RecoveryReason::ArchiveTruncated
        )
    }
}

/// Where a resumed session picks up.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumePoint {
    pub state: SessionState,
    /// Rows actually present in the archive.
    pub rows_on_disk: u64,
    pub last_row: Option<NaiveDateTime>,
    /// Day accumulation in the archive's last row.
    pub last_rain_accum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryDecision {
    pub mode: RecoveryMode,
    pub reason: RecoveryReason,
    pub resume: Option<ResumePoint>,
}

/// Outcome of the archive integrity check for a saved session.
#[derive(Debug, Clone, PartialEq)]
pub enum Integrity {
    Intact {
        rows: u64,
        last_row: Option<NaiveDateTime>,
        last_rain_accum: Option<f64>,
    },
    Failed(RecoveryReason),
}

/// Header match, every line parses, and at least as many rows as recorded.
pub fn check_archive(path: &Path, saved_rows: u64) -> Integrity {
    if !path.exists() {
        return Integrity::Failed(RecoveryReason::ArchiveMissing);
    }
    match read_archive(path) {
        Ok(scan) => {
            let rows = scan.rows.len() as u64;
            if rows < saved_rows {
                return Integrity::Failed(RecoveryReason::ArchiveTruncated);
            }
            Integrity::Intact {
                rows,
                last_row: scan.last().map(|f| f.timestamp),
                last_rain_accum: scan.last().and_then(|f| f.get(Field::Rain)),
            }
        }
        Err(ArchiveError::HeaderMismatch { .. }) => Integrity::Failed(RecoveryReason::HeaderMismatch),
        Err(ArchiveError::Io { .. }) => Integrity::Failed(RecoveryReason::ArchiveMissing),
        Err(_) => Integrity::Failed(RecoveryReason::ArchiveUnparsable),
    }
}

/// Decides how to start. RESUME requires a saved same-day session that was
/// recording, a start inside the window, and an intact archive.
pub fn evaluate_recovery(saved: &StateLoad, now: NaiveDateTime, window: &OperatingWindow) -> RecoveryDecision {
    decide(saved, now, window, check_archive)
}

/// [`evaluate_recovery`] with the archive check supplied by the caller.
pub fn decide(
    saved: &StateLoad,
    now: NaiveDateTime,
    window: &OperatingWindow,
    check: impl FnOnce(&Path, u64) -> Integrity,
) -> RecoveryDecision {
    let in_window = window.contains(now);
    let fresh = |reason| RecoveryDecision {
        mode: if in_window {
            RecoveryMode::FreshActive
        } else {
            RecoveryMode::FreshIdle
        },
        reason,
        resume: None,
    };
    let state = match saved {
        StateLoad::Absent => return fresh(RecoveryReason::NoSavedState),
        StateLoad::Corrupt(_) => return fresh(RecoveryReason::CorruptState),
        StateLoad::Valid(s) => s,
    };
    if state.session_date != now.date() {
        return fresh(RecoveryReason::DifferentDay);
    }
    if !in_window {
        return fresh(RecoveryReason::OutsideWindow);
    }
    if !state.recording {
        return fresh(RecoveryReason::NotRecording);
    }
    let Some(path) = state.csv_path.as_deref() else {
        return fresh(RecoveryReason::ArchiveMissing);
    };
    match check(path, state.rows_written) {
        Integrity::Failed(reason) => fresh(reason),
        Integrity::Intact {
            rows,
            last_row,
            last_rain_accum,
        } => RecoveryDecision {
            mode: RecoveryMode::Resume,
            reason: RecoveryReason::Resumed,
            resume: Some(ResumePoint {
                state: state.clone(),
                rows_on_disk: rows,
                last_row,
                last_rain_accum,
            }),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleAction {
    Continue,
    Reinitialize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorCounter {
    pub consecutive_failures: u32,
    pub threshold: u32,
    pub total_failures: u64,
}

impl Default for ErrorCounter {
    fn default() -> Self {
        Self::new(10)
    }
}

impl ErrorCounter {
    pub fn new(threshold: u32) -> Self {
        assert!(threshold > 0, "threshold must be positive");
        Self {
            consecutive_failures: 0,
            threshold,
            total_failures: 0,
        }
    }

    pub fn record_cycle_result(&mut self, ok: bool) -> CycleAction {
        if ok {
            self.consecutive_failures = 0;
            return CycleAction::Continue;
        }
        self.total_failures += 1;
        self.consecutive_failures += 1;
        if self.consecutive_failures >= self.threshold {
            self.consecutive_failures = 0;
            CycleAction::Reinitialize
        } else {
            CycleAction::Continue
        }
    }
}

/// Re-runs the full hardware init sequence.
pub fn reinitialize_hardware(hal: &mut Hal) -> Result<(), HalError> {
    hal.init()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HealthReport {
    pub archive_writable: bool,
    pub rows_in_file: Option<u64>,
    pub rows_in_session: u64,
    pub backlog_pending: usize,
    pub backlog_high_water: usize,
    pub total_failures: u64,
    pub issues: Vec<String>,
}

impl HealthReport {
    pub fn all_green(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for HealthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "archive_writable={} rows_file={} rows_session={} backlog={} backlog_high={} failures_total={} status={}",
            self.archive_writable,
            self.rows_in_file.map(|r| r.to_string()).unwrap_or_else(|| "-".into()),
            self.rows_in_session,
            self.backlog_pending,
            self.backlog_high_water,
            self.total_failures,
            if self.all_green() { "ok" } else { "degraded" }
        )?;
        for issue in &self.issues {
            write!(f, " issue=\"{issue}\"")?;
        }
        Ok(())
    }
}

/// Inputs gathered by the caller for one health check.
#[derive(Debug, Clone, Copy)]
pub struct HealthInputs<'a> {
    pub archive: Option<&'a Path>,
    pub rows_in_session: u64,
    pub backlog_pending: usize,
    pub backlog_high_water: usize,
    pub backlog_limit: usize,
    pub counter: &'a ErrorCounter,
}

pub fn health_check(inputs: HealthInputs<'_>) -> HealthReport {
    let mut report = HealthReport {
        rows_in_session: inputs.rows_in_session,
        backlog_pending: inputs.backlog_pending,
        backlog_high_water: inputs.backlog_high_water,
        total_failures: inputs.counter.total_failures,
        ..Default::default()
    };
    match inputs.archive {
        None => report.issues.push("no open archive".into()),
        Some(path) => {
            report.archive_writable = OpenOptions::new().append(true).open(path).is_ok();
            if !report.archive_writable {
                report.issues.push(format!("{} not writable", path.display()));
            }
            match read_archive(path) {
                Ok(scan) => {
                    let rows = scan.rows.len() as u64;
                    report.rows_in_file = Some(rows);
                    if rows != inputs.rows_in_session {
                        report.issues.push(format!(
                            "row count mismatch: file has {rows}, session wrote {}",
                            inputs.rows_in_session
                        ));
                    }
                }
                Err(e) => report.issues.push(e.to_string()),
            }
        }
    }
    if inputs.backlog_pending * 2 > inputs.backlog_limit {
        report.issues.push(format!(
            "sink backlog at {}/{}",
            inputs.backlog_pending, inputs.backlog_limit
        ));
    }
    if inputs.counter.consecutive_failures > 0 {
        report.issues.push(format!(
            "{} consecutive failed cycles",
            inputs.counter.consecutive_failures
        ));
    }
    report
}

/// Lets exactly one caller into the shutdown sequence.
#[derive(Debug, Default)]
pub struct ShutdownGuard(AtomicBool);

impl ShutdownGuard {
    pub fn new() -> Self {
        Self::default()
    }

    /// True for the first caller only.
    pub fn begin(&self) -> bool {
        !self.0.swap(true, Ordering::SeqCst)
    }

    pub fn started(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}
