//! The acquisition node: session lifecycle around the scheduler's events.
//!
//! [`Node::boot`] runs recovery and opens (or resumes) the day's session.
//! Each timeline event then goes through [`Node::on_event`]. [`Node::shutdown`]
//! closes the session and releases the hardware. Two executors drive a node:
//! [`run_threaded`] with the sampler and scheduler on their own threads, and
//! the single-threaded scenario replay in [`scenario`].

pub mod scenario;

use std::collections::{BTreeMap, VecDeque};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use chrono::{FixedOffset, NaiveDate, NaiveDateTime, TimeDelta};
use serde::Serialize;
use thiserror::Error;

use crate::acquire::{
    assemble_minute_frame, run_fast_sampler, run_scheduler, Cursor, Event, FastSampler, MeasurementFrame,
    OperatingWindow, ScheduleHandler, ScheduledEvent, Scheduler, SessionCounters, SharedBuffers,
};
use crate::clock::{ceil_minute, Clock};
use crate::config::RunConfig;
use crate::convert::Calibration;
use crate::hal::Bus;
use crate::ops_log::OpsLog;
use crate::recover::{
    evaluate_recovery, health_check, CycleAction, ErrorCounter, HealthInputs, RecoveryDecision, RecoveryMode,
    ResumePoint, ShutdownGuard,
};
use crate::store::csv::{open_daily_csv, open_fresh_csv, ArchiveError, DailyArchive};
use crate::store::line_protocol::encode_line_protocol;
use crate::store::sink::{Batch, SinkBacklog, SinkClient, SPOOL_FILE};
use crate::store::state::{load_state, write_state, SessionState, StateError, StateLoad, SCHEMA_VERSION};
use crate::store::sync::{ArchiveSync, SyncTarget, MANIFEST_FILE};

/// A frame more than this far behind the clock is dropped rather than
/// assembled from current readings.
const LATE_FRAME_LIMIT: TimeDelta = TimeDelta::seconds(60);

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("state: {0}")]
    State(#[from] StateError),
    #[error("{0}")]
    Setup(String),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> DaemonError + '_ {
    move |source| DaemonError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Static parameters of a node.
#[derive(Debug, Clone)]
pub struct NodeSettings {
    pub archive_dir: PathBuf,
    pub state_dir: PathBuf,
    pub window: OperatingWindow,
    pub calibration: Calibration,
    pub utc_offset: FixedOffset,
    pub backlog_limit: usize,
    pub reinit_threshold: u32,
}

impl NodeSettings {
    /// Expects a validated config.
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            archive_dir: cfg.paths.archive_dir.clone(),
            state_dir: cfg.paths.state_dir.clone(),
            window: cfg.window(),
            calibration: cfg.calibration.clone(),
            utc_offset: cfg.utc_offset().expect("validated offset"),
            backlog_limit: cfg.sink.backlog_limit,
            reinit_threshold: cfg.recovery.reinit_threshold,
        }
    }
}

/// Handles a node shares with the sampler or owns outright.
pub struct NodeIo {
    pub clock: Arc<dyn Clock>,
    pub bus: Bus,
    pub log: OpsLog,
    pub buffers: SharedBuffers,
    pub acquiring: Arc<AtomicBool>,
    pub sink: Box<dyn SinkClient>,
    pub sync_target: Option<Box<dyn SyncTarget>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionEnd {
    EndOfDay,
    Shutdown,
}

/// Running totals for one node lifetime.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NodeStats {
    pub frames: u64,
    pub reinits: u64,
    pub health_reports: u64,
    pub degraded_health_reports: u64,
    /// Flagged-frame count per CSV column.
    pub flags: BTreeMap<String, u64>,
    pub late_frames_skipped: u64,
}

impl NodeStats {
    pub fn merge(&mut self, other: &NodeStats) {
        self.frames += other.frames;
        self.reinits += other.reinits;
        self.health_reports += other.health_reports;
        self.degraded_health_reports += other.degraded_health_reports;
        self.late_frames_skipped += other.late_frames_skipped;
        for (k, v) in &other.flags {
            *self.flags.entry(k.clone()).or_default() += v;
        }
    }
}

pub struct Node {
    settings: NodeSettings,
    clock: Arc<dyn Clock>,
    bus: Bus,
    log: OpsLog,
    buffers: SharedBuffers,
    acquiring: Arc<AtomicBool>,
    sink: Box<dyn SinkClient>,
    sink_down: bool,
    backlog: SinkBacklog,
    sync: Option<(ArchiveSync, Box<dyn SyncTarget>)>,
    archive: Option<DailyArchive>,
    /// Frames assembled but not yet durable in the archive.
    unwritten: VecDeque<MeasurementFrame>,
    session_date: NaiveDate,
    counters: SessionCounters,
    recording: bool,
    errors: ErrorCounter,
    stats: NodeStats,
    decision: RecoveryDecision,
    start: Cursor,
    guard: ShutdownGuard,
}

impl Node {
    /// Power-on path: hardware init, recovery decision, session setup.
    pub fn boot(settings: NodeSettings, io: NodeIo) -> Result<Self, DaemonError> {
        let now = io.clock.now();
        io.log.info("daemon", format!("BOOT pvdaq {}", env!("CARGO_PKG_VERSION")));
        let saved = load_state(&settings.state_dir);
        if let StateLoad::Corrupt(why) = &saved {
            io.log.warn("recover", format!("STATE_CORRUPT {why}"));
        }
        let decision = evaluate_recovery(&saved, now, &settings.window);
        io.log.info(
            "recover",
            format!("DECISION mode={} reason={}", decision.mode, decision.reason),
        );

        let spool = settings.state_dir.join(SPOOL_FILE);
        let backlog = SinkBacklog::with_spool(settings.backlog_limit, spool.clone()).map_err(io_at(&spool))?;
        if !backlog.is_empty() {
            io.log.info("sink", format!("SPOOL_RELOAD batches={}", backlog.len()));
        }
        let sync = match io.sync_target {
            Some(target) => {
                let manifest = settings.state_dir.join(MANIFEST_FILE);
                Some((ArchiveSync::open(manifest.clone()).map_err(io_at(&manifest))?, target))
            }
            None => None,
        };

        let mut node = Node {
            errors: ErrorCounter::new(settings.reinit_threshold),
            settings,
            clock: io.clock,
            bus: io.bus,
            log: io.log,
            buffers: io.buffers,
            acquiring: io.acquiring,
            sink: io.sink,
            sink_down: false,
            backlog,
            sync,
            archive: None,
            unwritten: VecDeque::new(),
            session_date: now.date(),
            counters: SessionCounters::default(),
            recording: false,
            stats: NodeStats::default(),
            decision: decision.clone(),
            start: Cursor::before(now),
            guard: ShutdownGuard::new(),
        };
        node.init_hardware("boot");
        node.log.info(
            "scheduler",
            "ASSEMBLY_ORDER rolling(thermal,ambient,wind) irradiance vane pm0 pm1 rain",
        );

        match decision.mode {
            RecoveryMode::Resume => {
                let point = decision.resume.expect("resume carries its point");
                node.resume(point, now)?;
            }
            RecoveryMode::FreshActive => {
                node.start_session(now, decision.reason.is_integrity_failure())?;
            }
            RecoveryMode::FreshIdle => {
                write_state(&node.settings.state_dir, &SessionState::idle(now))?;
                // Skip an end-of-day that coincides with boot.
                node.start = Cursor::past(&ScheduledEvent {
                    at: now,
                    event: Event::EndOfDay,
                });
            }
        }
        Ok(node)
    }

    pub fn decision(&self) -> &RecoveryDecision {
        &self.decision
    }

    /// Where the scheduler picks up after boot.
    pub fn start_cursor(&self) -> Cursor {
        self.start
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn backlog(&self) -> &SinkBacklog {
        &self.backlog
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn archive_path(&self) -> Option<&Path> {
        self.archive.as_ref().map(|a| a.path())
    }

    pub fn error_counter(&self) -> &ErrorCounter {
        &self.errors
    }

    pub fn log(&self) -> &OpsLog {
        &self.log
    }

    fn init_hardware(&mut self, why: &str) -> bool {
        let result = self.bus.lock().init();
        match result {
            Ok(()) => true,
            Err(e) => {
                self.log.error("hal", format!("INIT_FAIL ({why}): {e}"));
                false
            }
        }
    }

    fn first_frame_from(&self, now: NaiveDateTime) -> NaiveDateTime {
        let next = ceil_minute(now);
        match self.archive.as_ref().and_then(|a| a.last_timestamp()) {
            Some(last) => next.max(last + TimeDelta::minutes(1)),
            None => next,
        }
    }

    fn resume(&mut self, point: ResumePoint, now: NaiveDateTime) -> Result<(), DaemonError> {
        let path = point.state.csv_path.clone().expect("resume requires an archive");
        let archive = match DailyArchive::open(&path) {
            Ok(a) => a,
            Err(e) => {
                // The file changed between the integrity check and here.
                self.log.warn("recover", format!("RESUME_ABORT {e}"));
                return self.start_session(now, true);
            }
        };
        self.session_date = point.state.session_date;
        self.counters = point.state.counters;
        if let Some(rain) = point.last_rain_accum {
            self.counters.rain_day_accum = self.counters.rain_day_accum.max(rain);
        }
        // The monitors restarted from zero at power-on.
        self.counters.rebase_energy();
        self.archive = Some(archive);
        self.recording = true;
        self.clear_pending_rain();
        self.persist_state(now);
        self.acquiring.store(true, Ordering::SeqCst);
        let first = self.first_frame_from(now);
        self.start = Cursor::after_day_start(first);
        self.log.info(
            "session",
            format!(
                "RESUME csv={} rows={} next_frame={}",
                path.display(),
                point.rows_on_disk,
                first.format("%H:%M")
            ),
        );
        Ok(())
    }

    /// Opens the day's session at `at`: zeroed counters, monitor
    /// accumulators cleared, archive open, acquisition on.
    fn start_session(&mut self, at: NaiveDateTime, fresh_file: bool) -> Result<(), DaemonError> {
        self.session_date = at.date();
        self.counters = SessionCounters::default();
        {
            let mut hal = self.bus.lock();
            if !hal.is_ready() {
                drop(hal);
                self.init_hardware("day start");
                hal = self.bus.lock();
            }
            let addrs = hal.channel_map().power_monitor_addresses().to_vec();
            for addr in addrs {
                if let Err(e) = hal.reset_energy(addr) {
                    self.log.warn("hal", format!("ENERGY_RESET_FAIL {addr:#04x}: {e}"));
                }
            }
        }
        self.clear_pending_rain();
        let dir = &self.settings.archive_dir;
        let archive = if fresh_file {
            open_fresh_csv(dir, at.date())?
        } else {
            match open_daily_csv(dir, at.date()) {
                Ok(a) => a,
                Err(e) => {
                    self.log.warn("store", format!("ARCHIVE_UNUSABLE {e}; starting a new file"));
                    open_fresh_csv(dir, at.date())?
                }
            }
        };
        match self.log.rotate(at.date()) {
            Ok(Some(p)) => self.log.info("daemon", format!("LOG_ROTATED {}", p.display())),
            Ok(None) => {}
            Err(e) => self.log.warn("daemon", format!("LOG_ROTATE_FAIL {e}")),
        }
        self.log.info(
            "session",
            format!("DAY_START date={} csv={} rows={}", at.date(), archive.path().display(), archive.rows()),
        );
        self.archive = Some(archive);
        self.recording = true;
        self.persist_state(at);
        self.acquiring.store(true, Ordering::SeqCst);
        self.start = Cursor::after_day_start(self.first_frame_from(at));
        Ok(())
    }

    fn clear_pending_rain(&self) {
        let mut b = self.buffers.lock();
        b.pending_rain_tips = 0;
        b.failed_since_frame = false;
    }

    fn persist_state(&self, at: NaiveDateTime) {
        let state = SessionState {
            schema_version: SCHEMA_VERSION,
            session_date: self.session_date,
            csv_path: self.archive.as_ref().map(|a| a.path().to_path_buf()),
            rows_written: self.archive.as_ref().map_or(0, |a| a.rows()),
            counters: self.counters,
            recording: self.recording,
            last_write: at,
        };
        if let Err(e) = write_state(&self.settings.state_dir, &state) {
            self.log.error("store", format!("STATE_WRITE_FAIL {e}"));
        }
    }

    /// Writes queued frames in order; a failure leaves the rest queued for
    /// the next frame.
    fn flush_archive(&mut self) {
        let Some(archive) = self.archive.as_mut() else {
            return;
        };
        while let Some(frame) = self.unwritten.front() {
            match archive.append_frame(frame) {
                Ok(_) => {
                    self.unwritten.pop_front();
                }
                Err(ArchiveError::OutOfOrder { last, got }) => {
                    self.log.error("store", format!("ROW_DROPPED {got} is not after {last}"));
                    self.unwritten.pop_front();
                }
                Err(e) => {
                    self.log.error(
                        "store",
                        format!("CSV_WRITE_FAIL {e}; {} row(s) held", self.unwritten.len()),
                    );
                    break;
                }
            }
        }
    }

    fn drain_sink(&mut self) {
        let report = self.backlog.push(self.sink.as_mut());
        match (&report.error, self.sink_down) {
            (Some(e), false) => {
                self.sink_down = true;
                self.log.warn("sink", format!("SINK_DEFER pending={} {e}", report.remaining));
            }
            (None, true) => {
                self.sink_down = false;
                self.log.info("sink", format!("SINK_DRAINED delivered={}", report.delivered));
            }
            _ => {}
        }
        if let Err(e) = self.backlog.persist() {
            self.log.error("sink", format!("SPOOL_WRITE_FAIL {e}"));
        }
    }

    fn sync_archives(&mut self) {
        let Some((sync, target)) = self.sync.as_mut() else {
            return;
        };
        let report = sync.sync_archives(&self.settings.archive_dir, target.as_mut());
        if !report.transferred.is_empty() {
            self.log.info("sync", format!("SYNC files={}", report.transferred.join(",")));
        }
        if let Some(e) = report.error {
            self.log.warn("sync", format!("SYNC_DEFER {e}"));
        }
    }

    fn on_frame(&mut self, at: NaiveDateTime, health: bool) {
        if !self.recording {
            return;
        }
        if self.clock.now() - at > LATE_FRAME_LIMIT {
            self.stats.late_frames_skipped += 1;
            self.log.warn("scheduler", format!("FRAME_LATE ts={} skipped", at.format("%H:%M")));
            return;
        }
        let assembled = {
            let mut hal = self.bus.lock();
            assemble_minute_frame(at, &mut hal, &self.buffers, &self.settings.calibration, &mut self.counters)
        };
        let frame = assembled.frame;
        let flags = frame.flags();
        self.stats.frames += 1;
        for f in &flags {
            *self.stats.flags.entry(f.column()).or_default() += 1;
        }

        self.unwritten.push_back(frame.clone());
        self.flush_archive();
        self.persist_state(at);

        let lines = encode_line_protocol(&frame, self.settings.utc_offset);
        if !lines.is_empty() {
            let batch = Batch {
                frame_time: at,
                lines: lines.join("\n"),
            };
            if let Some(lost) = self.backlog.enqueue(batch) {
                self.log.warn("sink", format!("BACKLOG_DROP frame={}", lost.frame_time));
            }
        }
        self.drain_sink();

        let flag_list = if flags.is_empty() {
            "-".to_string()
        } else {
            flags.iter().map(|f| f.column()).collect::<Vec<_>>().join(",")
        };
        self.log.info(
            "scheduler",
            format!(
                "FRAME ts={} valid={}/{} flags={flag_list}",
                at.format("%Y-%m-%dT%H:%M:%S"),
                frame.valid_count(),
                crate::acquire::FIELD_COUNT
            ),
        );

        let action = self.errors.record_cycle_result(assembled.cycle_ok);
        if !assembled.cycle_ok {
            let why = if assembled.failures.is_empty() {
                "sampler read failure".to_string()
            } else {
                assembled.failures.join("; ")
            };
            let n = match action {
                CycleAction::Reinitialize => self.errors.threshold,
                CycleAction::Continue => self.errors.consecutive_failures,
            };
            self.log
                .warn("scheduler", format!("CYCLE_FAIL {n}/{} {why}", self.errors.threshold));
        }
        if action == CycleAction::Reinitialize {
            self.stats.reinits += 1;
            self.log.warn(
                "recover",
                format!("REINIT after {} consecutive failed cycles", self.errors.threshold),
            );
            if self.init_hardware("reinit") {
                self.counters.rebase_energy();
                self.log.info("recover", "REINIT_OK");
            }
        }

        if health {
            self.run_health_check();
            self.sync_archives();
        }
    }

    fn run_health_check(&mut self) {
        let report = health_check(HealthInputs {
            archive: self.archive.as_ref().map(|a| a.path()),
            rows_in_session: self.archive.as_ref().map_or(0, |a| a.rows()),
            backlog_pending: self.backlog.len(),
            backlog_high_water: self.backlog.high_water(),
            backlog_limit: self.settings.backlog_limit,
            counter: &self.errors,
        });
        self.stats.health_reports += 1;
        if report.all_green() {
            self.log.info("health", format!("HEALTH {report}"));
        } else {
            self.stats.degraded_health_reports += 1;
            self.log.warn("health", format!("HEALTH {report}"));
        }
    }

    /// End-of-day processing, shared by the 18:00 event and shutdown. The
    /// session stays marked as recording only when a shutdown interrupts it
    /// inside the window, so a restart can resume it.
    pub fn end_session(&mut self, cause: SessionEnd) {
        let now = self.clock.now();
        self.acquiring.store(false, Ordering::SeqCst);
        self.flush_archive();
        if !self.unwritten.is_empty() {
            self.log.error(
                "store",
                format!("CSV_ROWS_LOST {} frame(s) never reached the archive", self.unwritten.len()),
            );
            self.unwritten.clear();
        }
        let was_recording = self.recording;
        self.recording = cause == SessionEnd::Shutdown && was_recording && self.settings.window.contains(now);
        self.persist_state(now);
        self.drain_sink();
        self.sync_archives();
        let rows = self.archive.as_ref().map_or(0, |a| a.rows());
        let event = match cause {
            SessionEnd::EndOfDay => "EOD",
            SessionEnd::Shutdown => "SESSION_CLOSE",
        };
        self.log.info(
            "session",
            format!("{event} rows={rows} recording={} backlog={}", self.recording, self.backlog.len()),
        );
    }

    /// Clean shutdown. Only the first call does anything.
    pub fn shutdown(&mut self) {
        if !self.guard.begin() {
            return;
        }
        self.log.info("daemon", "SHUTDOWN begin");
        self.end_session(SessionEnd::Shutdown);
        self.bus.lock().release();
        if let Err(e) = self.backlog.persist() {
            self.log.error("sink", format!("SPOOL_WRITE_FAIL {e}"));
        }
        self.archive = None;
        self.log.info("daemon", "SHUTDOWN complete");
    }
}

impl ScheduleHandler for Node {
    fn on_event(&mut self, ev: &ScheduledEvent) {
        match ev.event {
            Event::DayStart => {
                if let Err(e) = self.start_session(ev.at, false) {
                    self.log.error("session", format!("DAY_START_FAIL {e}"));
                }
            }
            Event::Frame { health } => self.on_frame(ev.at, health),
            Event::EndOfDay => self.end_session(SessionEnd::EndOfDay),
        }
    }
}

/// Runs the sampler and scheduler on their own threads until `stop` is
/// raised, then shuts the node down.
pub fn run_threaded(mut node: Node, sampler: FastSampler, stop: Arc<AtomicBool>) -> NodeStats {
    let clock = node.clock.clone();
    let buffers = node.buffers.clone();
    let scheduler = Scheduler::new(node.settings.window);
    let cursor = node.start_cursor();
    let sampler_stop = stop.clone();
    let sampler_clock = clock.clone();
    let handle = thread::Builder::new()
        .name("sampler".into())
        .spawn(move || run_fast_sampler(sampler, sampler_clock, &sampler_stop))
        .expect("spawn sampler thread");
    run_scheduler(clock, scheduler, cursor, &mut node, &buffers, &stop);
    stop.store(true, Ordering::SeqCst);
    if handle.join().is_err() {
        node.log.error("daemon", "sampler thread panicked");
    }
    node.shutdown();
    node.stats.clone()
}
