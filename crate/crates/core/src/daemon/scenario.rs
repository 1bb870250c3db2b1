//! Accelerated single-day replay on the simulated backend.
//!
//! One thread interleaves the sampler ticks and scheduler events in time
//! order on a [`SimClock`]. At equal timestamps the order is: power cycle,
//! day start / end of day, sampler tick, frame. A power cycle drops the node
//! without shutdown, advances the clock past the outage and boots a new node
//! against the same directories, so recovery runs exactly as after a real
//! power loss.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, TimeDelta};
use serde::Serialize;

use super::{DaemonError, Node, NodeIo, NodeSettings, NodeStats};
use crate::acquire::{Cursor, Event, FastSampler, Field, OperatingWindow, ScheduleHandler, Scheduler, SharedBuffers};
use crate::clock::{ceil_second, Clock, SimClock};
use crate::config::RunConfig;
use crate::hal::channel_map::{Signal, THERMISTOR_COUNT};
use crate::hal::fault::{FaultEntry, FaultScript, FaultTarget};
use crate::hal::sim::{SimBackend, SimWorld};
use crate::hal::{Bus, Hal};
use crate::ops_log::{read_entries, Level, OpsLog, LOG_FILE};
use crate::recover::{RecoveryMode, RecoveryReason};
use crate::store::csv::{list_archives, read_archive};
use crate::store::line_protocol::decode_line_protocol;
use crate::store::sink::{FileSink, OutageSink};
use crate::store::sync::{DirectoryTarget, OutageTarget};

/// A named, built-in fault script with its simulated time span.
#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub name: &'static str,
    pub summary: &'static str,
    pub start: (u32, u32),
    pub end: (u32, u32),
    /// Fault script text; times are on the simulated date.
    pub script: &'static str,
}

pub const SCENARIOS: &[Scenario] = &[
    Scenario {
        name: "clean-day",
        summary: "full window with no faults",
        start: (5, 0),
        end: (18, 0),
        script: "",
    },
    Scenario {
        name: "power-cycle-midday",
        summary: "power lost at 12:00:30 for 10 min; expect RESUME",
        start: (5, 0),
        end: (18, 0),
        script: "[[fault]]\nat = \"12:00:30\"\nkind = \"power_cycle\"\ndown_s = 600\n",
    },
    Scenario {
        name: "power-cycle-early",
        summary: "boot at 03:00, power lost at 04:00 for 30 min; expect FRESH_IDLE",
        start: (3, 0),
        end: (18, 0),
        script: "[[fault]]\nat = \"04:00:00\"\nkind = \"power_cycle\"\ndown_s = 1800\n",
    },
    Scenario {
        name: "power-cycle-late",
        summary: "power lost at 18:30 for 30 min, run to 19:30; expect FRESH_IDLE",
        start: (5, 0),
        end: (19, 30),
        script: "[[fault]]\nat = \"18:30:00\"\nkind = \"power_cycle\"\ndown_s = 1800\n",
    },
    Scenario {
        name: "net-outage",
        summary: "sink and remote unreachable 10:00-10:45",
        start: (5, 0),
        end: (18, 0),
        script: "[[fault]]\nat = \"10:00:00\"\nkind = \"net_outage\"\nduration_s = 2700\n",
    },
    Scenario {
        name: "sensor-fail",
        summary: "T11 dead 12:00-12:10, ambient sensor dead 14:00-14:05",
        start: (5, 0),
        end: (18, 0),
        script: "[[fault]]\nat = \"12:00:00\"\nkind = \"sensor_fail\"\ntarget = \"T11\"\nduration_s = 600\n\n\
                 [[fault]]\nat = \"14:00:00\"\nkind = \"sensor_fail\"\ntarget = \"DHT\"\nduration_s = 300\n",
    },
];

/// Name accepted by `simulate` that replays `[sim] fault_script` over the
/// configured window.
pub const CUSTOM_SCENARIO: &str = "custom";

pub fn find_scenario(name: &str) -> Option<&'static Scenario> {
    SCENARIOS.iter().find(|s| s.name == name)
}

pub fn scenario_names() -> Vec<&'static str> {
    SCENARIOS.iter().map(|s| s.name).chain([CUSTOM_SCENARIO]).collect()
}

/// Everything needed to replay one day.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub name: String,
    /// Paths must already point into the output directory.
    pub config: RunConfig,
    pub date: NaiveDate,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub script: FaultScript,
    /// Upper bound on simulated seconds per wall second; `None` runs flat out.
    pub speedup: Option<f64>,
    pub remote_dir: PathBuf,
}

impl SimulationSetup {
    pub fn builtin(scenario: &Scenario, config: RunConfig, out: &Path) -> Result<Self, DaemonError> {
        let date = config.sim.date;
        let script = FaultScript::parse(scenario.script, date)
            .map_err(|e| DaemonError::Setup(format!("scenario {}: {e}", scenario.name)))?;
        let hm = |(h, m): (u32, u32)| date.and_time(NaiveTime::from_hms_opt(h, m, 0).unwrap());
        Ok(Self::new(scenario.name, config, out, hm(scenario.start), hm(scenario.end), script))
    }

    /// `[sim] fault_script` over the configured window.
    pub fn custom(config: RunConfig, out: &Path) -> Result<Self, DaemonError> {
        let date = config.sim.date;
        let path = config
            .sim
            .fault_script
            .clone()
            .ok_or_else(|| DaemonError::Setup("scenario `custom` needs [sim] fault_script".into()))?;
        let script = FaultScript::load(&path, date).map_err(|e| DaemonError::Setup(format!("{}: {e}", path.display())))?;
        let w = config.window();
        Ok(Self::new(CUSTOM_SCENARIO, config, out, w.start_on(date), w.end_on(date), script))
    }

    fn new(
        name: &str,
        mut config: RunConfig,
        out: &Path,
        start: NaiveDateTime,
        end: NaiveDateTime,
        script: FaultScript,
    ) -> Self {
        config.paths.archive_dir = out.join("archive");
        config.paths.state_dir = out.join("state");
        config.paths.log_dir = out.join("logs");
        config.sink.kind = crate::config::SinkKind::File;
        config.sink.export_path = out.join(SINK_EXPORT);
        config.sync.target_dir = Some(out.join("remote"));
        Self {
            name: name.to_string(),
            date: start.date(),
            start,
            end,
            script,
            speedup: None,
            remote_dir: out.join("remote"),
            config,
        }
    }
}

pub const SINK_EXPORT: &str = "sink_export.lp";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub at: String,
    pub mode: RecoveryMode,
    pub reason: RecoveryReason,
}

/// Machine-readable result of one replay. Contains nothing wall-clock
/// dependent, so identical inputs give identical reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub date: NaiveDate,
    pub start: String,
    pub end: String,
    pub frames: u64,
    pub first_frame: Option<String>,
    pub last_frame: Option<String>,
    /// Spacing between consecutive archived rows, seconds -> count.
    pub frame_gaps_s: BTreeMap<i64, u64>,
    pub decisions: Vec<DecisionRecord>,
    pub reinits: u64,
    pub health_reports: u64,
    pub degraded_health_reports: u64,
    pub flags: BTreeMap<String, u64>,
    pub expected_flags: BTreeMap<String, u64>,
    pub flags_match_script: bool,
    pub csv_files: Vec<String>,
    pub csv_rows: u64,
    pub csv_duplicate_rows: u64,
    pub sink_lines: u64,
    pub sink_frames: u64,
    pub sink_duplicate_lines: u64,
    pub backlog_remaining: usize,
    pub backlog_high_water: usize,
    pub backlog_dropped: u64,
    pub remote_files: Vec<String>,
    pub log_errors: u64,
    pub log_warnings: u64,
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let decisions: Vec<_> = self.decisions.iter().map(|d| format!("{}@{} ({})", d.mode, d.at, d.reason)).collect();
        let hist = |m: &BTreeMap<String, u64>| {
            if m.is_empty() {
                "none".to_string()
            } else {
                m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
            }
        };
        writeln!(f, "scenario   {} (seed {}, {} {}..{})", self.scenario, self.seed, self.date, self.start, self.end)?;
        writeln!(
            f,
            "frames     {} ({} .. {})",
            self.frames,
            self.first_frame.as_deref().unwrap_or("-"),
            self.last_frame.as_deref().unwrap_or("-")
        )?;
        let gaps: Vec<_> = self.frame_gaps_s.iter().map(|(g, n)| format!("{g}s x{n}")).collect();
        writeln!(f, "spacing    {}", if gaps.is_empty() { "-".into() } else { gaps.join(", ") })?;
        writeln!(f, "decisions  {}", decisions.join(", "))?;
        writeln!(f, "reinits    {}", self.reinits)?;
        writeln!(f, "health     {} reports, {} degraded", self.health_reports, self.degraded_health_reports)?;
        writeln!(f, "flags      {}", hist(&self.flags))?;
        writeln!(
            f,
            "expected   {} ({})",
            hist(&self.expected_flags),
            if self.flags_match_script { "match" } else { "MISMATCH" }
        )?;
        writeln!(
            f,
            "csv        {} rows in {} ({} duplicate)",
            self.csv_rows,
            self.csv_files.join(", "),
            self.csv_duplicate_rows
        )?;
        writeln!(
            f,
            "sink       {} frames, {} lines ({} duplicate); backlog {} left, high water {}, {} dropped",
            self.sink_frames,
            self.sink_lines,
            self.sink_duplicate_lines,
            self.backlog_remaining,
            self.backlog_high_water,
            self.backlog_dropped
        )?;
        writeln!(f, "remote     {}", self.remote_files.join(", "))?;
        write!(f, "log        {} errors, {} warnings", self.log_errors, self.log_warnings)
    }
}

/// Fields a sensor fault on `target` leaves flagged.
pub fn fields_for_target(target: FaultTarget) -> Vec<Field> {
    match target {
        FaultTarget::Signal(Signal::Thermistor(i)) => vec![Field::Thermal(i)],
        FaultTarget::Signal(Signal::IrradianceMinus | Signal::IrradiancePlus) => vec![Field::Irradiance],
        FaultTarget::Signal(Signal::WindVane) => vec![Field::WindDir],
        FaultTarget::Dht => vec![Field::AmbientTemp, Field::Humidity],
        FaultTarget::PowerMonitor(p) => {
            let p = p as u8;
            vec![Field::Volts(p), Field::Amps(p), Field::Watts(p), Field::Joules(p)]
        }
        FaultTarget::SelectLines => (0..THERMISTOR_COUNT as u8)
            .map(Field::Thermal)
            .chain([Field::Irradiance])
            .collect(),
    }
}

/// Flag histogram the script implies: a frame at minute `M` is produced when
/// `M` is in the window and span and no power outage covers it; each field
/// of a sensor whose fault covers `M` is flagged in that frame.
pub fn expected_flags(
    script: &FaultScript,
    window: &OperatingWindow,
    start: NaiveDateTime,
    end: NaiveDateTime,
) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    let mut m = crate::clock::ceil_minute(start);
    while m <= end {
        let powered = !script.power_cycles().any(|e| e.covers(m));
        if window.contains(m) && powered {
            let fields: BTreeSet<Field> = script
                .sensor_faults()
                .filter(|(_, e)| e.covers(m))
                .flat_map(|(t, _)| fields_for_target(t))
                .collect();
            for f in fields {
                *out.entry(f.column()).or_default() += 1;
            }
        }
        m += TimeDelta::minutes(1);
    }
    out
}

struct Lifetime {
    node: Node,
    sampler: FastSampler,
    cursor: Cursor,
    next_tick: NaiveDateTime,
}

fn boot(setup: &SimulationSetup, clock: &Arc<SimClock>, world: &Arc<Mutex<SimWorld>>, log: &OpsLog) -> Result<Lifetime, DaemonError> {
    let cfg = &setup.config;
    let dyn_clock: Arc<dyn Clock> = clock.clone();
    let backend = SimBackend::new(world.clone(), dyn_clock.clone());
    let hal = Hal::new(Box::new(backend), dyn_clock.clone(), cfg.channel_map(), cfg.timing(), cfg.init_settings());
    let bus = Bus::new(hal);
    let buffers = SharedBuffers::new();
    let acquiring = Arc::new(AtomicBool::new(false));
    let sink = OutageSink::new(FileSink::new(cfg.sink.export_path.clone()), setup.script.clone(), dyn_clock.clone());
    let target = OutageTarget::new(DirectoryTarget::new(setup.remote_dir.clone()), setup.script.clone(), dyn_clock.clone());
    let sampler = FastSampler::new(bus.clone(), cfg.calibration.clone(), buffers.clone(), acquiring.clone(), log.clone());
    let node = Node::boot(
        NodeSettings::from_config(cfg),
        NodeIo {
            clock: dyn_clock,
            bus,
            log: log.clone(),
            buffers,
            acquiring,
            sink: Box::new(sink),
            sync_target: Some(Box::new(target)),
        },
    )?;
    Ok(Lifetime {
        cursor: node.start_cursor(),
        next_tick: ceil_second(clock.now()),
        node,
        sampler,
    })
}

enum Step {
    PowerCycle(FaultEntry),
    Event(crate::acquire::ScheduledEvent),
    Tick(NaiveDateTime),
}

/// Replays the day and writes the report file. Returns the report.
pub fn run_simulation(setup: &SimulationSetup) -> Result<ScenarioReport, DaemonError> {
    let cfg = &setup.config;
    for dir in [&cfg.paths.archive_dir, &cfg.paths.state_dir, &cfg.paths.log_dir, &setup.remote_dir] {
        fs::create_dir_all(dir).map_err(super::io_at(dir))?;
    }
    let clock = Arc::new(SimClock::new(setup.start));
    let world = SimWorld::new(
        cfg.sim.environment.clone(),
        cfg.calibration.clone(),
        cfg.channel_map(),
        cfg.sim.seed,
        setup.script.clone(),
        setup.start,
    )
    .shared();
    let log = OpsLog::open(&cfg.paths.log_dir, clock.clone()).map_err(super::io_at(&cfg.paths.log_dir))?;
    let scheduler = Scheduler::new(cfg.window());
    let mut cycles: Vec<FaultEntry> = setup.script.power_cycles().copied().collect();
    cycles.reverse();

    let wall = Instant::now();
    let mut decisions = Vec::new();
    let mut totals = NodeStats::default();
    let mut high_water = 0;
    let mut dropped = 0;

    let mut life = boot(setup, &clock, &world, &log)?;
    decisions.push(record(clock.now(), &life.node));
    loop {
        let ev = scheduler.next_after(life.cursor);
        let mut step = Step::Tick(life.next_tick);
        let mut step_at = life.next_tick;
        let event_rank = if matches!(ev.event, Event::Frame { .. }) { 2 } else { 0 };
        if (ev.at, event_rank) < (step_at, 1) {
            step = Step::Event(ev);
            step_at = ev.at;
        }
        if let Some(pc) = cycles.last() {
            if pc.at <= step_at {
                step = Step::PowerCycle(*pc);
                step_at = pc.at;
            }
        }
        if step_at > setup.end {
            break;
        }
        pace(setup, wall, step_at);
        match step {
            Step::PowerCycle(entry) => {
                cycles.pop();
                clock.advance_to(entry.at);
                log.warn("sim", format!("POWER_LOSS for {}s", entry.until().signed_duration_since(entry.at).num_seconds()));
                totals.merge(life.node.stats());
                high_water = high_water.max(life.node.backlog().high_water());
                dropped += life.node.backlog().dropped();
                // No shutdown: the node just stops.
                drop(life);
                clock.advance_to(entry.until());
                life = boot(setup, &clock, &world, &log)?;
                decisions.push(record(clock.now(), &life.node));
            }
            Step::Event(ev) => {
                clock.advance_to(ev.at);
                life.node.on_event(&ev);
                life.cursor = Cursor::past(&ev);
            }
            Step::Tick(t) => {
                clock.advance_to(t);
                life.sampler.tick(t);
                life.next_tick = ceil_second(clock.now()).max(t + TimeDelta::seconds(1));
            }
        }
    }
    clock.advance_to(setup.end);
    life.node.shutdown();
    totals.merge(life.node.stats());
    high_water = high_water.max(life.node.backlog().high_water());
    dropped += life.node.backlog().dropped();
    let remaining = life.node.backlog().len();
    drop(life);

    let report = build_report(setup, totals, decisions, remaining, high_water, dropped)?;
    let out = cfg.paths.archive_dir.parent().unwrap_or(Path::new(".")).join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&out, json + "\n").map_err(super::io_at(&out))?;
    Ok(report)
}

fn record(at: NaiveDateTime, node: &Node) -> DecisionRecord {
    DecisionRecord {
        at: at.format("%H:%M:%S").to_string(),
        mode: node.decision().mode,
        reason: node.decision().reason,
    }
}

fn pace(setup: &SimulationSetup, wall: Instant, sim_at: NaiveDateTime) {
    let Some(speedup) = setup.speedup.filter(|s| *s > 0.0) else {
        return;
    };
    let sim_elapsed = (sim_at - setup.start).to_std().unwrap_or_default();
    let target = sim_elapsed.div_f64(speedup);
    let spent = wall.elapsed();
    if target > spent {
        std::thread::sleep((target - spent).min(Duration::from_secs(1)));
    }
}

fn build_report(
    setup: &SimulationSetup,
    totals: NodeStats,
    decisions: Vec<DecisionRecord>,
    backlog_remaining: usize,
    backlog_high_water: usize,
    backlog_dropped: u64,
) -> Result<ScenarioReport, DaemonError> {
    let cfg = &setup.config;
    let names = |dir: &Path| -> Result<Vec<String>, DaemonError> {
        Ok(list_archives(dir)
            .map_err(super::io_at(dir))?
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect())
    };
    let csv_files = names(&cfg.paths.archive_dir)?;
    let mut stamps = Vec::new();
    for name in &csv_files {
        let scan = read_archive(&cfg.paths.archive_dir.join(name))?;
        stamps.extend(scan.rows.iter().map(|r| r.timestamp));
    }
    stamps.sort();
    let unique: BTreeSet<_> = stamps.iter().copied().collect();
    let mut gaps = BTreeMap::new();
    for w in stamps.windows(2) {
        *gaps.entry((w[1] - w[0]).num_seconds()).or_default() += 1;
    }

    let (sink_lines, sink_frames, sink_dups) = match fs::read_to_string(&cfg.sink.export_path) {
        Ok(text) => {
            let offset = cfg.utc_offset().expect("validated offset");
            let (frames, dups) = decode_line_protocol(&text, offset).map_err(|e| {
                DaemonError::Setup(format!("{}: {e}", cfg.sink.export_path.display()))
            })?;
            let lines = text.lines().filter(|l| !l.trim().is_empty()).count() as u64;
            (lines, frames.len() as u64, dups.len() as u64)
        }
        Err(_) => (0, 0, 0),
    };

    let (mut errors, mut warnings) = (0, 0);
    if let Ok(entries) = read_entries(&cfg.paths.log_dir.join(LOG_FILE)) {
        for e in entries {
            match e.level {
                Level::Error => errors += 1,
                Level::Warn => warnings += 1,
                Level::Info => {}
            }
        }
    }

    let expected = expected_flags(&setup.script, &cfg.window(), setup.start, setup.end);
    let fmt_ts = |t: &NaiveDateTime| t.format("%H:%M").to_string();
    Ok(ScenarioReport {
        scenario: setup.name.clone(),
        seed: cfg.sim.seed,
        date: setup.date,
        start: setup.start.format("%H:%M").to_string(),
        end: setup.end.format("%H:%M").to_string(),
        frames: totals.frames,
        first_frame: stamps.first().map(fmt_ts),
        last_frame: stamps.last().map(fmt_ts),
        frame_gaps_s: gaps,
        decisions,
        reinits: totals.reinits,
        health_reports: totals.health_reports,
        degraded_health_reports: totals.degraded_health_reports,
        flags_match_script: totals.flags == expected,
        flags: totals.flags,
        expected_flags: expected,
        csv_files,
        csv_rows: stamps.len() as u64,
        csv_duplicate_rows: (stamps.len() - unique.len()) as u64,
        sink_lines,
        sink_frames,
        sink_duplicate_lines: sink_dups,
        backlog_remaining,
        backlog_high_water,
        backlog_dropped,
        remote_files: names(&setup.remote_dir)?,
        log_errors: errors,
        log_warnings: warnings,
    })
}
