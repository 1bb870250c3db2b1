use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use chrono::{NaiveDateTime, Timelike};

use super::window::RollingWindow;
use super::ReadError;
use crate::clock::{ceil_second, Clock};
use crate::convert::{thermistor_code_to_celsius, Calibration};
use crate::hal::channel_map::THERMISTOR_COUNT;
use crate::hal::{Bus, Hal, HalError};
use crate::ops_log::OpsLog;

pub const AVERAGING_HORIZON: Duration = Duration::from_secs(60);
pub const SCAN_PERIOD_S: u32 = 5;
/// Samples a 5 s stream holds over the horizon.
pub const SLOW_CAPACITY: usize = 12;
/// One anemometer sample per second over the horizon.
pub const WIND_CAPACITY: usize = 60;

/// A sampled quantity together with the outcome of its most recent read.
#[derive(Debug, Clone)]
pub struct Stream {
    window: RollingWindow,
    last_ok: bool,
}

impl Stream {
    pub fn new(capacity: usize) -> Self {
        Self {
            window: RollingWindow::new(capacity, AVERAGING_HORIZON),
            last_ok: false,
        }
    }

    pub fn record(&mut self, at: NaiveDateTime, value: Option<f64>) {
        self.last_ok = value.is_some();
        if let Some(v) = value {
            self.window.push(at, v);
        }
    }

    /// Rolling mean as of `now`, or `None` when the latest read failed or
    /// nothing valid remains in the horizon.
    pub fn value_at(&self, now: NaiveDateTime) -> Option<f64> {
        if !self.last_ok {
            return None;
        }
        self.window.average_at(now).ok()
    }

    pub fn window(&self) -> &RollingWindow {
        &self.window
    }
}

/// Buffers shared between the sampler and the scheduler.
#[derive(Debug, Clone)]
pub struct SampleBuffers {
    pub thermal: Vec<Stream>,
    pub ambient_temp: Stream,
    pub humidity: Stream,
    /// Anemometer pulses per 1 s poll.
    pub wind: RollingWindow,
    /// Rain tips not yet claimed by a frame.
    pub pending_rain_tips: u64,
    /// Any sensor read failed since the scheduler last drained this flag.
    pub failed_since_frame: bool,
    /// Time of the last completed sampler tick.
    pub progress: Option<NaiveDateTime>,
}

impl Default for SampleBuffers {
    fn default() -> Self {
        Self {
            thermal: (0..THERMISTOR_COUNT).map(|_| Stream::new(SLOW_CAPACITY)).collect(),
            ambient_temp: Stream::new(SLOW_CAPACITY),
            humidity: Stream::new(SLOW_CAPACITY),
            wind: RollingWindow::new(WIND_CAPACITY, AVERAGING_HORIZON),
            pending_rain_tips: 0,
            failed_since_frame: false,
            progress: None,
        }
    }
}

#[derive(Clone, Default)]
pub struct SharedBuffers(Arc<Mutex<SampleBuffers>>);

impl SharedBuffers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lock(&self) -> MutexGuard<'_, SampleBuffers> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Result of one full thermistor scan.
#[derive(Debug, Clone)]
pub struct ThermalScan {
    pub values: [Option<f64>; THERMISTOR_COUNT],
    pub failures: Vec<(u8, ReadError)>,
}

/// Steps through the select codes, reading every mux output that carries a
/// thermistor at each code. Each code waits the settling time once; each read
/// waits its own conversion window.
pub fn scan_thermistors(hal: &mut Hal, cal: &Calibration) -> ThermalScan {
    let mut scan = ThermalScan {
        values: [None; THERMISTOR_COUNT],
        failures: Vec::new(),
    };
    let settle = hal.timing().mux_settle;
    for (code, reads) in hal.channel_map().thermistor_scan_plan() {
        if let Err(e) = hal.select_mux_channel(code) {
            for (_, t) in reads {
                scan.failures.push((t, e.clone().into()));
            }
            continue;
        }
        hal.clock().sleep(settle);
        for (input, t) in reads {
            let result = hal
                .read_adc(input)
                .map_err(ReadError::from)
                .and_then(|c| {
                    thermistor_code_to_celsius(c, cal.adc_full_scale, &cal.thermistor)
                        .map_err(ReadError::from)
                });
            match result {
                Ok(v) => scan.values[t as usize] = Some(v),
                Err(e) => scan.failures.push((t, e)),
            }
        }
    }
    scan
}

/// The 1 Hz task: pulse polling always, thermistor scan and ambient read
/// every 5 s while acquisition is active.
pub struct FastSampler {
    bus: Bus,
    cal: Calibration,
    buffers: SharedBuffers,
    acquiring: Arc<AtomicBool>,
    log: OpsLog,
    was_acquiring: bool,
}

impl FastSampler {
    pub fn new(
        bus: Bus,
        cal: Calibration,
        buffers: SharedBuffers,
        acquiring: Arc<AtomicBool>,
        log: OpsLog,
    ) -> Self {
        Self {
            bus,
            cal,
            buffers,
            acquiring,
            log,
            was_acquiring: false,
        }
    }

    /// One tick at the whole second `at`. A scan also runs on the first
    /// tick after acquisition is switched on, so a fresh session has data
    /// for its first frame.
    pub fn tick(&mut self, at: NaiveDateTime) {
        let acquiring = self.acquiring.load(Ordering::SeqCst);
        let scan_due = acquiring && (!self.was_acquiring || at.second().is_multiple_of(SCAN_PERIOD_S));
        self.was_acquiring = acquiring;

        let mut hal = self.bus.lock();
        let pulses = hal.poll_pulse_counters();
        let (thermal, ambient) = if scan_due && hal.is_ready() {
            let scan = scan_thermistors(&mut hal, &self.cal);
            let ambient = match hal.read_ambient() {
                // Too soon after the previous query; keep the earlier sample.
                Err(HalError::Precondition(_)) => None,
                other => Some(other),
            };
            (Some(scan), ambient)
        } else {
            (None, None)
        };
        drop(hal);

        let mut failed = Vec::new();
        let mut b = self.buffers.lock();
        b.wind.push(at, pulses.anemometer_pulses as f64);
        b.pending_rain_tips += pulses.rain_tips as u64;
        if let Some(scan) = thermal {
            for (i, v) in scan.values.iter().enumerate() {
                b.thermal[i].record(at, *v);
            }
            failed.extend(scan.failures.iter().map(|(t, e)| format!("T{t}: {e}")));
        }
        match ambient {
            Some(Ok(a)) => {
                b.ambient_temp.record(at, Some(a.temperature));
                b.humidity.record(at, Some(a.humidity));
            }
            Some(Err(e)) => {
                b.ambient_temp.record(at, None);
                b.humidity.record(at, None);
                failed.push(format!("DHT: {e}"));
            }
            None => {}
        }
        if !failed.is_empty() {
            b.failed_since_frame = true;
        }
        b.progress = Some(at);
        drop(b);

        for f in failed {
            self.log.error("sampler", format!("READ_FAIL {f}"));
        }
    }
}

/// Ticks on whole seconds of `clock` until `stop` is raised.
pub fn run_fast_sampler(mut sampler: FastSampler, clock: Arc<dyn Clock>, stop: &AtomicBool) {
    let mut next = ceil_second(clock.now());
    while !stop.load(Ordering::SeqCst) {
        let now = clock.now();
        if now < next {
            // Short naps keep stop latency well under one tick.
            let remaining = (next - now).to_std().unwrap_or_default();
            clock.sleep(remaining.min(Duration::from_millis(100)));
            continue;
        }
        sampler.tick(next);
        next = ceil_second(clock.now()).max(next + chrono::TimeDelta::seconds(1));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::hal::fault::{FaultEntry, FaultKind, FaultScript, FaultTarget};
    use crate::hal::sim::{EnvironmentParams, SimBackend, SimWorld};
    use crate::hal::{CallLog, ChannelMap, InitSettings, Signal, Timing};
    use chrono::{NaiveDate, TimeDelta};

    struct Rig {
        clock: Arc<SimClock>,
        world: Arc<Mutex<SimWorld>>,
        bus: Bus,
        buffers: SharedBuffers,
        sampler: FastSampler,
        calls: CallLog,
        _dir: tempfile::TempDir,
    }

    fn at(h: u32, m: u32, s: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2025, 3, 10).unwrap().and_hms_opt(h, m, s).unwrap()
    }

    fn rig(start: NaiveDateTime, script: FaultScript) -> Rig {
        let clock = Arc::new(SimClock::new(start));
        let world = SimWorld::new(
            EnvironmentParams::default(),
            Calibration::default(),
            ChannelMap::default(),
            1,
            script,
            start,
        )
        .shared();
        let backend = SimBackend::new(world.clone(), clock.clone());
        let calls = CallLog::new();
        let mut hal = Hal::new(
            Box::new(backend),
            clock.clone(),
            ChannelMap::default(),
            Timing::default(),
            InitSettings::default(),
        )
        .with_call_log(calls.clone());
        hal.init().unwrap();
        let bus = Bus::new(hal);
        let buffers = SharedBuffers::new();
        let dir = tempfile::tempdir().unwrap();
        let log = OpsLog::open(dir.path(), clock.clone()).unwrap();
        let acquiring = Arc::new(AtomicBool::new(true));
        let sampler = FastSampler::new(bus.clone(), Calibration::default(), buffers.clone(), acquiring, log);
        Rig {
            clock,
            world,
            bus,
            buffers,
            sampler,
            calls,
            _dir: dir,
        }
    }

    fn run_for(r: &mut Rig, seconds: i64) {
        let start = ceil_second(r.clock.now());
        for s in 0..seconds {
            let t = start + TimeDelta::seconds(s);
            r.clock.advance_to(t);
            r.sampler.tick(t);
        }
    }

    #[test]
    fn sixty_seconds_fill_twelve_samples() {
        let mut r = rig(at(12, 0, 0), FaultScript::empty());
        run_for(&mut r, 60);
        let b = r.buffers.lock();
        for s in &b.thermal {
            assert_eq!(s.window().len(), 12);
        }
        assert_eq!(b.wind.len(), 60);
    }

    #[test]
    fn constant_temperature_averages_exactly() {
        let mut r = rig(at(12, 0, 0), FaultScript::empty());
        r.world.lock().unwrap().overrides_mut().thermistor_celsius = Some(30.0);
        run_for(&mut r, 60);
        let b = r.buffers.lock();
        let first = b.thermal[0].window().samples().next().unwrap().1;
        assert!((first - 30.0).abs() < 0.01, "{first}");
        for s in &b.thermal {
            let avg = s.value_at(at(12, 0, 59)).unwrap();
            assert!((avg - first).abs() < 0.01);
            assert!(s.window().samples().all(|(_, v)| v == first));
        }
    }

    #[test]
    fn scan_fits_in_budget_and_selects_before_reads() {
        let r = rig(at(12, 0, 0), FaultScript::empty());
        r.calls.clear();
        let t0 = r.clock.now();
        let scan = scan_thermistors(&mut r.bus.lock(), &Calibration::default());
        let elapsed = r.clock.now() - t0;
        assert!(scan.failures.is_empty());
        assert!(elapsed < TimeDelta::seconds(5));
        assert_eq!(elapsed, TimeDelta::milliseconds(8 * 5 + 20 * 16));
        let mut selected = None;
        let mut reads = 0;
        for rec in r.calls.records() {
            match rec.call {
                crate::hal::Call::Select(c) => selected = Some(c),
                crate::hal::Call::ReadAdc(_) => {
                    assert!(selected.is_some());
                    reads += 1;
                }
                _ => {}
            }
        }
        assert_eq!(reads, 20);
    }

    #[test]
    fn single_channel_fault_flags_only_that_channel() {
        let script = FaultScript::new(vec![FaultEntry {
            at: at(12, 0, 0),
            kind: FaultKind::SensorFail {
                target: FaultTarget::Signal(Signal::Thermistor(11)),
                duration: Duration::from_secs(600),
            },
        }])
        .unwrap();
        let r = rig(at(12, 0, 1), script);
        let scan = scan_thermistors(&mut r.bus.lock(), &Calibration::default());
        assert_eq!(scan.failures.len(), 1);
        assert_eq!(scan.failures[0].0, 11);
        assert_eq!(scan.values.iter().filter(|v| v.is_some()).count(), 19);
    }

    #[test]
    fn idle_sampler_only_polls_pulses() {
        let mut r = rig(at(3, 0, 0), FaultScript::empty());
        r.sampler.acquiring.store(false, Ordering::SeqCst);
        r.calls.clear();
        run_for(&mut r, 10);
        assert!(r
            .calls
            .records()
            .iter()
            .all(|c| c.call == crate::hal::Call::PollPulses));
        assert!(r.buffers.lock().thermal[0].window().is_empty());
    }

    #[test]
    fn stop_flag_ends_loop() {
        let r = rig(at(12, 0, 0), FaultScript::empty());
        let stop = AtomicBool::new(true);
        let before = r.clock.now();
        run_fast_sampler(r.sampler, r.clock.clone(), &stop);
        assert_eq!(r.clock.now(), before);
    }
}
