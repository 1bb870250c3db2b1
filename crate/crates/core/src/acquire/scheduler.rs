use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};

use super::frame::{Field, MeasurementFrame, PANEL_COUNT};
use super::sampler::SharedBuffers;
use super::{ReadError, SessionCounters};
use crate::clock::{ceil_minute, Clock};
use crate::convert::{
    adc_code_to_voltage, differential_to_irradiance, power_registers_to_si, pulses_to_wind_speed,
    tips_to_rain_depth, vane_voltage_to_direction, Calibration,
};
use crate::hal::{AdcSource, Hal, Signal};

/// Daily acquisition window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatingWindow {
    pub start: NaiveTime,
    pub end: NaiveTime,
}

impl Default for OperatingWindow {
    fn default() -> Self {
        Self {
            start: NaiveTime::from_hms_opt(5, 0, 0).unwrap(),
            end: NaiveTime::from_hms_opt(18, 0, 0).unwrap(),
        }
    }
}

impl OperatingWindow {
    pub fn contains(&self, t: NaiveDateTime) -> bool {
        let tod = t.time();
        self.start <= tod && tod < self.end
    }

    pub fn start_on(&self, date: NaiveDate) -> NaiveDateTime {
        date.and_time(self.start)
    }

    pub fn end_on(&self, date: NaiveDate) -> NaiveDateTime {
        date.and_time(self.end)
    }

    /// Minute frames produced in one full day.
    pub fn frames_per_day(&self) -> i64 {
        (self.end - self.start).num_minutes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    DayStart,
    Frame { health: bool },
    EndOfDay,
}

impl Event {
    /// Order among events sharing a timestamp.
    fn rank(self) -> i8 {
        match self {
            Event::DayStart => 0,
            Event::Frame { .. } => 1,
            Event::EndOfDay => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledEvent {
    pub at: NaiveDateTime,
    pub event: Event,
}

/// Position in the timeline; the next event is strictly after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cursor {
    at: NaiveDateTime,
    rank: i8,
}

impl Cursor {
    /// Events at `t` itself are still ahead.
    pub fn before(t: NaiveDateTime) -> Self {
        Self { at: t, rank: -1 }
    }

    /// Day start at `t` is behind; a frame at `t` is still ahead.
    pub fn after_day_start(t: NaiveDateTime) -> Self {
        Self { at: t, rank: 0 }
    }

    pub fn past(ev: &ScheduledEvent) -> Self {
        Self {
            at: ev.at,
            rank: ev.event.rank(),
        }
    }
}

/// The daily timeline: day start, a frame every minute of the window with a
/// health check every fifth minute, and end of day at the window's close.
#[derive(Debug, Clone, Copy)]
pub struct Scheduler {
    pub window: OperatingWindow,
    pub health_every_min: u32,
}

impl Scheduler {
    pub fn new(window: OperatingWindow) -> Self {
        Self {
            window,
            health_every_min: 5,
        }
    }

    pub fn next_after(&self, cursor: Cursor) -> ScheduledEvent {
        let t = cursor.at;
        let mut best: Option<(Cursor, Event)> = None;
        let mut consider = |at: NaiveDateTime, event: Event| {
            let c = Cursor {
                at,
                rank: event.rank(),
            };
            if c > cursor && best.is_none_or(|(b, _)| c < b) {
                best = Some((c, event));
            }
        };
        for date in [t.date(), t.date().succ_opt().unwrap()] {
            let start = self.window.start_on(date);
            let end = self.window.end_on(date);
            consider(start, Event::DayStart);
            let mut m = ceil_minute(t).max(start);
            if m == t && cursor.rank >= (Event::Frame { health: false }).rank() {
                m += TimeDelta::minutes(1);
            }
            if m < end {
                let health = (m.hour() * 60 + m.minute()).is_multiple_of(self.health_every_min);
                consider(m, Event::Frame { health });
            }
            consider(end, Event::EndOfDay);
        }
        let (c, event) = best.expect("a later day always has events");
        ScheduledEvent { at: c.at, event }
    }
}

/// Irradiance from the two sensor taps, each read after its own settling
/// delay.
pub fn read_irradiance_pass(hal: &mut Hal, cal: &Calibration) -> Result<f64, ReadError> {
    let settle = hal.timing().irradiance_settle.max(hal.timing().mux_settle);
    let mut volts = [0.0; 2];
    for (i, signal) in [Signal::IrradianceMinus, Signal::IrradiancePlus].into_iter().enumerate() {
        let (mux, code) = hal
            .channel_map()
            .slot_of(signal)
            .ok_or_else(|| ReadError::Wiring(format!("{signal} has no mux slot")))?;
        let input = hal
            .channel_map()
            .input_for(AdcSource::Mux(mux))
            .ok_or_else(|| ReadError::Wiring(format!("{mux} is not wired")))?;
        hal.select_mux_channel(code)?;
        hal.clock().sleep(settle);
        volts[i] = adc_code_to_voltage(hal.read_adc(input)?, cal.adc_full_scale);
    }
    Ok(differential_to_irradiance(volts[1], volts[0], &cal.meteo))
}

fn read_vane(hal: &mut Hal, cal: &Calibration) -> Result<f64, ReadError> {
    let input = hal
        .channel_map()
        .input_for(AdcSource::WindVane)
        .ok_or_else(|| ReadError::Wiring("wind vane is not wired".into()))?;
    let v = adc_code_to_voltage(hal.read_adc(input)?, cal.adc_full_scale);
    Ok(vane_voltage_to_direction(v, &cal.meteo))
}

#[derive(Debug, Clone)]
pub struct AssembledFrame {
    pub frame: MeasurementFrame,
    /// Every read feeding this frame succeeded.
    pub cycle_ok: bool,
    pub failures: Vec<String>,
}

/// Builds the frame for minute `at`: rolling fields from the buffers, then
/// irradiance, vane and both power monitors read now, in that order.
pub fn assemble_minute_frame(
    at: NaiveDateTime,
    hal: &mut Hal,
    buffers: &SharedBuffers,
    cal: &Calibration,
    session: &mut SessionCounters,
) -> AssembledFrame {
    let mut frame = MeasurementFrame::empty(at);
    let mut failures = Vec::new();

    let (sampler_failed, rain_tips) = {
        let mut b = buffers.lock();
        for (i, s) in b.thermal.iter().enumerate() {
            frame.set(Field::Thermal(i as u8), s.value_at(at));
        }
        frame.set(Field::AmbientTemp, b.ambient_temp.value_at(at));
        frame.set(Field::Humidity, b.humidity.value_at(at));
        let (pulses, n) = b.wind.sum_at(at);
        if n > 0 {
            frame.set(
                Field::WindSpeed,
                pulses_to_wind_speed(pulses as u64, n as f64, &cal.meteo).ok(),
            );
        }
        let failed = std::mem::take(&mut b.failed_since_frame);
        (failed, std::mem::take(&mut b.pending_rain_tips))
    };

    match read_irradiance_pass(hal, cal) {
        Ok(g) => frame.set(Field::Irradiance, Some(g)),
        Err(e) => failures.push(format!("irradiance: {e}")),
    }
    match read_vane(hal, cal) {
        Ok(d) => frame.set(Field::WindDir, Some(d)),
        Err(e) => failures.push(format!("vane: {e}")),
    }
    let addresses = hal.channel_map().power_monitor_addresses().to_vec();
    for (p, addr) in addresses.iter().enumerate().take(PANEL_COUNT) {
        match hal.read_power_monitor(*addr) {
            Ok(raw) => {
                let mut si = power_registers_to_si(&raw, &cal.electrical);
                si.joules += session.energy_offsets[p];
                session.energy_last[p] = si.joules;
                frame.set_panel(p as u8, Some(si));
            }
            Err(e) => failures.push(format!("PM{p} {addr:#04x}: {e}")),
        }
    }

    let rain_minute = tips_to_rain_depth(rain_tips, &cal.meteo);
    session.rain_day_accum += rain_minute;
    frame.rain_minute = Some(rain_minute);
    frame.set(Field::Rain, Some(session.rain_day_accum));

    AssembledFrame {
        frame,
        cycle_ok: !sampler_failed && failures.is_empty(),
        failures,
    }
}

/// Work the scheduler drives at each timeline event.
pub trait ScheduleHandler {
    fn on_event(&mut self, event: &ScheduledEvent);
}

/// Real-time scheduler loop. Before each frame it waits (bounded) for the
/// sampler to have ticked through the frame's minute, so both the threaded
/// and the simulated executors see the same sample set.
pub fn run_scheduler(
    clock: Arc<dyn Clock>,
    scheduler: Scheduler,
    mut cursor: Cursor,
    handler: &mut dyn ScheduleHandler,
    buffers: &SharedBuffers,
    stop: &AtomicBool,
) {
    const NAP: Duration = Duration::from_millis(100);
    const SAMPLER_WAIT: TimeDelta = TimeDelta::seconds(3);
    while !stop.load(Ordering::SeqCst) {
        let ev = scheduler.next_after(cursor);
        let now = clock.now();
        if now < ev.at {
            clock.sleep((ev.at - now).to_std().unwrap_or_default().min(NAP));
            continue;
        }
        if matches!(ev.event, Event::Frame { .. }) {
            let caught_up = buffers.lock().progress.is_some_and(|p| p >= ev.at);
            if !caught_up && clock.now() - ev.at < SAMPLER_WAIT {
                clock.sleep(Duration::from_millis(10));
                continue;
            }
        }
        handler.on_event(&ev);
        cursor = Cursor::past(&ev);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::hal::fault::FaultScript;
    use crate::hal::sim::{EnvironmentParams, SimBackend, SimWorld};
    use crate::hal::{Call, CallLog, ChannelMap, InitSettings, Timing};

    fn at(h: u32, m: u32, s: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2025, 3, 10).unwrap().and_hms_opt(h, m, s).unwrap()
    }

    fn day(sched: &Scheduler, from: Cursor, until: NaiveDateTime) -> Vec<ScheduledEvent> {
        let mut out = Vec::new();
        let mut c = from;
        loop {
            let ev = sched.next_after(c);
            if ev.at > until {
                return out;
            }
            c = Cursor::past(&ev);
            out.push(ev);
        }
    }

    #[test]
    fn full_day_timeline() {
        let s = Scheduler::new(OperatingWindow::default());
        let evs = day(&s, Cursor::before(at(0, 0, 0)), at(23, 59, 59));
        let frames: Vec<_> = evs.iter().filter(|e| matches!(e.event, Event::Frame { .. })).collect();
        assert_eq!(frames.len(), 780);
        assert_eq!(frames[0].at, at(5, 0, 0));
        assert_eq!(frames.last().unwrap().at, at(17, 59, 0));
        for w in frames.windows(2) {
            assert_eq!(w[1].at - w[0].at, TimeDelta::seconds(60));
        }
        let health = evs.iter().filter(|e| e.event == Event::Frame { health: true }).count();
        assert_eq!(health, 156);
        assert_eq!(evs[0].event, Event::DayStart);
        assert_eq!(evs.last().unwrap().event, Event::EndOfDay);
        assert_eq!(evs.last().unwrap().at, at(18, 0, 0));
    }

    #[test]
    fn midday_start_waits_for_next_minute() {
        let s = Scheduler::new(OperatingWindow::default());
        let ev = s.next_after(Cursor::before(at(12, 0, 17)));
        assert_eq!(ev.at, at(12, 1, 0));
        assert!(matches!(ev.event, Event::Frame { .. }));
    }

    #[test]
    fn night_start_idles_until_window() {
        let s = Scheduler::new(OperatingWindow::default());
        assert_eq!(
            s.next_after(Cursor::before(at(3, 0, 0))),
            ScheduledEvent {
                at: at(5, 0, 0),
                event: Event::DayStart
            }
        );
        let ev = s.next_after(Cursor::before(at(19, 0, 0)));
        assert_eq!(ev.at, at(5, 0, 0) + TimeDelta::days(1));
    }

    fn hal_at(t: NaiveDateTime, calls: &CallLog) -> (Hal, Arc<SimClock>, Arc<std::sync::Mutex<SimWorld>>) {
        let clock = Arc::new(SimClock::new(t));
        let world = SimWorld::new(
            EnvironmentParams::default(),
            Calibration::default(),
            ChannelMap::default(),
            3,
            FaultScript::empty(),
            t,
        )
        .shared();
        let backend = SimBackend::new(world.clone(), clock.clone());
        let mut hal = Hal::new(
            Box::new(backend),
            clock.clone(),
            ChannelMap::default(),
            Timing::default(),
            InitSettings::default(),
        )
        .with_call_log(calls.clone());
        hal.init().unwrap();
        (hal, clock, world)
    }

    #[test]
    fn irradiance_pass_settles_between_taps() {
        let calls = CallLog::new();
        let (mut hal, _, _) = hal_at(at(11, 30, 0), &calls);
        calls.clear();
        let g = read_irradiance_pass(&mut hal, &Calibration::default()).unwrap();
        // ADC quantization of a 1.0 V differential at 4.096 V full scale.
        assert!((g - 1000.0).abs() < 0.5, "{g}");
        let reads: Vec<_> = calls
            .records()
            .into_iter()
            .filter(|r| matches!(r.call, Call::ReadAdc(_)))
            .collect();
        assert_eq!(reads.len(), 2);
        assert!(reads[1].at - reads[0].at >= TimeDelta::milliseconds(100));
    }

    #[test]
    fn irradiance_at_night_is_zero() {
        let calls = CallLog::new();
        let (mut hal, _, _) = hal_at(at(2, 0, 0), &calls);
        assert_eq!(read_irradiance_pass(&mut hal, &Calibration::default()).unwrap(), 0.0);
    }

    #[test]
    fn frame_timestamp_is_the_scheduled_minute() {
        let calls = CallLog::new();
        let (mut hal, clock, _) = hal_at(at(12, 0, 0), &calls);
        let buffers = SharedBuffers::new();
        let mut session = SessionCounters::default();
        clock.advance(Duration::from_millis(2500));
        let out = assemble_minute_frame(at(12, 0, 0), &mut hal, &buffers, &Calibration::default(), &mut session);
        assert_eq!(out.frame.timestamp, at(12, 0, 0));
        assert!(clock.now() > at(12, 0, 2));
        // Nothing was sampled, so the rolling fields are flagged.
        assert_eq!(out.frame.get(Field::Thermal(0)), None);
        assert!(out.frame.get(Field::Irradiance).is_some());
        assert!(out.frame.get(Field::Joules(1)).is_some());
        assert_eq!(out.frame.get(Field::Rain), Some(0.0));
    }

    #[test]
    fn energy_offset_carries_across_monitor_reset() {
        let calls = CallLog::new();
        let (mut hal, clock, _) = hal_at(at(12, 0, 0), &calls);
        let buffers = SharedBuffers::new();
        let cal = Calibration::default();
        let mut session = SessionCounters::default();
        clock.advance_to(at(12, 10, 0));
        let before = assemble_minute_frame(at(12, 10, 0), &mut hal, &buffers, &cal, &mut session);
        let j0 = before.frame.get(Field::Joules(0)).unwrap();
        assert!(j0 > 0.0);
        hal.init().unwrap();
        session.energy_offsets = session.energy_last;
        clock.advance_to(at(12, 11, 0));
        let after = assemble_minute_frame(at(12, 11, 0), &mut hal, &buffers, &cal, &mut session);
        assert!(after.frame.get(Field::Joules(0)).unwrap() > j0);
    }
}
