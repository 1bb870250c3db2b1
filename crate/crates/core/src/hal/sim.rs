//! Deterministic simulated backend.
//!
//! [`SimWorld`] models one site: a half-sine irradiance day between sunrise
//! and sunset, ambient temperature following the same curve shifted later,
//! panel temperatures rising above ambient in proportion to irradiance, and
//! seeded wind, rain and vane traces. Every signal is a pure function of
//! `(seed, time)`, so the same instant always reads the same value no matter
//! how the clock got there. The world also carries the fault script and the
//! interrupt-side pulse bank.
//!
//! [`SimBackend`] is the [`Backend`] view of a world. It catches the world up
//! to the injected clock before every call and never advances time itself.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, TimeDelta, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::channel_map::{ChannelMap, Signal, THERMISTOR_COUNT};
use super::fault::{FaultScript, FaultTarget};
use super::{
    AdcInput, AmbientReading, Backend, HalError, InitSettings, PulseCounterBank, PulseCounters,
    RawPowerReading,
};
use crate::clock::Clock;
use crate::convert::{Calibration, DividerOrientation, ADC_FULL_SCALE_COUNTS};

/// Physical parameters of the simulated site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentParams {
    /// W/m² at solar noon.
    pub peak_irradiance: f64,
    pub sunrise: NaiveTime,
    pub sunset: NaiveTime,
    /// °C overnight floor and afternoon peak.
    pub ambient_min: f64,
    pub ambient_max: f64,
    /// Delay of the ambient curve behind irradiance, minutes.
    pub ambient_lag_min: f64,
    /// Electrical output per unit irradiance, W/(W/m²), control then treatment.
    pub panel_efficiency: [f64; 2],
    /// Panel temperature rise over ambient at peak irradiance, °C.
    pub panel_rise: [f64; 2],
    /// Relative spread of the rise across the ten positions of a panel.
    pub position_gradient: f64,
    /// Operating voltage at low light and at peak, V.
    pub panel_voltage: [f64; 2],
    /// Common-mode level of the irradiance sensor taps, V.
    pub irradiance_bias: f64,
}

impl Default for EnvironmentParams {
    fn default() -> Self {
        Self {
            peak_irradiance: 1000.0,
            sunrise: NaiveTime::from_hms_opt(5, 30, 0).unwrap(),
            sunset: NaiveTime::from_hms_opt(17, 30, 0).unwrap(),
            ambient_min: 20.0,
            ambient_max: 31.0,
            ambient_lag_min: 120.0,
            panel_efficiency: [0.0060, 0.0063],
            panel_rise: [28.0, 21.0],
            position_gradient: 0.05,
            panel_voltage: [17.2, 18.0],
            irradiance_bias: 0.1,
        }
    }
}

/// Test hooks that pin individual signals.
#[derive(Debug, Clone, Default)]
pub struct SimOverrides {
    pub signal_volts: HashMap<Signal, f64>,
    pub thermistor_celsius: Option<f64>,
    pub ambient: Option<AmbientReading>,
    pub irradiance: Option<f64>,
    /// Anemometer pulses per second.
    pub wind_pulse_rate: Option<f64>,
    /// Bucket tips per minute.
    pub rain_tip_rate: Option<f64>,
}

/// Seeded per-day weather.
#[derive(Debug)]
struct DayProfile {
    wind_ppm: Vec<u32>,
    wind_cum: Vec<u64>,
    rain_tpm: Vec<u32>,
    rain_cum: Vec<u64>,
    vane_index: Vec<u8>,
}

const MINUTES_PER_DAY: usize = 1440;

impl DayProfile {
    fn generate(seed: u64, date: NaiveDate, wind_speed_per_hz: f64, vane_points: usize) -> Self {
        let day = date.num_days_from_ce() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ day.wrapping_mul(0x9E37_79B9_7F4A_7C15));

        let anchors: Vec<f64> = (0..=24).map(|_| rng.gen_range(0.3..4.5)).collect();
        let mut wind_ppm = Vec::with_capacity(MINUTES_PER_DAY);
        for m in 0..MINUTES_PER_DAY {
            let h = m / 60;
            let f = (m % 60) as f64 / 60.0;
            let speed = anchors[h] * (1.0 - f) + anchors[h + 1] * f + rng.gen_range(-0.3..0.3);
            let hz = speed.max(0.0) / wind_speed_per_hz;
            wind_ppm.push((hz * 60.0).round() as u32);
        }

        let mut rain_tpm = vec![0u32; MINUTES_PER_DAY];
        let showers = match rng.gen_range(0..10) {
            0..=5 => 0,
            6..=8 => 1,
            _ => 2,
        };
        for _ in 0..showers {
            let start = rng.gen_range(300..1080usize);
            let len = rng.gen_range(10..60usize);
            let rate = rng.gen_range(1..=4u32);
            for minute in &mut rain_tpm[start..(start + len).min(MINUTES_PER_DAY)] {
                *minute += rate;
            }
        }

        let n = vane_points.max(1) as i32;
        let mut idx = rng.gen_range(0..n);
        let mut vane_index = Vec::with_capacity(MINUTES_PER_DAY);
        for m in 0..MINUTES_PER_DAY {
            if m % 10 == 0 && m > 0 {
                idx = (idx + rng.gen_range(-1..=1) + n) % n;
            }
            vane_index.push(idx as u8);
        }

        let cum = |per_min: &[u32]| {
            let mut acc = 0u64;
            let mut out = Vec::with_capacity(per_min.len() + 1);
            out.push(0);
            for &p in per_min {
                acc += p as u64;
                out.push(acc);
            }
            out
        };
        Self {
            wind_cum: cum(&wind_ppm),
            rain_cum: cum(&rain_tpm),
            wind_ppm,
            rain_tpm,
            vane_index,
        }
    }

    /// Events evenly spaced within each minute, the j-th of n at (j + 0.5)/n.
    fn cumulative(per_min: &[u32], cum: &[u64], ms_of_day: u64) -> u64 {
        let m = (ms_of_day / 60_000) as usize;
        let within = ms_of_day % 60_000;
        let n = per_min[m] as u64;
        cum[m] + ((2 * within * n + 60_000) / 120_000).min(n)
    }
}

pub struct SimWorld {
    params: EnvironmentParams,
    cal: Calibration,
    map: ChannelMap,
    seed: u64,
    reference: NaiveDate,
    now: NaiveDateTime,
    script: FaultScript,
    next_fault: usize,
    active: Vec<(FaultTarget, NaiveDateTime)>,
    overrides: SimOverrides,
    profiles: HashMap<NaiveDate, Arc<DayProfile>>,
    pulses: Arc<PulseCounterBank>,
    energy_j: [f64; 2],
}

impl SimWorld {
    pub fn new(
        params: EnvironmentParams,
        cal: Calibration,
        map: ChannelMap,
        seed: u64,
        script: FaultScript,
        start: NaiveDateTime,
    ) -> Self {
        let mut world = Self {
            params,
            cal,
            map,
            seed,
            reference: start.date(),
            now: start,
            script,
            next_fault: 0,
            active: Vec::new(),
            overrides: SimOverrides::default(),
            profiles: HashMap::new(),
            pulses: Arc::new(PulseCounterBank::new()),
            energy_j: [0.0; 2],
        };
        world.update_faults();
        world
    }

    pub fn shared(self) -> Arc<Mutex<SimWorld>> {
        Arc::new(Mutex::new(self))
    }

    pub fn now(&self) -> NaiveDateTime {
        self.now
    }

    pub fn params(&self) -> &EnvironmentParams {
        &self.params
    }

    pub fn script(&self) -> &FaultScript {
        &self.script
    }

    pub fn overrides_mut(&mut self) -> &mut SimOverrides {
        &mut self.overrides
    }

    /// Node power-up: fresh pulse counters and monitor accumulators.
    pub fn power_on(&mut self) -> Arc<PulseCounterBank> {
        self.pulses = Arc::new(PulseCounterBank::new());
        self.energy_j = [0.0; 2];
        self.pulses.clone()
    }

    pub fn advance(&mut self, d: Duration) {
        let to = self.now + TimeDelta::from_std(d).unwrap();
        self.advance_to(to);
    }

    /// Moves the world to `t`: pulses emitted in between reach the counter
    /// bank, monitor energy accumulates and due faults activate or expire.
    pub fn advance_to(&mut self, t: NaiveDateTime) {
        if t <= self.now {
            return;
        }
        let from = self.now;
        let wind = self.wind_cumulative(t).saturating_sub(self.wind_cumulative(from));
        let rain = self.rain_cumulative(t).saturating_sub(self.rain_cumulative(from));
        if wind > 0 {
            self.pulses.record_anemometer(wind as u32);
        }
        if rain > 0 {
            self.pulses.record_rain(rain as u32);
        }
        let g_dt = self.irradiance_integral(from, t);
        for p in 0..2 {
            self.energy_j[p] += self.params.panel_efficiency[p] * g_dt;
        }
        self.now = t;
        self.update_faults();
    }

    fn update_faults(&mut self) {
        let entries = self.script.entries();
        while self.next_fault < entries.len() && entries[self.next_fault].at <= self.now {
            let e = entries[self.next_fault];
            if let super::fault::FaultKind::SensorFail { target, .. } = e.kind {
                self.active.push((target, e.until()));
            }
            self.next_fault += 1;
        }
        let now = self.now;
        self.active.retain(|(_, until)| *until > now);
    }

    pub fn is_failed(&self, target: FaultTarget) -> bool {
        self.active.iter().any(|(t, _)| *t == target)
    }

    pub fn active_faults(&self) -> Vec<FaultTarget> {
        self.active.iter().map(|(t, _)| *t).collect()
    }

    fn profile(&mut self, date: NaiveDate) -> Arc<DayProfile> {
        let (seed, k, n) = (
            self.seed,
            self.cal.meteo.wind_speed_per_hz,
            self.cal.meteo.vane_lookup.len(),
        );
        self.profiles
            .entry(date)
            .or_insert_with(|| Arc::new(DayProfile::generate(seed, date, k, n)))
            .clone()
    }

    fn ms_since_reference(&self, t: NaiveDateTime) -> i64 {
        (t - self.reference.and_hms_opt(0, 0, 0).unwrap()).num_milliseconds()
    }

    fn day_cumulative(
        &mut self,
        t: NaiveDateTime,
        pick: impl Fn(&DayProfile, u64) -> u64,
        total: impl Fn(&DayProfile) -> u64,
    ) -> u64 {
        let mut acc = 0;
        let mut d = self.reference;
        while d < t.date() {
            acc += total(&self.profile(d));
            d = d.succ_opt().unwrap();
        }
        let ms = t.num_seconds_from_midnight() as u64 * 1000 + (t.nanosecond() / 1_000_000) as u64;
        acc + pick(&self.profile(t.date()), ms)
    }

    fn wind_cumulative(&mut self, t: NaiveDateTime) -> u64 {
        if let Some(rate) = self.overrides.wind_pulse_rate {
            return (rate * self.ms_since_reference(t).max(0) as f64 / 1000.0).floor() as u64;
        }
        self.day_cumulative(
            t,
            |p, ms| DayProfile::cumulative(&p.wind_ppm, &p.wind_cum, ms),
            |p| p.wind_cum[MINUTES_PER_DAY],
        )
    }

    fn rain_cumulative(&mut self, t: NaiveDateTime) -> u64 {
        if let Some(rate) = self.overrides.rain_tip_rate {
            return (rate * self.ms_since_reference(t).max(0) as f64 / 60_000.0).floor() as u64;
        }
        self.day_cumulative(
            t,
            |p, ms| DayProfile::cumulative(&p.rain_tpm, &p.rain_cum, ms),
            |p| p.rain_cum[MINUTES_PER_DAY],
        )
    }

    fn day_span(&self) -> (f64, f64) {
        let sr = self.params.sunrise.num_seconds_from_midnight() as f64;
        let ss = self.params.sunset.num_seconds_from_midnight() as f64;
        (sr, ss - sr)
    }

    /// 0..1 half-sine bell over daylight, shifted later by `lag_s`.
    fn bell(&self, t: NaiveDateTime, lag_s: f64) -> f64 {
        let (sr, len) = self.day_span();
        let s = seconds_of_day(t) - lag_s - sr;
        if s <= 0.0 || s >= len {
            0.0
        } else {
            (PI * s / len).sin()
        }
    }

    pub fn irradiance(&self, t: NaiveDateTime) -> f64 {
        self.overrides
            .irradiance
            .unwrap_or_else(|| self.params.peak_irradiance * self.bell(t, 0.0))
    }

    /// ∫ G dt over [from, to], J/m².
    fn irradiance_integral(&self, from: NaiveDateTime, to: NaiveDateTime) -> f64 {
        if let Some(g) = self.overrides.irradiance {
            return g * (to - from).num_milliseconds() as f64 / 1000.0;
        }
        let (sr, len) = self.day_span();
        let peak = self.params.peak_irradiance;
        let full_day = 2.0 * peak * len / PI;
        let within = |t: NaiveDateTime| {
            let s = seconds_of_day(t) - sr;
            if s <= 0.0 {
                0.0
            } else if s >= len {
                full_day
            } else {
                peak * len / PI * (1.0 - (PI * s / len).cos())
            }
        };
        let days = (to.date() - from.date()).num_days() as f64;
        days * full_day + within(to) - within(from)
    }

    pub fn ambient(&self, t: NaiveDateTime) -> AmbientReading {
        if let Some(a) = self.overrides.ambient {
            return a;
        }
        let p = &self.params;
        let temperature = p.ambient_min + (p.ambient_max - p.ambient_min) * self.bell(t, p.ambient_lag_min * 60.0);
        let humidity = (92.0 - 2.0 * (temperature - p.ambient_min)).clamp(20.0, 100.0);
        AmbientReading {
            temperature,
            humidity,
        }
    }

    /// Panel index a thermistor is bonded to: T0..T9 control, T10..T19 treatment.
    pub fn panel_of(thermistor: u8) -> usize {
        (thermistor as usize * 2) / THERMISTOR_COUNT
    }

    pub fn thermistor_celsius(&self, t: NaiveDateTime, index: u8) -> f64 {
        if let Some(c) = self.overrides.thermistor_celsius {
            return c;
        }
        let p = &self.params;
        let panel = Self::panel_of(index);
        let pos = (index as usize % (THERMISTOR_COUNT / 2)) as f64;
        let spread = 1.0 + p.position_gradient * (pos - 4.5) / 4.5;
        self.ambient(t).temperature + p.panel_rise[panel] * self.irradiance(t) / p.peak_irradiance * spread
    }

    pub fn wind_direction(&mut self, t: NaiveDateTime) -> f64 {
        let idx = self.vane_index(t);
        self.cal.meteo.vane_lookup[idx].degrees
    }

    fn vane_index(&mut self, t: NaiveDateTime) -> usize {
        let m = (seconds_of_day(t) as usize / 60).min(MINUTES_PER_DAY - 1);
        let idx = self.profile(t.date()).vane_index[m] as usize;
        idx.min(self.cal.meteo.vane_lookup.len() - 1)
    }

    /// Expected anemometer rate for the minute containing `t`, pulses/s.
    pub fn wind_pulse_rate(&mut self, t: NaiveDateTime) -> f64 {
        if let Some(r) = self.overrides.wind_pulse_rate {
            return r;
        }
        let m = (seconds_of_day(t) as usize / 60).min(MINUTES_PER_DAY - 1);
        self.profile(t.date()).wind_ppm[m] as f64 / 60.0
    }

    /// Voltage presented by `signal` at the ADC pin.
    pub fn signal_volts(&mut self, signal: Signal) -> f64 {
        if let Some(v) = self.overrides.signal_volts.get(&signal) {
            return *v;
        }
        let t = self.now;
        match signal {
            Signal::Thermistor(i) => {
                let cal = &self.cal.thermistor;
                let kelvin = self.thermistor_celsius(t, i) + 273.15;
                let r = cal.r0 * (cal.beta * (1.0 / kelvin - 1.0 / cal.t0)).exp();
                match cal.orientation {
                    DividerOrientation::FixedLow => cal.v_supply * cal.r_fixed / (cal.r_fixed + r),
                    DividerOrientation::FixedHigh => cal.v_supply * r / (r + cal.r_fixed),
                }
            }
            Signal::IrradianceMinus => self.params.irradiance_bias,
            Signal::IrradiancePlus => {
                self.params.irradiance_bias + self.irradiance(t) / self.cal.meteo.irradiance_gain
            }
            Signal::WindVane => {
                let idx = self.vane_index(t);
                self.cal.meteo.vane_lookup[idx].volts
            }
        }
    }

    fn volts_to_code(&self, v: f64) -> i16 {
        let code = (v / self.cal.adc_full_scale * ADC_FULL_SCALE_COUNTS).round();
        code.clamp(i16::MIN as f64, i16::MAX as f64) as i16
    }

    pub fn panel_reading(&self, panel: usize) -> RawPowerReading {
        let t = self.now;
        let p = &self.params;
        let g = self.irradiance(t);
        let watts = p.panel_efficiency[panel] * g;
        let (volts, amps) = if watts > 0.0 {
            let v = p.panel_voltage[0] + (p.panel_voltage[1] - p.panel_voltage[0]) * g / p.peak_irradiance
                + 0.3 * panel as f64;
            (v, watts / v)
        } else {
            (0.0, 0.0)
        };
        let e = &self.cal.electrical;
        RawPowerReading {
            bus_voltage_code: (volts / e.bus_voltage_lsb()).round() as u32,
            current_code: (amps / e.current_lsb()).round() as i32,
            power_code: (watts / e.power_factor()).round() as u32,
            energy_code: (self.energy_j[panel] / e.energy_factor()).round() as u64,
        }
    }
}

fn seconds_of_day(t: NaiveDateTime) -> f64 {
    t.num_seconds_from_midnight() as f64 + t.nanosecond() as f64 * 1e-9
}

pub struct SimBackend {
    world: Arc<Mutex<SimWorld>>,
    clock: Arc<dyn Clock>,
    pulses: Arc<PulseCounterBank>,
    select: Option<u8>,
}

impl SimBackend {
    /// Powers the simulated node on: counters and accumulators start at zero.
    pub fn new(world: Arc<Mutex<SimWorld>>, clock: Arc<dyn Clock>) -> Self {
        let pulses = {
            let mut w = world.lock().unwrap();
            w.advance_to(clock.now());
            w.power_on()
        };
        Self {
            world,
            clock,
            pulses,
            select: None,
        }
    }

    pub fn world(&self) -> &Arc<Mutex<SimWorld>> {
        &self.world
    }

    fn sync(&self) -> MutexGuard<'_, SimWorld> {
        let mut w = self.world.lock().unwrap();
        w.advance_to(self.clock.now());
        w
    }
}

impl Backend for SimBackend {
    fn init(&mut self, settings: &InitSettings) -> Result<(), HalError> {
        self.select = None;
        let mut w = self.sync();
        if w.is_failed(FaultTarget::SelectLines) {
            return Err(HalError::BusFault("select lines stuck during init".into()));
        }
        for (i, addr) in settings.power_monitors.iter().enumerate() {
            if w.is_failed(FaultTarget::PowerMonitor(i)) {
                return Err(HalError::BusFault(format!("power monitor {addr:#04x} nack during init")));
            }
        }
        w.energy_j = [0.0; 2];
        Ok(())
    }

    fn set_select_lines(&mut self, code: u8) -> Result<(), HalError> {
        let stuck = self.sync().is_failed(FaultTarget::SelectLines);
        if stuck {
            self.select = None;
            return Err(HalError::BusFault("select line write failed".into()));
        }
        self.select = Some(code);
        Ok(())
    }

    fn start_conversion(&mut self, _input: AdcInput) -> Result<(), HalError> {
        drop(self.sync());
        Ok(())
    }

    fn fetch_conversion(&mut self, input: AdcInput) -> Result<i16, HalError> {
        let mut w = self.sync();
        let Some(signal) = w.map.routed_signal(input, self.select) else {
            // Unassigned mux channel: the input floats near ground.
            return Ok(0);
        };
        if w.is_failed(FaultTarget::Signal(signal)) {
            return Err(HalError::BusFault(format!("conversion of {signal} on {input} failed")));
        }
        let v = w.signal_volts(signal);
        Ok(w.volts_to_code(v))
    }

    fn read_power_monitor(&mut self, address: u8) -> Result<RawPowerReading, HalError> {
        let w = self.sync();
        let panel = w
            .map
            .power_monitor_addresses()
            .iter()
            .position(|a| *a == address)
            .ok_or_else(|| HalError::BusFault(format!("no device at {address:#04x}")))?;
        if w.is_failed(FaultTarget::PowerMonitor(panel)) {
            return Err(HalError::BusFault(format!("power monitor {address:#04x} nack")));
        }
        Ok(w.panel_reading(panel.min(1)))
    }

    fn reset_energy(&mut self, address: u8) -> Result<(), HalError> {
        let mut w = self.sync();
        let panel = w
            .map
            .power_monitor_addresses()
            .iter()
            .position(|a| *a == address)
            .ok_or_else(|| HalError::BusFault(format!("no device at {address:#04x}")))?;
        if w.is_failed(FaultTarget::PowerMonitor(panel)) {
            return Err(HalError::BusFault(format!("power monitor {address:#04x} nack")));
        }
        w.energy_j[panel.min(1)] = 0.0;
        Ok(())
    }

    fn read_ambient(&mut self) -> Result<AmbientReading, HalError> {
        let w = self.sync();
        if w.is_failed(FaultTarget::Dht) {
            return Err(HalError::ReadTimeout("ambient sensor did not answer".into()));
        }
        let a = w.ambient(w.now);
        // Sensor resolution is 0.1 in both quantities.
        Ok(AmbientReading {
            temperature: (a.temperature * 10.0).round() / 10.0,
            humidity: (a.humidity * 10.0).round() / 10.0,
        })
    }

    fn poll_pulse_counters(&mut self) -> PulseCounters {
        drop(self.sync());
        self.pulses.take()
    }

    fn release(&mut self) {
        self.select = None;
    }
}
