//! Hardware abstraction.
//!
//! [`Hal`] owns one [`Backend`] and enforces the timing and addressing rules
//! every backend shares: select-line settling before a multiplexed
//! conversion, the conversion window itself, the ambient sensor's re-read
//! interval and the configured power-monitor addresses. A [`Bus`] wraps the
//! `Hal` in a mutex; holding its guard is the exclusive bus token.

pub mod channel_map;
pub mod fault;
pub mod register;
pub mod sim;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
pub use channel_map::{AdcInput, AdcSource, ChannelMap, MuxId, Signal};

pub const VOLTAGE_CODE_BITS: u32 = 20;
pub const CURRENT_CODE_BITS: u32 = 20;
pub const POWER_CODE_BITS: u32 = 24;
pub const ENERGY_CODE_BITS: u32 = 40;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HalError {
    #[error("bus fault: {0}")]
    BusFault(String),
    #[error("read timeout: {0}")]
    ReadTimeout(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("hardware not initialized")]
    NotReady,
}

/// Register image of one power monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawPowerReading {
    pub bus_voltage_code: u32,
    pub current_code: i32,
    pub power_code: u32,
    pub energy_code: u64,
}

impl RawPowerReading {
    pub fn within_register_widths(&self) -> bool {
        let signed_limit = 1i32 << (CURRENT_CODE_BITS - 1);
        self.bus_voltage_code < (1 << VOLTAGE_CODE_BITS)
            && (-signed_limit..signed_limit).contains(&self.current_code)
            && self.power_code < (1 << POWER_CODE_BITS)
            && self.energy_code < (1u64 << ENERGY_CODE_BITS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AmbientReading {
    pub temperature: f64,
    pub humidity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PulseCounters {
    pub anemometer_pulses: u32,
    pub rain_tips: u32,
}

/// Interrupt-side pulse accumulators. Both counts share one atomic word so a
/// poll reads and zeroes them in a single step.
#[derive(Debug, Default)]
pub struct PulseCounterBank {
    packed: AtomicU64,
}

impl PulseCounterBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_anemometer(&self, pulses: u32) {
        self.packed.fetch_add((pulses as u64) << 32, Ordering::AcqRel);
    }

    pub fn record_rain(&self, tips: u32) {
        self.packed.fetch_add(tips as u64, Ordering::AcqRel);
    }

    pub fn take(&self) -> PulseCounters {
        let v = self.packed.swap(0, Ordering::AcqRel);
        PulseCounters {
            anemometer_pulses: (v >> 32) as u32,
            rain_tips: v as u32,
        }
    }
}

/// Device configuration applied by every init sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct InitSettings {
    pub power_monitors: Vec<u8>,
    /// On-chip averaging count for the power monitors.
    pub power_averaging: u16,
    /// Bus/shunt conversion time for the power monitors, µs.
    pub power_conversion_us: u32,
    pub current_lsb: f64,
    pub shunt_ohms: f64,
    /// ADC programmable-gain full scale, V.
    pub adc_full_scale: f64,
}

impl Default for InitSettings {
    fn default() -> Self {
        Self {
            power_monitors: vec![0x40, 0x41],
            power_averaging: 1024,
            power_conversion_us: 1052,
            current_lsb: 10e-6,
            shunt_ohms: 0.015,
            adc_full_scale: 4.096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub mux_settle: Duration,
    pub adc_conversion: Duration,
    pub irradiance_settle: Duration,
    pub ambient_min_interval: Duration,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            mux_settle: Duration::from_millis(5),
            adc_conversion: Duration::from_millis(16),
            irradiance_settle: Duration::from_millis(100),
            ambient_min_interval: Duration::from_secs(2),
        }
    }
}

/// Device-facing operations. Implementations do no waiting of their own;
/// [`Hal`] sleeps on the injected clock between `start_conversion` and
/// `fetch_conversion`.
pub trait Backend: Send {
    fn init(&mut self, settings: &InitSettings) -> Result<(), HalError>;
    fn set_select_lines(&mut self, code: u8) -> Result<(), HalError>;
    fn start_conversion(&mut self, input: AdcInput) -> Result<(), HalError>;
    fn fetch_conversion(&mut self, input: AdcInput) -> Result<i16, HalError>;
    fn read_power_monitor(&mut self, address: u8) -> Result<RawPowerReading, HalError>;
    fn reset_energy(&mut self, address: u8) -> Result<(), HalError>;
    fn read_ambient(&mut self) -> Result<AmbientReading, HalError>;
    fn poll_pulse_counters(&mut self) -> PulseCounters;
    fn release(&mut self);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Call {
    Init,
    Select(u8),
    ReadAdc(AdcInput),
    ReadPower(u8),
    ResetEnergy(u8),
    ReadAmbient,
    PollPulses,
    Release,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Done,
    Code(i16),
    Power(RawPowerReading),
    Ambient(AmbientReading),
    Pulses(PulseCounters),
    Failed(HalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    /// Completion time of the call on the injected clock.
    pub at: NaiveDateTime,
    pub call: Call,
    pub response: Response,
}

/// Shared, append-only record of every backend call.
#[derive(Debug, Clone, Default)]
pub struct CallLog(Arc<Mutex<Vec<CallRecord>>>);

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, record: CallRecord) {
        self.0.lock().unwrap().push(record);
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.0.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.0.lock().unwrap().clear();
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Hal {
    backend: Box<dyn Backend>,
    clock: Arc<dyn Clock>,
    map: ChannelMap,
    timing: Timing,
    settings: InitSettings,
    selected: Option<(u8, NaiveDateTime)>,
    last_ambient: Option<NaiveDateTime>,
    ready: bool,
    log: Option<CallLog>,
}

impl Hal {
    pub fn new(
        backend: Box<dyn Backend>,
        clock: Arc<dyn Clock>,
        map: ChannelMap,
        timing: Timing,
        settings: InitSettings,
    ) -> Self {
        Self {
            backend,
            clock,
            map,
            timing,
            settings,
            selected: None,
            last_ambient: None,
            ready: false,
            log: None,
        }
    }

    pub fn with_call_log(mut self, log: CallLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn channel_map(&self) -> &ChannelMap {
        &self.map
    }

    pub fn timing(&self) -> &Timing {
        &self.timing
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn is_ready(&self) -> bool {
        self.ready
    }

    fn record(&self, call: Call, response: Response) {
        if let Some(log) = &self.log {
            log.push(CallRecord {
                at: self.clock.now(),
                call,
                response,
            });
        }
    }

    fn record_result<T>(
        &self,
        call: Call,
        result: &Result<T, HalError>,
        ok: impl FnOnce(&T) -> Response,
    ) {
        if self.log.is_some() {
            let response = match result {
                Ok(v) => ok(v),
                Err(e) => Response::Failed(e.clone()),
            };
            self.record(call, response);
        }
    }

    fn ensure_ready(&self) -> Result<(), HalError> {
        if self.ready {
            Ok(())
        } else {
            Err(HalError::NotReady)
        }
    }

    /// Full init sequence: device configuration, then select lines parked at
    /// code 0.
    pub fn init(&mut self) -> Result<(), HalError> {
        self.ready = false;
        self.selected = None;
        let result = self.backend.init(&self.settings);
        self.record_result(Call::Init, &result, |_| Response::Done);
        result?;
        self.ready = true;
        self.select_mux_channel(0)?;
        Ok(())
    }

    pub fn release(&mut self) {
        self.backend.release();
        self.ready = false;
        self.selected = None;
        self.record(Call::Release, Response::Done);
    }

    /// Drives SEL[0:2]; all three multiplexers switch together.
    pub fn select_mux_channel(&mut self, select_code: u8) -> Result<(), HalError> {
        if select_code >= channel_map::SELECT_CODES {
            return Err(HalError::Precondition(format!(
                "select code {select_code} out of range 0..7"
            )));
        }
        self.ensure_ready()?;
        let result = self.backend.set_select_lines(select_code);
        self.record_result(Call::Select(select_code), &result, |_| Response::Done);
        match result {
            Ok(()) => {
                self.selected = Some((select_code, self.clock.now()));
                Ok(())
            }
            Err(e) => {
                self.selected = None;
                Err(e)
            }
        }
    }

    pub fn selected_code(&self) -> Option<u8> {
        self.selected.map(|(c, _)| c)
    }

    /// One single-shot conversion. Multiplexed inputs require the settling
    /// time to have elapsed since the last selection.
    pub fn read_adc(&mut self, input: AdcInput) -> Result<i16, HalError> {
        self.ensure_ready()?;
        match self.map.source_of(input) {
            None => {
                return Err(HalError::Precondition(format!("ADC input {input} is not wired")));
            }
            Some(AdcSource::Mux(_)) => {
                let (_, since) = self.selected.ok_or_else(|| {
                    HalError::Precondition(format!("{input} read with no mux channel selected"))
                })?;
                let settle = chrono::TimeDelta::from_std(self.timing.mux_settle).unwrap();
                if self.clock.now() - since < settle {
                    return Err(HalError::Precondition(format!(
                        "{input} read before mux settling time elapsed"
                    )));
                }
            }
            Some(AdcSource::WindVane) => {}
        }
        let result = self.backend.start_conversion(input).and_then(|()| {
            self.clock.sleep(self.timing.adc_conversion);
            self.backend.fetch_conversion(input)
        });
        self.record_result(Call::ReadAdc(input), &result, |c| Response::Code(*c));
        result
    }

    pub fn read_power_monitor(&mut self, address: u8) -> Result<RawPowerReading, HalError> {
        if !self.map.power_monitor_addresses().contains(&address) {
            return Err(HalError::Precondition(format!(
                "power monitor address {address:#04x} is not configured"
            )));
        }
        self.ensure_ready()?;
        let result = self.backend.read_power_monitor(address).and_then(|r| {
            if r.within_register_widths() {
                Ok(r)
            } else {
                Err(HalError::BusFault(format!(
                    "power monitor {address:#04x} returned out-of-width register image"
                )))
            }
        });
        self.record_result(Call::ReadPower(address), &result, |r| Response::Power(*r));
        result
    }

    pub fn reset_energy(&mut self, address: u8) -> Result<(), HalError> {
        if !self.map.power_monitor_addresses().contains(&address) {
            return Err(HalError::Precondition(format!(
                "power monitor address {address:#04x} is not configured"
            )));
        }
        self.ensure_ready()?;
        let result = self.backend.reset_energy(address);
        self.record_result(Call::ResetEnergy(address), &result, |_| Response::Done);
        result
    }

    /// Ambient temperature/humidity. Queries closer together than the
    /// sensor's minimum interval are rejected.
    pub fn read_ambient(&mut self) -> Result<AmbientReading, HalError> {
        let now = self.clock.now();
        if let Some(last) = self.last_ambient {
            let min = chrono::TimeDelta::from_std(self.timing.ambient_min_interval).unwrap();
            if now - last < min {
                return Err(HalError::Precondition(format!(
                    "ambient sensor queried {} ms after previous query",
                    (now - last).num_milliseconds()
                )));
            }
        }
        self.ensure_ready()?;
        self.last_ambient = Some(now);
        let result = self.backend.read_ambient();
        self.record_result(Call::ReadAmbient, &result, |a| Response::Ambient(*a));
        result
    }

    /// Pulse deltas since the previous poll.
    pub fn poll_pulse_counters(&mut self) -> PulseCounters {
        let counters = self.backend.poll_pulse_counters();
        self.record(Call::PollPulses, Response::Pulses(counters));
        counters
    }
}

/// Shared handle to the bus. Locking it grants exclusive access.
#[derive(Clone)]
pub struct Bus(Arc<Mutex<Hal>>);

impl Bus {
    pub fn new(hal: Hal) -> Self {
        Self(Arc::new(Mutex::new(hal)))
    }

    pub fn lock(&self) -> MutexGuard<'_, Hal> {
        self.0.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pulse_bank_take_resets_both() {
        let bank = PulseCounterBank::new();
        bank.record_anemometer(7);
        bank.record_rain(2);
        bank.record_anemometer(3);
        assert_eq!(
            bank.take(),
            PulseCounters {
                anemometer_pulses: 10,
                rain_tips: 2
            }
        );
        assert_eq!(bank.take(), PulseCounters::default());
    }

    #[test]
    fn register_width_check() {
        let mut r = RawPowerReading::default();
        assert!(r.within_register_widths());
        r.current_code = -(1 << 19);
        assert!(r.within_register_widths());
        r.current_code = 1 << 19;
        assert!(!r.within_register_widths());
        r.current_code = 0;
        r.energy_code = 1 << 40;
        assert!(!r.within_register_widths());
    }
}
