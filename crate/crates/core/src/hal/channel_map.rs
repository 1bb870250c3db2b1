//! Analog front-end wiring.
//!
//! Three 8:1 multiplexers share the select lines SEL[0:2]. Their outputs and
//! the wind vane land on the four single-ended inputs of the ADC:
//!
//! | mux  | codes 0..7                      | ADC input |
//! |------|---------------------------------|-----------|
//! | MUX1 | T0..T7                          | A3        |
//! | MUX2 | T8..T15                         | A2        |
//! | MUX3 | T16..T19, IRR-, IRR+, -, -      | A1        |
//! | -    | wind vane                       | A0        |
//!
//! The two power monitors sit on the I2C bus at 0x40 and 0x41.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const THERMISTOR_COUNT: usize = 20;
pub const SELECT_CODES: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Signal {
    Thermistor(u8),
    IrradianceMinus,
    IrradiancePlus,
    WindVane,
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Thermistor(i) => write!(f, "T{i}"),
            Signal::IrradianceMinus => f.write_str("IRR-"),
            Signal::IrradiancePlus => f.write_str("IRR+"),
            Signal::WindVane => f.write_str("VANE"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown signal name `{0}`")]
pub struct UnknownSignal(pub String);

impl FromStr for Signal {
    type Err = UnknownSignal;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "IRR-" => Ok(Signal::IrradianceMinus),
            "IRR+" => Ok(Signal::IrradiancePlus),
            "VANE" => Ok(Signal::WindVane),
            _ => s
                .strip_prefix('T')
                .and_then(|n| n.parse::<u8>().ok())
                .filter(|&n| (n as usize) < THERMISTOR_COUNT)
                .map(Signal::Thermistor)
                .ok_or_else(|| UnknownSignal(s.to_string())),
        }
    }
}

impl TryFrom<String> for Signal {
    type Error = UnknownSignal;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Signal> for String {
    fn from(s: Signal) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MuxId {
    #[serde(rename = "MUX1")]
    Mux1,
    #[serde(rename = "MUX2")]
    Mux2,
    #[serde(rename = "MUX3")]
    Mux3,
}

impl MuxId {
    pub const ALL: [MuxId; 3] = [MuxId::Mux1, MuxId::Mux2, MuxId::Mux3];

    pub fn number(self) -> u8 {
        match self {
            MuxId::Mux1 => 1,
            MuxId::Mux2 => 2,
            MuxId::Mux3 => 3,
        }
    }
}

impl fmt::Display for MuxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MUX{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AdcInput {
    A0,
    A1,
    A2,
    A3,
}

impl AdcInput {
    pub const ALL: [AdcInput; 4] = [AdcInput::A0, AdcInput::A1, AdcInput::A2, AdcInput::A3];

    pub fn index(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for AdcInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", self.index())
    }
}

/// What drives an ADC input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdcSource {
    Mux(MuxId),
    WindVane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MuxAssignment {
    pub mux: MuxId,
    pub select_code: u8,
    pub signal: Signal,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelMapError {
    #[error("select code {0} out of range 0..7")]
    SelectCode(u8),
    #[error("{mux} code {code} assigned twice")]
    DuplicateSlot { mux: MuxId, code: u8 },
    #[error("signal {0} assigned more than once")]
    DuplicateSignal(Signal),
    #[error("wind vane cannot be routed through a multiplexer")]
    VaneOnMux,
    #[error("ADC input {0} assigned twice")]
    DuplicateInput(AdcInput),
    #[error("source {0:?} is wired to more than one ADC input")]
    DuplicateSource(AdcSource),
    #[error("power monitor addresses must be distinct and non-empty")]
    PowerMonitorAddresses,
    #[error("thermistor T{0} has no multiplexer slot")]
    MissingThermistor(u8),
    #[error("{0} has no multiplexer slot")]
    MissingSignal(Signal),
    #[error("{0} is not wired to any ADC input")]
    UnwiredMux(MuxId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMap {
    mux_assignments: Vec<MuxAssignment>,
    adc_assignments: Vec<(AdcInput, AdcSource)>,
    power_monitor_addresses: Vec<u8>,
}

impl Default for ChannelMap {
    fn default() -> Self {
        let mut mux_assignments = Vec::with_capacity(22);
        for code in 0..8u8 {
            mux_assignments.push(MuxAssignment {
                mux: MuxId::Mux1,
                select_code: code,
                signal: Signal::Thermistor(code),
            });
        }
        for code in 0..8u8 {
            mux_assignments.push(MuxAssignment {
                mux: MuxId::Mux2,
                select_code: code,
                signal: Signal::Thermistor(8 + code),
            });
        }
        for code in 0..4u8 {
            mux_assignments.push(MuxAssignment {
                mux: MuxId::Mux3,
                select_code: code,
                signal: Signal::Thermistor(16 + code),
            });
        }
        mux_assignments.push(MuxAssignment {
            mux: MuxId::Mux3,
            select_code: 4,
            signal: Signal::IrradianceMinus,
        });
        mux_assignments.push(MuxAssignment {
            mux: MuxId::Mux3,
            select_code: 5,
            signal: Signal::IrradiancePlus,
        });
        Self {
            mux_assignments,
            adc_assignments: vec![
                (AdcInput::A3, AdcSource::Mux(MuxId::Mux1)),
                (AdcInput::A2, AdcSource::Mux(MuxId::Mux2)),
                (AdcInput::A1, AdcSource::Mux(MuxId::Mux3)),
                (AdcInput::A0, AdcSource::WindVane),
            ],
            power_monitor_addresses: vec![0x40, 0x41],
        }
    }
}

impl ChannelMap {
    pub fn new(
        mux_assignments: Vec<MuxAssignment>,
        adc_assignments: Vec<(AdcInput, AdcSource)>,
        power_monitor_addresses: Vec<u8>,
    ) -> Result<Self, ChannelMapError> {
        let map = Self {
            mux_assignments,
            adc_assignments,
            power_monitor_addresses,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<(), ChannelMapError> {
        let mut slots = std::collections::HashSet::new();
        let mut signals = std::collections::HashSet::new();
        for a in &self.mux_assignments {
            if a.select_code >= SELECT_CODES {
                return Err(ChannelMapError::SelectCode(a.select_code));
            }
            if a.signal == Signal::WindVane {
                return Err(ChannelMapError::VaneOnMux);
            }
            if !slots.insert((a.mux, a.select_code)) {
                return Err(ChannelMapError::DuplicateSlot {
                    mux: a.mux,
                    code: a.select_code,
                });
            }
            if !signals.insert(a.signal) {
                return Err(ChannelMapError::DuplicateSignal(a.signal));
            }
        }
        for i in 0..THERMISTOR_COUNT as u8 {
            if !signals.contains(&Signal::Thermistor(i)) {
                return Err(ChannelMapError::MissingThermistor(i));
            }
        }
        for s in [Signal::IrradianceMinus, Signal::IrradiancePlus] {
            if !signals.contains(&s) {
                return Err(ChannelMapError::MissingSignal(s));
            }
        }
        let mut inputs = std::collections::HashSet::new();
        let mut sources = std::collections::HashSet::new();
        for (input, source) in &self.adc_assignments {
            if !inputs.insert(*input) {
                return Err(ChannelMapError::DuplicateInput(*input));
            }
            if !sources.insert(*source) {
                return Err(ChannelMapError::DuplicateSource(*source));
            }
        }
        for a in &self.mux_assignments {
            if !sources.contains(&AdcSource::Mux(a.mux)) {
                return Err(ChannelMapError::UnwiredMux(a.mux));
            }
        }
        if !sources.contains(&AdcSource::WindVane) {
            return Err(ChannelMapError::MissingSignal(Signal::WindVane));
        }
        let mut addrs = self.power_monitor_addresses.clone();
        addrs.sort_unstable();
        addrs.dedup();
        if addrs.is_empty() || addrs.len() != self.power_monitor_addresses.len() {
            return Err(ChannelMapError::PowerMonitorAddresses);
        }
        Ok(())
    }

    pub fn mux_assignments(&self) -> &[MuxAssignment] {
        &self.mux_assignments
    }

    pub fn adc_assignments(&self) -> &[(AdcInput, AdcSource)] {
        &self.adc_assignments
    }

    pub fn power_monitor_addresses(&self) -> &[u8] {
        &self.power_monitor_addresses
    }

    pub fn with_power_monitor_addresses(mut self, addrs: Vec<u8>) -> Result<Self, ChannelMapError> {
        self.power_monitor_addresses = addrs;
        self.validate()?;
        Ok(self)
    }

    pub fn signal_at(&self, mux: MuxId, select_code: u8) -> Option<Signal> {
        self.mux_assignments
            .iter()
            .find(|a| a.mux == mux && a.select_code == select_code)
            .map(|a| a.signal)
    }

    pub fn slot_of(&self, signal: Signal) -> Option<(MuxId, u8)> {
        self.mux_assignments
            .iter()
            .find(|a| a.signal == signal)
            .map(|a| (a.mux, a.select_code))
    }

    pub fn source_of(&self, input: AdcInput) -> Option<AdcSource> {
        self.adc_assignments
            .iter()
            .find(|(i, _)| *i == input)
            .map(|(_, s)| *s)
    }

    pub fn input_for(&self, source: AdcSource) -> Option<AdcInput> {
        self.adc_assignments
            .iter()
            .find(|(_, s)| *s == source)
            .map(|(i, _)| *i)
    }

    /// Signal observed on `input` while the select lines hold `select_code`.
    pub fn routed_signal(&self, input: AdcInput, select_code: Option<u8>) -> Option<Signal> {
        match self.source_of(input)? {
            AdcSource::WindVane => Some(Signal::WindVane),
            AdcSource::Mux(mux) => self.signal_at(mux, select_code?),
        }
    }

    /// Thermistor reads per select code, in the order a scan performs them
    /// (MUX1 first, then MUX2, then MUX3).
    pub fn thermistor_scan_plan(&self) -> Vec<(u8, Vec<(AdcInput, u8)>)> {
        let mut plan = Vec::new();
        for code in 0..SELECT_CODES {
            let mut reads = Vec::new();
            for mux in MuxId::ALL {
                if let Some(Signal::Thermistor(t)) = self.signal_at(mux, code) {
                    if let Some(input) = self.input_for(AdcSource::Mux(mux)) {
                        reads.push((input, t));
                    }
                }
            }
            if !reads.is_empty() {
                plan.push((code, reads));
            }
        }
        plan
    }

    /// Number of ADC reads in one reporting pass: every multiplexed signal
    /// plus the direct vane input.
    pub fn reads_per_reporting_pass(&self) -> usize {
        self.mux_assignments.len() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_is_valid() {
        ChannelMap::default().validate().unwrap();
    }

    #[test]
    fn select_zero_routes_first_of_each_bank() {
        let map = ChannelMap::default();
        assert_eq!(map.signal_at(MuxId::Mux1, 0), Some(Signal::Thermistor(0)));
        assert_eq!(map.signal_at(MuxId::Mux2, 0), Some(Signal::Thermistor(8)));
        assert_eq!(map.signal_at(MuxId::Mux3, 0), Some(Signal::Thermistor(16)));
    }

    #[test]
    fn mux3_tail() {
        let map = ChannelMap::default();
        assert_eq!(map.signal_at(MuxId::Mux3, 4), Some(Signal::IrradianceMinus));
        assert_eq!(map.signal_at(MuxId::Mux3, 5), Some(Signal::IrradiancePlus));
        assert_eq!(map.signal_at(MuxId::Mux3, 6), None);
        assert_eq!(map.signal_at(MuxId::Mux3, 7), None);
    }

    #[test]
    fn routed_signal_through_adc() {
        let map = ChannelMap::default();
        assert_eq!(map.routed_signal(AdcInput::A3, Some(3)), Some(Signal::Thermistor(3)));
        assert_eq!(map.routed_signal(AdcInput::A1, Some(5)), Some(Signal::IrradiancePlus));
        assert_eq!(map.routed_signal(AdcInput::A0, None), Some(Signal::WindVane));
        assert_eq!(map.routed_signal(AdcInput::A2, None), None);
    }

    #[test]
    fn scan_plan_covers_all_thermistors_once() {
        let plan = ChannelMap::default().thermistor_scan_plan();
        let mut seen: Vec<u8> = plan.iter().flat_map(|(_, r)| r.iter().map(|(_, t)| *t)).collect();
        assert_eq!(seen.len(), 20);
        seen.sort_unstable();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
        assert_eq!(plan[0].1, vec![(AdcInput::A3, 0), (AdcInput::A2, 8), (AdcInput::A1, 16)]);
        assert_eq!(plan[7].1, vec![(AdcInput::A3, 7), (AdcInput::A2, 15)]);
    }

    #[test]
    fn reporting_pass_is_23_reads() {
        assert_eq!(ChannelMap::default().reads_per_reporting_pass(), 23);
    }

    #[test]
    fn rejects_duplicate_addresses() {
        let err = ChannelMap::default()
            .with_power_monitor_addresses(vec![0x40, 0x40])
            .unwrap_err();
        assert_eq!(err, ChannelMapError::PowerMonitorAddresses);
    }

    #[test]
    fn signal_names_round_trip() {
        for s in ["T0", "T19", "IRR-", "IRR+", "VANE"] {
            assert_eq!(s.parse::<Signal>().unwrap().to_string(), s);
        }
        assert!("T20".parse::<Signal>().is_err());
    }
}
