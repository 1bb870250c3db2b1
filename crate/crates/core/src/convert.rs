//! Raw backend values to physical units.
//!
//! Everything here is a pure function of its arguments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hal::RawPowerReading;

pub const KELVIN_OFFSET: f64 = 273.15;
/// Positive full-scale count of a signed 16-bit converter.
pub const ADC_FULL_SCALE_COUNTS: f64 = 32768.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvertError {
    #[error("divider output {v_out} V outside (0, {v_supply}) V")]
    Range { v_out: f64, v_supply: f64 },
    #[error("averaging window must be positive, got {0} s")]
    Window(f64),
    #[error("invalid calibration: {0}")]
    Calibration(String),
}

/// Which leg of the divider holds the fixed resistor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DividerOrientation {
    /// Fixed resistor to ground, thermistor to supply; output rises with temperature.
    #[default]
    FixedLow,
    /// Fixed resistor to supply, thermistor to ground.
    FixedHigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermistorCal {
    /// Ω
    pub r_fixed: f64,
    /// V
    pub v_supply: f64,
    /// Ω at `t0`
    pub r0: f64,
    /// K
    pub t0: f64,
    /// K
    pub beta: f64,
    pub orientation: DividerOrientation,
}

impl Default for ThermistorCal {
    fn default() -> Self {
        Self {
            r_fixed: 10_000.0,
            v_supply: 3.3,
            r0: 10_000.0,
            t0: 298.15,
            beta: 3950.0,
            orientation: DividerOrientation::FixedLow,
        }
    }
}

impl ThermistorCal {
    pub fn validate(&self) -> Result<(), ConvertError> {
        for (name, v) in [
            ("r_fixed", self.r_fixed),
            ("v_supply", self.v_supply),
            ("r0", self.r0),
            ("t0", self.t0),
            ("beta", self.beta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConvertError::Calibration(format!(
                    "thermistor.{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Power-monitor register scaling. The power and energy factors are fixed
/// multiples of the current LSB (3.2x and 16x3.2x), so only the current and
/// bus-voltage LSBs are free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ElectricalCalParams", into = "ElectricalCalParams")]
pub struct ElectricalCal {
    current_lsb: f64,
    bus_voltage_lsb: f64,
    power_factor: f64,
    energy_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElectricalCalParams {
    /// A per count
    pub current_lsb: f64,
    /// V per count
    pub bus_voltage_lsb: f64,
}

impl Default for ElectricalCalParams {
    fn default() -> Self {
        Self {
            current_lsb: 10e-6,
            bus_voltage_lsb: 195.3125e-6,
        }
    }
}

impl TryFrom<ElectricalCalParams> for ElectricalCal {
    type Error = ConvertError;
    fn try_from(p: ElectricalCalParams) -> Result<Self, Self::Error> {
        ElectricalCal::new(p.current_lsb, p.bus_voltage_lsb)
    }
}

impl From<ElectricalCal> for ElectricalCalParams {
    fn from(c: ElectricalCal) -> Self {
        Self {
            current_lsb: c.current_lsb,
            bus_voltage_lsb: c.bus_voltage_lsb,
        }
    }
}

impl Default for ElectricalCal {
    fn default() -> Self {
        ElectricalCalParams::default().try_into().unwrap()
    }
}

impl ElectricalCal {
    pub const POWER_RATIO: f64 = 3.2;
    pub const ENERGY_RATIO: f64 = 16.0;

    pub fn new(current_lsb: f64, bus_voltage_lsb: f64) -> Result<Self, ConvertError> {
        for (name, v) in [("current_lsb", current_lsb), ("bus_voltage_lsb", bus_voltage_lsb)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConvertError::Calibration(format!(
                    "electrical.{name} must be positive, got {v}"
                )));
            }
        }
        let power_factor = Self::POWER_RATIO * current_lsb;
        Ok(Self {
            current_lsb,
            bus_voltage_lsb,
            power_factor,
            energy_factor: Self::ENERGY_RATIO * power_factor,
        })
    }

    pub fn current_lsb(&self) -> f64 {
        self.current_lsb
    }
    pub fn bus_voltage_lsb(&self) -> f64 {
        self.bus_voltage_lsb
    }
    pub fn power_factor(&self) -> f64 {
        self.power_factor
    }
    pub fn energy_factor(&self) -> f64 {
        self.energy_factor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanePoint {
    /// Expected divider voltage, V.
    pub volts: f64,
    /// Direction, degrees clockwise from north.
    pub degrees: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeteoCal {
    /// (W/m²)/V
    pub irradiance_gain: f64,
    /// (m/s)/Hz
    pub wind_speed_per_hz: f64,
    /// mm per bucket tip
    pub rain_mm_per_tip: f64,
    pub vane_lookup: Vec<VanePoint>,
}

impl Default for MeteoCal {
    fn default() -> Self {
        Self {
            irradiance_gain: 1000.0,
            wind_speed_per_hz: 0.667,
            rain_mm_per_tip: 0.2794,
            vane_lookup: default_vane_lookup(3.3, 10_000.0),
        }
    }
}

/// Resistor-ladder vane read through a pull-up. Resistances per 22.5° step
/// from north, as used by the common cup/vane/bucket weather kits.
pub fn default_vane_lookup(v_supply: f64, pull_up: f64) -> Vec<VanePoint> {
    const LADDER: [f64; 16] = [
        33_000.0, 6_570.0, 8_200.0, 891.0, 1_000.0, 688.0, 2_200.0, 1_410.0, 3_900.0, 3_140.0,
        16_000.0, 14_120.0, 120_000.0, 42_120.0, 64_900.0, 21_880.0,
    ];
    LADDER
        .iter()
        .enumerate()
        .map(|(i, r)| VanePoint {
            volts: v_supply * r / (r + pull_up),
            degrees: i as f64 * 22.5,
        })
        .collect()
}

impl MeteoCal {
    pub fn validate(&self) -> Result<(), ConvertError> {
        let bad = |m: String| Err(ConvertError::Calibration(m));
        if !(self.irradiance_gain.is_finite() && self.irradiance_gain > 0.0) {
            return bad(format!("meteo.irradiance_gain must be positive, got {}", self.irradiance_gain));
        }
        if !(self.wind_speed_per_hz.is_finite() && self.wind_speed_per_hz > 0.0) {
            return bad(format!("meteo.wind_speed_per_hz must be positive, got {}", self.wind_speed_per_hz));
        }
        if !(self.rain_mm_per_tip.is_finite() && self.rain_mm_per_tip > 0.0) {
            return bad(format!("meteo.rain_mm_per_tip must be positive, got {}", self.rain_mm_per_tip));
        }
        if self.vane_lookup.is_empty() {
            return bad("meteo.vane_lookup is empty".into());
        }
        for (i, p) in self.vane_lookup.iter().enumerate() {
            if !(0.0..360.0).contains(&p.degrees) {
                return bad(format!("meteo.vane_lookup[{i}] direction {} outside [0, 360)", p.degrees));
            }
            if self.vane_lookup[..i].iter().any(|q| q.volts == p.volts) {
                return bad(format!("meteo.vane_lookup[{i}] voltage {} duplicated", p.volts));
            }
        }
        Ok(())
    }
}

/// `max(code, 0) * full_scale / 32768`. Single-ended inputs cannot go below
/// ground, so negative codes are noise.
pub fn adc_code_to_voltage(code: i16, full_scale: f64) -> f64 {
    (code.max(0) as f64) * full_scale / ADC_FULL_SCALE_COUNTS
}

pub fn divider_to_resistance(v_out: f64, cal: &ThermistorCal) -> Result<f64, ConvertError> {
    if !(v_out > 0.0 && v_out < cal.v_supply) {
        return Err(ConvertError::Range {
            v_out,
            v_supply: cal.v_supply,
        });
    }
    Ok(match cal.orientation {
        DividerOrientation::FixedLow => cal.r_fixed * (cal.v_supply / v_out - 1.0),
        DividerOrientation::FixedHigh => cal.r_fixed * v_out / (cal.v_supply - v_out),
    })
}

/// Beta equation: `1/T = 1/T0 + ln(R/R0)/B`, returned in °C.
pub fn resistance_to_temperature(r: f64, cal: &ThermistorCal) -> f64 {
    let inv_t = 1.0 / cal.t0 + (r / cal.r0).ln() / cal.beta;
    1.0 / inv_t - KELVIN_OFFSET
}

/// Full thermistor chain from an ADC code.
pub fn thermistor_code_to_celsius(
    code: i16,
    full_scale: f64,
    cal: &ThermistorCal,
) -> Result<f64, ConvertError> {
    let v = adc_code_to_voltage(code, full_scale);
    divider_to_resistance(v, cal).map(|r| resistance_to_temperature(r, cal))
}

pub fn differential_to_irradiance(v_plus: f64, v_minus: f64, cal: &MeteoCal) -> f64 {
    (cal.irradiance_gain * (v_plus - v_minus)).max(0.0)
}

pub fn pulses_to_wind_speed(pulses: u64, window_s: f64, cal: &MeteoCal) -> Result<f64, ConvertError> {
    if window_s.is_nan() || window_s <= 0.0 {
        return Err(ConvertError::Window(window_s));
    }
    Ok(cal.wind_speed_per_hz * pulses as f64 / window_s)
}

pub fn tips_to_rain_depth(tips: u64, cal: &MeteoCal) -> f64 {
    tips as f64 * cal.rain_mm_per_tip
}

/// Nearest lookup entry by voltage; ties go to the smaller direction.
pub fn vane_voltage_to_direction(v: f64, cal: &MeteoCal) -> f64 {
    cal.vane_lookup
        .iter()
        .min_by(|a, b| {
            let da = (a.volts - v).abs();
            let db = (b.volts - v).abs();
            da.total_cmp(&db).then(a.degrees.total_cmp(&b.degrees))
        })
        .map(|p| p.degrees)
        .expect("vane lookup is non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PanelSi {
    pub volts: f64,
    pub amps: f64,
    pub watts: f64,
    pub joules: f64,
}

/// All calibration blocks together with the ADC range they refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    /// ADC programmable-gain full scale, V.
    pub adc_full_scale: f64,
    pub thermistor: ThermistorCal,
    pub electrical: ElectricalCal,
    pub meteo: MeteoCal,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            adc_full_scale: 4.096,
            thermistor: ThermistorCal::default(),
            electrical: ElectricalCal::default(),
            meteo: MeteoCal::default(),
        }
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<(), ConvertError> {
        if !(self.adc_full_scale.is_finite() && self.adc_full_scale > 0.0) {
            return Err(ConvertError::Calibration(format!(
                "adc_full_scale must be positive, got {}",
                self.adc_full_scale
            )));
        }
        self.thermistor.validate()?;
        self.meteo.validate()
    }
}

pub fn power_registers_to_si(raw: &RawPowerReading, cal: &ElectricalCal) -> PanelSi {
    PanelSi {
        volts: raw.bus_voltage_code as f64 * cal.bus_voltage_lsb,
        amps: raw.current_code as f64 * cal.current_lsb,
        watts: raw.power_code as f64 * cal.power_factor,
        joules: raw.energy_code as f64 * cal.energy_factor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent inverse of the beta equation.
    fn oracle_resistance(t_celsius: f64, cal: &ThermistorCal) -> f64 {
        let t = t_celsius + 273.15;
        cal.r0 * (cal.beta * (1.0 / t - 1.0 / cal.t0)).exp()
    }

    #[test]
    fn adc_voltage_examples() {
        assert_eq!(adc_code_to_voltage(0, 4.096), 0.0);
        assert_eq!(adc_code_to_voltage(16384, 4.096), 2.048);
        assert_eq!(adc_code_to_voltage(-12, 4.096), 0.0);
    }

    #[test]
    fn divider_examples() {
        let cal = ThermistorCal::default();
        assert!((divider_to_resistance(cal.v_supply / 2.0, &cal).unwrap() - 10_000.0).abs() < 1e-9);
        let near_top = divider_to_resistance(cal.v_supply * (1.0 - 1e-9), &cal).unwrap();
        assert!(near_top < 1e-3);
        assert!(matches!(divider_to_resistance(0.0, &cal), Err(ConvertError::Range { .. })));
        assert!(matches!(divider_to_resistance(cal.v_supply, &cal), Err(ConvertError::Range { .. })));
    }

    #[test]
    fn high_side_orientation_mirrors() {
        let low = ThermistorCal::default();
        let high = ThermistorCal {
            orientation: DividerOrientation::FixedHigh,
            ..low
        };
        let v = 1.0;
        let r_low = divider_to_resistance(v, &low).unwrap();
        let r_high = divider_to_resistance(low.v_supply - v, &high).unwrap();
        assert!((r_low - r_high).abs() < 1e-9);
    }

    #[test]
    fn reference_point_is_25c() {
        let cal = ThermistorCal::default();
        assert!((resistance_to_temperature(10_000.0, &cal) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn fifty_degrees_from_oracle() {
        let cal = ThermistorCal::default();
        let r50 = oracle_resistance(50.0, &cal);
        assert!((r50 - 3588.3).abs() < 0.5, "oracle R(50 °C) = {r50}");
        assert!((resistance_to_temperature(3588.3, &cal) - 50.0).abs() < 0.01);
    }

    #[test]
    fn ntc_monotone() {
        let cal = ThermistorCal::default();
        let mut prev = f64::INFINITY;
        for r in (1..200).map(|k| k as f64 * 500.0) {
            let t = resistance_to_temperature(r, &cal);
            assert!(t < prev);
            prev = t;
        }
    }

    #[test]
    fn irradiance_examples() {
        let cal = MeteoCal::default();
        assert_eq!(differential_to_irradiance(0.3, 0.3, &cal), 0.0);
        assert!((differential_to_irradiance(1.1, 0.1, &cal) - 1000.0).abs() < 1e-9);
        assert_eq!(differential_to_irradiance(0.1, 0.2, &cal), 0.0);
    }

    #[test]
    fn wind_examples() {
        let cal = MeteoCal::default();
        assert_eq!(pulses_to_wind_speed(0, 60.0, &cal).unwrap(), 0.0);
        let one = pulses_to_wind_speed(60, 60.0, &cal).unwrap();
        assert!((one - 0.667).abs() < 1e-12);
        assert_eq!(pulses_to_wind_speed(120, 60.0, &cal).unwrap(), 2.0 * one);
        assert!(pulses_to_wind_speed(5, 0.0, &cal).is_err());
    }

    #[test]
    fn rain_examples() {
        let cal = MeteoCal::default();
        assert_eq!(tips_to_rain_depth(0, &cal), 0.0);
        assert!((tips_to_rain_depth(10, &cal) - 2.794).abs() < 1e-12);
        let split = tips_to_rain_depth(3, &cal) + tips_to_rain_depth(7, &cal);
        assert!((split - tips_to_rain_depth(10, &cal)).abs() < 1e-12);
    }

    #[test]
    fn vane_exact_and_tie() {
        let cal = MeteoCal::default();
        let ninety = cal.vane_lookup.iter().find(|p| p.degrees == 90.0).unwrap().volts;
        assert_eq!(vane_voltage_to_direction(ninety, &cal), 90.0);

        let tie = MeteoCal {
            vane_lookup: vec![
                VanePoint { volts: 1.0, degrees: 270.0 },
                VanePoint { volts: 2.0, degrees: 45.0 },
            ],
            ..MeteoCal::default()
        };
        assert_eq!(vane_voltage_to_direction(1.5, &tie), 45.0);
    }

    #[test]
    fn default_vane_table_is_valid() {
        let cal = MeteoCal::default();
        cal.validate().unwrap();
        assert_eq!(cal.vane_lookup.len(), 16);
    }

    #[test]
    fn power_scaling() {
        let cal = ElectricalCal::new(10e-6, 195.3125e-6).unwrap();
        assert_eq!(power_registers_to_si(&RawPowerReading::default(), &cal), PanelSi::default());
        let raw = RawPowerReading {
            bus_voltage_code: 0,
            current_code: 1000,
            power_code: 10,
            energy_code: 10,
        };
        let si = power_registers_to_si(&raw, &cal);
        assert!((si.amps - 0.010).abs() < 1e-15);
        let doubled = ElectricalCal::new(20e-6, 195.3125e-6).unwrap();
        let si2 = power_registers_to_si(&raw, &doubled);
        assert!((si2.amps - 2.0 * si.amps).abs() < 1e-15);
        assert!((si2.watts - 2.0 * si.watts).abs() < 1e-15);
        assert!((si2.joules - 2.0 * si.joules).abs() < 1e-12);
    }

    #[test]
    fn electrical_ratios() {
        let cal = ElectricalCal::default();
        assert!((cal.power_factor() - 3.2 * cal.current_lsb()).abs() < 1e-18);
        assert!((cal.energy_factor() - 16.0 * cal.power_factor()).abs() < 1e-18);
        assert!(ElectricalCal::new(0.0, 1.0).is_err());
    }
}
