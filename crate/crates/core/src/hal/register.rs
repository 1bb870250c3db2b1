//! Register-level backend for the real bus.
//!
//! No platform driver is bundled. A deployment supplies an [`I2cBus`] (e.g. a
//! `/dev/i2c-1` binding) and a [`GpioPort`] (select lines and the single-wire
//! ambient sensor), and wires its pulse-edge interrupts to the shared
//! [`PulseCounterBank`]. Everything above that line lives here:
//!
//! * ADC (16-bit, address 0x48 by default): single-shot conversions through
//!   the config register (0x01), result in the conversion register (0x00),
//!   big-endian two's complement. Single-ended inputs use mux codes
//!   `0b100 + n`; 64 SPS gives the ~16 ms conversion window.
//! * Power monitors (20-bit, 0x40/0x41): CONFIG (0x00), ADC_CONFIG (0x01),
//!   SHUNT_CAL (0x02), VBUS (0x05, 24-bit, value in bits 23..4), CURRENT
//!   (0x07, 24-bit signed, value in bits 23..4), POWER (0x08, 24-bit) and
//!   ENERGY (0x09, 40-bit). All registers are big-endian.

use std::sync::Arc;

use thiserror::Error;

use super::{
    AdcInput, AmbientReading, Backend, HalError, InitSettings, PulseCounterBank, PulseCounters,
    RawPowerReading,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct PortError(pub String);

pub trait I2cBus: Send {
    fn write(&mut self, address: u8, bytes: &[u8]) -> Result<(), PortError>;
    fn write_read(&mut self, address: u8, bytes: &[u8], buffer: &mut [u8]) -> Result<(), PortError>;
}

pub trait GpioPort: Send {
    /// Drives SEL0..SEL2 with the low three bits of `code`.
    fn set_select_lines(&mut self, code: u8) -> Result<(), PortError>;
    /// One complete single-wire transaction, already checksummed and decoded.
    /// A timeout or checksum failure is an `Err`.
    fn read_ambient(&mut self) -> Result<AmbientReading, PortError>;
    fn release(&mut self);
}

pub const ADC_DEFAULT_ADDRESS: u8 = 0x48;

pub mod ads {
    pub const REG_CONVERSION: u8 = 0x00;
    pub const REG_CONFIG: u8 = 0x01;
    pub const OS_SINGLE: u16 = 0x8000;
    pub const MODE_SINGLE_SHOT: u16 = 0x0100;
    pub const DR_64SPS: u16 = 0b011 << 5;
    pub const COMP_DISABLE: u16 = 0x0003;

    /// PGA bits for a full-scale range in volts.
    pub fn pga_bits(full_scale: f64) -> Option<u16> {
        const RANGES: [(f64, u16); 6] = [
            (6.144, 0),
            (4.096, 1),
            (2.048, 2),
            (1.024, 3),
            (0.512, 4),
            (0.256, 5),
        ];
        RANGES
            .iter()
            .find(|(fs, _)| (fs - full_scale).abs() < 1e-9)
            .map(|(_, b)| b << 9)
    }

    /// Single-ended mux field for input `n` (AINn vs GND).
    pub fn mux_bits(n: u8) -> u16 {
        ((0b100 + n as u16) & 0b111) << 12
    }
}

pub mod ina {
    pub const REG_CONFIG: u8 = 0x00;
    pub const REG_ADC_CONFIG: u8 = 0x01;
    pub const REG_SHUNT_CAL: u8 = 0x02;
    pub const REG_VBUS: u8 = 0x05;
    pub const REG_CURRENT: u8 = 0x07;
    pub const REG_POWER: u8 = 0x08;
    pub const REG_ENERGY: u8 = 0x09;
    pub const CONFIG_RST: u16 = 1 << 15;
    pub const CONFIG_RSTACC: u16 = 1 << 14;
    /// Continuous bus, shunt and temperature conversions.
    pub const MODE_CONTINUOUS_ALL: u16 = 0xF << 12;

    pub fn conversion_time_bits(us: u32) -> Option<u16> {
        [50, 84, 150, 280, 540, 1052, 2074, 4120]
            .iter()
            .position(|&t| t == us)
            .map(|p| p as u16)
    }

    pub fn averaging_bits(count: u16) -> Option<u16> {
        [1, 4, 16, 64, 128, 256, 512, 1024]
            .iter()
            .position(|&c| c == count)
            .map(|p| p as u16)
    }

    pub fn adc_config(conversion_us: u32, averaging: u16) -> Option<u16> {
        let ct = conversion_time_bits(conversion_us)?;
        let avg = averaging_bits(averaging)?;
        Some(MODE_CONTINUOUS_ALL | ct << 9 | ct << 6 | ct << 3 | avg)
    }

    /// SHUNT_CAL for ADCRANGE = 0.
    pub fn shunt_cal(current_lsb: f64, shunt_ohms: f64) -> u16 {
        (13107.2e6 * current_lsb * shunt_ohms).round().clamp(0.0, 32767.0) as u16
    }
}

pub struct RegisterBackend<B, G> {
    i2c: B,
    gpio: G,
    pulses: Arc<PulseCounterBank>,
    adc_address: u8,
    adc_config: u16,
}

impl<B: I2cBus, G: GpioPort> RegisterBackend<B, G> {
    pub fn new(i2c: B, gpio: G, pulses: Arc<PulseCounterBank>) -> Self {
        Self {
            i2c,
            gpio,
            pulses,
            adc_address: ADC_DEFAULT_ADDRESS,
            adc_config: 0,
        }
    }

    pub fn with_adc_address(mut self, address: u8) -> Self {
        self.adc_address = address;
        self
    }

    pub fn into_parts(self) -> (B, G) {
        (self.i2c, self.gpio)
    }

    fn write16(&mut self, addr: u8, reg: u8, value: u16) -> Result<(), HalError> {
        let [hi, lo] = value.to_be_bytes();
        self.i2c
            .write(addr, &[reg, hi, lo])
            .map_err(|e| HalError::BusFault(format!("write {addr:#04x}/{reg:#04x}: {e}")))
    }

    fn read_be(&mut self, addr: u8, reg: u8, width: usize) -> Result<u64, HalError> {
        let mut buf = [0u8; 8];
        self.i2c
            .write_read(addr, &[reg], &mut buf[..width])
            .map_err(|e| HalError::BusFault(format!("read {addr:#04x}/{reg:#04x}: {e}")))?;
        Ok(buf[..width].iter().fold(0u64, |acc, b| acc << 8 | *b as u64))
    }
}

impl<B: I2cBus, G: GpioPort> Backend for RegisterBackend<B, G> {
    fn init(&mut self, settings: &InitSettings) -> Result<(), HalError> {
        let pga = ads::pga_bits(settings.adc_full_scale).ok_or_else(|| {
            HalError::Precondition(format!(
                "unsupported ADC full scale {} V",
                settings.adc_full_scale
            ))
        })?;
        self.adc_config = ads::MODE_SINGLE_SHOT | pga | ads::DR_64SPS | ads::COMP_DISABLE;
        self.write16(self.adc_address, ads::REG_CONFIG, self.adc_config)?;

        let adc_config = ina::adc_config(settings.power_conversion_us, settings.power_averaging)
            .ok_or_else(|| {
                HalError::Precondition(format!(
                    "unsupported power monitor timing {} µs x{}",
                    settings.power_conversion_us, settings.power_averaging
                ))
            })?;
        let cal = ina::shunt_cal(settings.current_lsb, settings.shunt_ohms);
        for &addr in &settings.power_monitors {
            self.write16(addr, ina::REG_CONFIG, ina::CONFIG_RST)?;
            self.write16(addr, ina::REG_ADC_CONFIG, adc_config)?;
            self.write16(addr, ina::REG_SHUNT_CAL, cal)?;
        }
        Ok(())
    }

    fn set_select_lines(&mut self, code: u8) -> Result<(), HalError> {
        self.gpio
            .set_select_lines(code & 0b111)
            .map_err(|e| HalError::BusFault(format!("select lines: {e}")))
    }

    fn start_conversion(&mut self, input: AdcInput) -> Result<(), HalError> {
        let config = self.adc_config | ads::OS_SINGLE | ads::mux_bits(input.index());
        self.write16(self.adc_address, ads::REG_CONFIG, config)
    }

    fn fetch_conversion(&mut self, _input: AdcInput) -> Result<i16, HalError> {
        let raw = self.read_be(self.adc_address, ads::REG_CONVERSION, 2)?;
        Ok(raw as u16 as i16)
    }

    fn read_power_monitor(&mut self, address: u8) -> Result<RawPowerReading, HalError> {
        let vbus = self.read_be(address, ina::REG_VBUS, 3)?;
        let current = self.read_be(address, ina::REG_CURRENT, 3)?;
        let power = self.read_be(address, ina::REG_POWER, 3)?;
        let energy = self.read_be(address, ina::REG_ENERGY, 5)?;
        // 24-bit two's complement, value left-aligned in bits 23..4.
        let current = ((current as u32) << 8) as i32 >> 12;
        Ok(RawPowerReading {
            bus_voltage_code: (vbus >> 4) as u32,
            current_code: current,
            power_code: power as u32,
            energy_code: energy,
        })
    }

    fn reset_energy(&mut self, address: u8) -> Result<(), HalError> {
        self.write16(address, ina::REG_CONFIG, ina::CONFIG_RSTACC)
    }

    fn read_ambient(&mut self) -> Result<AmbientReading, HalError> {
        self.gpio
            .read_ambient()
            .map_err(|e| HalError::ReadTimeout(format!("ambient sensor: {e}")))
    }

    fn poll_pulse_counters(&mut self) -> PulseCounters {
        self.pulses.take()
    }

    fn release(&mut self) {
        self.gpio.release();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[derive(Default)]
    struct MockI2c {
        writes: Vec<(u8, Vec<u8>)>,
        registers: HashMap<(u8, u8), Vec<u8>>,
        fail: bool,
    }

    impl I2cBus for MockI2c {
        fn write(&mut self, address: u8, bytes: &[u8]) -> Result<(), PortError> {
            if self.fail {
                return Err(PortError("nack".into()));
            }
            self.writes.push((address, bytes.to_vec()));
            Ok(())
        }

        fn write_read(&mut self, address: u8, bytes: &[u8], buffer: &mut [u8]) -> Result<(), PortError> {
            if self.fail {
                return Err(PortError("nack".into()));
            }
            let data = self
                .registers
                .get(&(address, bytes[0]))
                .ok_or_else(|| PortError("no such register".into()))?;
            buffer.copy_from_slice(&data[..buffer.len()]);
            Ok(())
        }
    }

    #[derive(Default)]
    struct MockGpio {
        select: Vec<u8>,
    }

    impl GpioPort for MockGpio {
        fn set_select_lines(&mut self, code: u8) -> Result<(), PortError> {
            self.select.push(code);
            Ok(())
        }
        fn read_ambient(&mut self) -> Result<AmbientReading, PortError> {
            Err(PortError("timeout".into()))
        }
        fn release(&mut self) {}
    }

    fn backend() -> RegisterBackend<MockI2c, MockGpio> {
        RegisterBackend::new(MockI2c::default(), MockGpio::default(), Arc::new(PulseCounterBank::new()))
    }

    #[test]
    fn init_writes_expected_configuration() {
        let mut b = backend();
        b.init(&InitSettings::default()).unwrap();
        let (i2c, _) = b.into_parts();
        // ADC: single shot, ±4.096 V, 64 SPS, comparator off.
        assert_eq!(i2c.writes[0], (0x48, vec![0x01, 0x03, 0x63]));
        // Monitor 0x40: reset, averaging 1024 at 1052 µs, shunt cal.
        assert_eq!(i2c.writes[1], (0x40, vec![0x00, 0x80, 0x00]));
        assert_eq!(i2c.writes[2], (0x40, vec![0x01, 0xFB, 0x6F]));
        let cal = ina::shunt_cal(10e-6, 0.015);
        assert_eq!(cal, 1966);
        assert_eq!(i2c.writes[3], (0x40, vec![0x02, (cal >> 8) as u8, cal as u8]));
        assert_eq!(i2c.writes[4].0, 0x41);
        assert_eq!(i2c.writes.len(), 7);
    }

    #[test]
    fn conversion_selects_single_ended_input() {
        let mut b = backend();
        b.init(&InitSettings::default()).unwrap();
        b.start_conversion(AdcInput::A3).unwrap();
        b.i2c.registers.insert((0x48, 0x00), vec![0x40, 0x00]);
        assert_eq!(b.fetch_conversion(AdcInput::A3).unwrap(), 16384);
        let last = b.i2c.writes.last().unwrap();
        // OS | MUX=111 | PGA=001 | single | 64 SPS | comp off
        assert_eq!(last, &(0x48, vec![0x01, 0xF3, 0x63]));
    }

    #[test]
    fn power_registers_decode() {
        let mut b = backend();
        // VBUS = 0x12345 << 4
        b.i2c.registers.insert((0x40, 0x05), vec![0x12, 0x34, 0x50]);
        // CURRENT = -2 << 4 in 24-bit two's complement
        b.i2c.registers.insert((0x40, 0x07), vec![0xFF, 0xFF, 0xE0]);
        b.i2c.registers.insert((0x40, 0x08), vec![0x00, 0x01, 0x00]);
        b.i2c.registers.insert((0x40, 0x09), vec![0x01, 0x00, 0x00, 0x00, 0x02]);
        let r = b.read_power_monitor(0x40).unwrap();
        assert_eq!(r.bus_voltage_code, 0x12345);
        assert_eq!(r.current_code, -2);
        assert_eq!(r.power_code, 256);
        assert_eq!(r.energy_code, (1u64 << 32) + 2);
    }

    #[test]
    fn bus_errors_map_to_bus_fault() {
        let mut b = backend();
        b.i2c.fail = true;
        assert!(matches!(b.read_power_monitor(0x41), Err(HalError::BusFault(_))));
        assert!(matches!(b.read_ambient(), Err(HalError::ReadTimeout(_))));
    }
}
