//! Raw power-monitor registers and their scaled values, including the
//! energy offset that carries across an accumulator reset.
//!
//! cargo run --example power_monitor

use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use pvdaq::clock::SimClock;
use pvdaq::convert::{power_registers_to_si, Calibration};
use pvdaq::hal::fault::FaultScript;
use pvdaq::hal::sim::{EnvironmentParams, SimBackend, SimWorld};
use pvdaq::hal::{ChannelMap, Hal, InitSettings, Timing};

fn main() {
    let t = NaiveDate::from_ymd_opt(2025, 6, 21).unwrap().and_hms_opt(11, 0, 0).unwrap();
    let clock = Arc::new(SimClock::new(t));
    let cal = Calibration::default();
    let world = SimWorld::new(EnvironmentParams::default(), cal.clone(), ChannelMap::default(), 5, FaultScript::empty(), t)
        .shared();
    let mut hal = Hal::new(
        Box::new(SimBackend::new(world, clock.clone())),
        clock.clone(),
        ChannelMap::default(),
        Timing::default(),
        InitSettings::default(),
    );
    hal.init().expect("init");

    let mut offset = 0.0;
    for minute in 0..4 {
        if minute == 2 {
            // What a reinit does: the accumulator restarts, the offset keeps
            // the reported energy monotonic.
            let raw = hal.read_power_monitor(0x40).unwrap();
            offset += power_registers_to_si(&raw, &cal.electrical).joules;
            hal.reset_energy(0x40).unwrap();
            println!("-- energy accumulator reset, offset {offset:.1} J");
        }
        let raw = hal.read_power_monitor(0x40).unwrap();
        let si = power_registers_to_si(&raw, &cal.electrical);
        println!(
            "{minute}: codes V={} I={} P={} E={}  ->  {:.3} V {:.3} A {:.2} W {:.1} J",
            raw.bus_voltage_code,
            raw.current_code,
            raw.power_code,
            raw.energy_code,
            si.volts,
            si.amps,
            si.watts,
            si.joules + offset
        );
        clock.advance(Duration::from_secs(60));
    }
}
