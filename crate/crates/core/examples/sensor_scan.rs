//! One thermistor scan and one irradiance pass against the simulated bus,
//! with the recorded call log showing the settling and conversion waits.
//!
//! cargo run --example sensor_scan

use std::sync::Arc;

use chrono::NaiveDate;
use pvdaq::acquire::scan_thermistors;
use pvdaq::acquire::scheduler::read_irradiance_pass;
use pvdaq::clock::{Clock, SimClock};
use pvdaq::convert::Calibration;
use pvdaq::hal::fault::FaultScript;
use pvdaq::hal::sim::{EnvironmentParams, SimBackend, SimWorld};
use pvdaq::hal::{CallLog, ChannelMap, Hal, InitSettings, Timing};

fn main() {
    let noon = NaiveDate::from_ymd_opt(2025, 6, 21).unwrap().and_hms_opt(12, 0, 0).unwrap();
    let clock = Arc::new(SimClock::new(noon));
    let cal = Calibration::default();
    let world = SimWorld::new(EnvironmentParams::default(), cal.clone(), ChannelMap::default(), 1, FaultScript::empty(), noon)
        .shared();
    let calls = CallLog::new();
    let mut hal = Hal::new(
        Box::new(SimBackend::new(world, clock.clone())),
        clock.clone(),
        ChannelMap::default(),
        Timing::default(),
        InitSettings::default(),
    )
    .with_call_log(calls.clone());
    hal.init().expect("init");
    calls.clear();

    let t0 = clock.now();
    let scan = scan_thermistors(&mut hal, &cal);
    let scanned = clock.now() - t0;
    for (i, v) in scan.values.iter().enumerate() {
        print!("T{i}={:.2} ", v.unwrap_or(f64::NAN));
    }
    println!("\nscan took {} ms of simulated time", scanned.num_milliseconds());

    let t1 = clock.now();
    let g = read_irradiance_pass(&mut hal, &cal).expect("irradiance");
    println!("irradiance {g:.1} W/m2 in {} ms", (clock.now() - t1).num_milliseconds());

    println!("\nlast calls:");
    let records = calls.records();
    for rec in records.iter().rev().take(4).rev() {
        println!("  {}  {:?}", rec.at.format("%H:%M:%S%.3f"), rec.call);
    }
}
