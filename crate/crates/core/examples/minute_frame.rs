//! One minute of the 1 Hz sampler followed by frame assembly, printed as
//! the archive row it becomes.
//!
//! cargo run --example minute_frame

use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use chrono::{NaiveDate, TimeDelta};
use pvdaq::acquire::scheduler::assemble_minute_frame;
use pvdaq::acquire::{FastSampler, SessionCounters, SharedBuffers};
use pvdaq::clock::{Clock, SimClock};
use pvdaq::convert::Calibration;
use pvdaq::hal::fault::FaultScript;
use pvdaq::hal::sim::{EnvironmentParams, SimBackend, SimWorld};
use pvdaq::hal::{Bus, ChannelMap, Hal, InitSettings, Timing};
use pvdaq::ops_log::OpsLog;
use pvdaq::store::csv::{format_row, header_line};

fn main() {
    let start = NaiveDate::from_ymd_opt(2025, 6, 21).unwrap().and_hms_opt(13, 0, 0).unwrap();
    let clock = Arc::new(SimClock::new(start));
    let cal = Calibration::default();
    // T4 drops out at 13:00:40, so the frame at 13:01 carries it as a gap.
    let script = FaultScript::parse(
        "[[fault]]\nat = \"13:00:40\"\nkind = \"sensor_fail\"\ntarget = \"T4\"\nduration_s = 120\n",
        start.date(),
    )
    .unwrap();
    let world = SimWorld::new(EnvironmentParams::default(), cal.clone(), ChannelMap::default(), 9, script, start).shared();
    let mut hal = Hal::new(
        Box::new(SimBackend::new(world, clock.clone())),
        clock.clone(),
        ChannelMap::default(),
        Timing::default(),
        InitSettings::default(),
    );
    hal.init().expect("init");
    let bus = Bus::new(hal);
    let buffers = SharedBuffers::new();
    let logs = tempfile::tempdir().expect("tempdir");
    let log = OpsLog::open(logs.path(), clock.clone()).expect("log");
    let mut sampler = FastSampler::new(bus.clone(), cal.clone(), buffers.clone(), Arc::new(AtomicBool::new(true)), log);

    for s in 1..=60 {
        let t = start + TimeDelta::seconds(s);
        if clock.now() < t {
            clock.advance_to(t);
        }
        sampler.tick(t);
    }
    let at = start + TimeDelta::minutes(1);
    let mut session = SessionCounters::default();
    let assembled = assemble_minute_frame(at, &mut bus.lock(), &buffers, &cal, &mut session);
    println!("{}", header_line());
    println!("{}", format_row(&assembled.frame));
    println!(
        "valid {}/{}; flagged {:?}; cycle ok: {}",
        assembled.frame.valid_count(),
        pvdaq::acquire::FIELD_COUNT,
        assembled.frame.flags().iter().map(|f| f.to_string()).collect::<Vec<_>>(),
        assembled.cycle_ok
    );
}
