//! Injects a crash at every step of a state write and shows what a reboot
//! would load.
//!
//! cargo run --example crash_safe_state

use std::collections::BTreeMap;

use chrono::NaiveDate;
use pvdaq::store::atomic::CrashPoint;
use pvdaq::store::state::{load_state, write_state, write_state_with, SessionState, StateLoad};

fn main() {
    let t = NaiveDate::from_ymd_opt(2025, 3, 10).unwrap().and_hms_opt(9, 0, 0).unwrap();
    let old = SessionState::idle(t);
    let mut new = old.clone();
    new.recording = true;
    new.rows_written = 241;
    let encoded = new.encode();
    println!("state file:\n{encoded}");

    let mut outcomes: BTreeMap<&str, usize> = BTreeMap::new();
    for cp in CrashPoint::all(encoded.len()) {
        let dir = tempfile::tempdir().expect("tempdir");
        write_state(dir.path(), &old).expect("seed state");
        let _ = write_state_with(dir.path(), &new, Some(cp));
        let seen = match load_state(dir.path()) {
            StateLoad::Valid(s) if s == new => "new state",
            StateLoad::Valid(s) if s == old => "previous state",
            StateLoad::Valid(_) => "some other state",
            StateLoad::Absent => "nothing",
            StateLoad::Corrupt(_) => "corrupt",
        };
        *outcomes.entry(seen).or_default() += 1;
    }
    for (seen, n) in outcomes {
        println!("{n:>4} crash points -> reboot sees {seen}");
    }
}
