//! Scenario replays through the library: determinism and the power-cycle
//! continuity property.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use chrono::{NaiveDateTime, NaiveTime, TimeDelta};
use proptest::prelude::*;

use pvdaq::config::RunConfig;
use pvdaq::daemon::scenario::{find_scenario, run_simulation, ScenarioReport, SimulationSetup};
use pvdaq::hal::fault::FaultScript;
use pvdaq::store::csv::read_archive_dir;

fn replay(name: &str, seed: u64, out: &Path) -> ScenarioReport {
    let mut cfg = RunConfig::default();
    cfg.sim.seed = seed;
    let setup = SimulationSetup::builtin(find_scenario(name).unwrap(), cfg, out).unwrap();
    run_simulation(&setup).unwrap()
}

fn archive_bytes(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(out.join("archive"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_gives_identical_report_and_archive() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = replay("power-cycle-midday", 11, a.path());
    let rb = replay("power-cycle-midday", 11, b.path());
    assert_eq!(ra, rb);
    assert_eq!(archive_bytes(a.path()), archive_bytes(b.path()));
    assert_eq!(
        fs::read(a.path().join("sink_export.lp")).unwrap(),
        fs::read(b.path().join("sink_export.lp")).unwrap()
    );
}

#[test]
fn different_seed_changes_the_measurements() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    replay("clean-day", 1, a.path());
    replay("clean-day", 2, b.path());
    assert_ne!(archive_bytes(a.path()), archive_bytes(b.path()));
}

const SPAN_START: (u32, u32) = (10, 0);
const SPAN_END: (u32, u32) = (13, 0);

fn span_setup(out: &Path, script: &str) -> SimulationSetup {
    let mut setup = SimulationSetup::builtin(find_scenario("clean-day").unwrap(), RunConfig::default(), out).unwrap();
    let at = |(h, m): (u32, u32)| setup.date.and_time(NaiveTime::from_hms_opt(h, m, 0).unwrap());
    setup.start = at(SPAN_START);
    setup.end = at(SPAN_END);
    setup.script = FaultScript::parse(script, setup.date).unwrap();
    setup
}

fn row_times(out: &Path) -> Vec<NaiveDateTime> {
    read_archive_dir(&out.join("archive")).unwrap().into_iter().map(|f| f.timestamp).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// A power loss at `t` for `d` seconds inside the window removes exactly
    /// the minutes in `[t, t + d)` from an uninterrupted run, and leaves
    /// every earlier row untouched.
    #[test]
    fn power_cycle_only_removes_the_outage(offset_s in 600u32..6000, down_s in 1u32..2400) {
        let clean_dir = tempfile::tempdir().unwrap();
        let clean = span_setup(clean_dir.path(), "");
        run_simulation(&clean).unwrap();
        let clean_rows = read_archive_dir(&clean_dir.path().join("archive")).unwrap();

        let t = clean.start + TimeDelta::seconds(offset_s as i64);
        let script = format!(
            "[[fault]]\nat = \"{}\"\nkind = \"power_cycle\"\ndown_s = {down_s}\n",
            t.format("%H:%M:%S")
        );
        let cut_dir = tempfile::tempdir().unwrap();
        let report = run_simulation(&span_setup(cut_dir.path(), &script)).unwrap();
        prop_assert_eq!(report.decisions.last().unwrap().mode.to_string(), "RESUME");

        let back = t + TimeDelta::seconds(down_s as i64);
        let expected: BTreeSet<_> = clean_rows
            .iter()
            .map(|f| f.timestamp)
            .filter(|m| !(t <= *m && *m < back))
            .collect();
        let got = row_times(cut_dir.path());
        prop_assert_eq!(got.len(), expected.len(), "duplicate rows");
        prop_assert_eq!(got.into_iter().collect::<BTreeSet<_>>(), expected);

        let cut_rows = read_archive_dir(&cut_dir.path().join("archive")).unwrap();
        for (a, b) in clean_rows.iter().zip(&cut_rows).take_while(|(a, _)| a.timestamp < t) {
            prop_assert_eq!(a, b);
        }
    }
}
