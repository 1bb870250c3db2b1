//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use pvdaq::acquire::scheduler::assemble_minute_frame;
use pvdaq::acquire::{FastSampler, RollingWindow, SessionCounters, SharedBuffers};
use pvdaq::clock::{Clock, SimClock};
use pvdaq::convert::{divider_to_resistance, resistance_to_temperature, Calibration, DividerOrientation, ThermistorCal};
use pvdaq::hal::fault::FaultScript;
use pvdaq::hal::sim::{EnvironmentParams, SimBackend, SimWorld};
use pvdaq::hal::{AdcInput, AdcSource, Bus, Call, CallLog, ChannelMap, Hal, InitSettings, MuxId, Timing};
use pvdaq::ops_log::OpsLog;
use pvdaq::recover::{CycleAction, ErrorCounter};
use pvdaq::store::atomic::CrashPoint;
use pvdaq::store::csv::{header_line, parse_row};
use pvdaq::store::state::{load_state, write_state, write_state_with, SessionState, StateLoad};

type Verdict = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().expect("tempdir")
}

struct Replay {
    out: PathBuf,
    report: Value,
    wall: Duration,
}

/// Runs the real binary from an empty working directory with no config.
fn simulate(scenario: &str, root: &Path) -> Result<Replay, String> {
    let out = root.join(scenario);
    let started = Instant::now();
    let res = Command::new(env!("CARGO_BIN_EXE_pvdaq"))
        .args(["simulate", scenario, "--out"])
        .arg(&out)
        .current_dir(root)
        .env_remove("DAQ_CONFIG")
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    let wall = started.elapsed();
    if !res.status.success() {
        return Err(format!(
            "simulate {scenario} exited {:?}: {}",
            res.status.code(),
            String::from_utf8_lossy(&res.stderr)
        ));
    }
    let text = fs::read_to_string(out.join("report.json")).map_err(|e| format!("report: {e}"))?;
    let report = serde_json::from_str(&text).map_err(|e| format!("report: {e}"))?;
    Ok(Replay { out, report, wall })
}

fn u(v: &Value) -> u64 {
    v.as_u64().unwrap_or(u64::MAX)
}

fn archive_files(out: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(out.join("archive"))
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    v.sort();
    v
}

// 1 ------------------------------------------------------------------------

fn channel_map_fidelity() -> Verdict {
    let started = Instant::now();
    let mut expected: BTreeSet<(u8, u8, String)> = BTreeSet::new();
    for code in 0..8 {
        expected.insert((1, code, format!("T{code}")));
        expected.insert((2, code, format!("T{}", code + 8)));
    }
    for code in 0..4 {
        expected.insert((3, code, format!("T{}", code + 16)));
    }
    expected.insert((3, 4, "IRR-".into()));
    expected.insert((3, 5, "IRR+".into()));

    let map = ChannelMap::default();
    let actual: BTreeSet<(u8, u8, String)> = map
        .mux_assignments()
        .iter()
        .map(|a| (a.mux.number(), a.select_code, a.signal.to_string()))
        .collect();
    ensure(map.mux_assignments().len() == 22, format!("{} assignments", map.mux_assignments().len()))?;
    ensure(actual == expected, format!("assignment table differs: {actual:?}"))?;
    for code in [6, 7] {
        ensure(map.signal_at(MuxId::Mux3, code).is_none(), format!("MUX3 code {code} is assigned"))?;
    }
    let adc: BTreeMap<AdcInput, AdcSource> = map.adc_assignments().iter().copied().collect();
    let want: BTreeMap<AdcInput, AdcSource> = [
        (AdcInput::A3, AdcSource::Mux(MuxId::Mux1)),
        (AdcInput::A2, AdcSource::Mux(MuxId::Mux2)),
        (AdcInput::A1, AdcSource::Mux(MuxId::Mux3)),
        (AdcInput::A0, AdcSource::WindVane),
    ]
    .into_iter()
    .collect();
    ensure(adc == want, format!("ADC inputs differ: {adc:?}"))?;
    ensure(map.power_monitor_addresses() == [0x40, 0x41], "power monitor addresses")?;
    let took = started.elapsed();
    ensure(took < Duration::from_secs(1), format!("took {took:?}"))?;
    Ok(format!("22 signals, MUX3 6-7 free, A0-A3 as wired, {took:?}"))
}

// 2 ------------------------------------------------------------------------

fn cadence(root: &Path) -> Verdict {
    let r = simulate("clean-day", root)?;
    let frames = u(&r.report["frames"]);
    ensure(frames == 780, format!("{frames} frames"))?;
    ensure(u(&r.report["csv_rows"]) == 780, "csv rows != 780")?;
    let gaps = r.report["frame_gaps_s"].as_object().cloned().unwrap_or_default();
    ensure(
        gaps.len() == 1 && u(&gaps["60"]) == 779,
        format!("spacing {gaps:?}"),
    )?;
    ensure(r.report["first_frame"] == "05:00" && r.report["last_frame"] == "17:59", "window edges")?;
    let simulated = 13.0 * 3600.0;
    let speedup = simulated / r.wall.as_secs_f64();
    ensure(r.wall < Duration::from_secs(10), format!("wall {:.2} s", r.wall.as_secs_f64()))?;
    ensure(speedup >= 1000.0, format!("speedup {speedup:.0}x"))?;
    Ok(format!(
        "780 frames, 779 gaps of 60 s, wall {:.2} s ({speedup:.0}x)",
        r.wall.as_secs_f64()
    ))
}

// 3 ------------------------------------------------------------------------

/// Every row parses, has the full column count and a strictly later
/// timestamp than the row before; the file ends on a newline.
fn check_csv_intact(path: &Path) -> Result<usize, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    ensure(text.ends_with('\n'), format!("{} ends mid-row", path.display()))?;
    let mut lines = text.lines();
    ensure(lines.next() == Some(header_line().as_str()), "header")?;
    let columns = header_line().split(',').count();
    let mut last: Option<NaiveDateTime> = None;
    let mut n = 0;
    for line in lines {
        ensure(line.split(',').count() == columns, format!("torn row `{line}`"))?;
        let row = parse_row(line).map_err(|e| format!("unparsable row `{line}`: {e}"))?;
        if let Some(prev) = last {
            ensure(row.timestamp > prev, format!("duplicate or out-of-order row at {}", row.timestamp))?;
        }
        last = Some(row.timestamp);
        n += 1;
    }
    Ok(n)
}

fn recovery_matrix(root: &Path) -> Verdict {
    let cases = [
        ("power-cycle-midday", "RESUME"),
        ("power-cycle-early", "FRESH_IDLE"),
        ("power-cycle-late", "FRESH_IDLE"),
    ];
    let mut seen = Vec::new();
    for (scenario, want) in cases {
        let r = simulate(scenario, root)?;
        let decisions = r.report["decisions"].as_array().cloned().unwrap_or_default();
        ensure(decisions.len() == 2, format!("{scenario}: {} boots", decisions.len()))?;
        let after = &decisions[1]["mode"];
        ensure(after == want, format!("{scenario}: reboot decided {after}"))?;
        seen.push(after.as_str().unwrap_or("?").to_string());
        if scenario == "power-cycle-midday" {
            let files = archive_files(&r.out);
            ensure(files.len() == 1, format!("resume wrote {} archive files", files.len()))?;
            let rows = check_csv_intact(&files[0])?;
            ensure(rows as u64 == u(&r.report["frames"]), "row count differs from report")?;
            ensure(u(&r.report["csv_duplicate_rows"]) == 0, "duplicates reported")?;
        }
    }
    Ok(format!("{} ; resumed CSV intact", seen.join(" / ")))
}

// 4 ------------------------------------------------------------------------

fn fault_threshold() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut lengths_seen = BTreeSet::new();
    let (mut cycles, mut fired) = (0u64, 0u64);
    for trial in 0..1000 {
        let mut counter = ErrorCounter::new(10);
        for _ in 0..rng.gen_range(1..=6) {
            let run = rng.gen_range(1..=20u32);
            lengths_seen.insert(run);
            for i in 1..=run {
                let action = counter.record_cycle_result(false);
                cycles += 1;
                // Oracle: the count restarts after each reinit, so it fires
                // on every tenth failure of an unbroken run.
                let want = if i % 10 == 0 { CycleAction::Reinitialize } else { CycleAction::Continue };
                ensure(action == want, format!("trial {trial}: failure {i} of {run} gave {action:?}"))?;
                fired += (action == CycleAction::Reinitialize) as u64;
            }
            for _ in 0..rng.gen_range(1..=3) {
                let action = counter.record_cycle_result(true);
                cycles += 1;
                ensure(action == CycleAction::Continue, format!("trial {trial}: success gave {action:?}"))?;
            }
        }
    }
    ensure(lengths_seen.len() == 20, format!("run lengths covered {lengths_seen:?}"))?;
    Ok(format!("1000 trials, {cycles} cycles, {fired} reinits, runs 1..20 covered"))
}

// 5 ------------------------------------------------------------------------

fn no_data_loss(root: &Path) -> Verdict {
    let r = simulate("net-outage", root)?;
    let high_water = u(&r.report["backlog_high_water"]);
    // One deferred frame per minute the sink was unreachable.
    ensure(high_water >= 30, format!("outage held only {high_water} frames"))?;
    ensure(u(&r.report["backlog_remaining"]) == 0, "backlog not drained")?;
    ensure(u(&r.report["backlog_dropped"]) == 0, "backlog evicted frames")?;
    let res = Command::new(env!("CARGO_BIN_EXE_pvdaq"))
        .arg("--config")
        .arg(r.out.join("daq.toml"))
        .arg("verify")
        .arg(r.out.join("archive"))
        .arg(r.out.join("sink_export.lp"))
        .current_dir(root)
        .env_remove("DAQ_CONFIG")
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    let stdout = String::from_utf8_lossy(&res.stdout);
    ensure(res.status.success(), format!("verify exited {:?}: {stdout}", res.status.code()))?;
    let line = |key: &str| {
        stdout
            .lines()
            .find_map(|l| l.strip_prefix(key))
            .and_then(|v| v.trim().parse::<u64>().ok())
    };
    ensure(line("mismatches") == Some(0), format!("verify output: {stdout}"))?;
    ensure(line("csv rows") == Some(780) && line("sink frames") == Some(780), format!("verify output: {stdout}"))?;
    Ok(format!("outage backlog peaked at {high_water} frames, 780 = 780, 0 mismatches"))
}

// 6 ------------------------------------------------------------------------

/// Forward model: divider output for a thermistor resistance.
fn divider_output(r: f64, cal: &ThermistorCal) -> f64 {
    match cal.orientation {
        DividerOrientation::FixedLow => cal.v_supply * cal.r_fixed / (cal.r_fixed + r),
        DividerOrientation::FixedHigh => cal.v_supply * r / (cal.r_fixed + r),
    }
}

/// Forward model: beta equation solved for resistance.
fn beta_resistance(celsius: f64, cal: &ThermistorCal) -> f64 {
    let t = celsius + 273.15;
    cal.r0 * (cal.beta * (1.0 / t - 1.0 / cal.t0)).exp()
}

fn conversion_oracles() -> Verdict {
    let mut worst_t: f64 = 0.0;
    let mut worst_r: f64 = 0.0;
    for orientation in [DividerOrientation::FixedLow, DividerOrientation::FixedHigh] {
        let cal = ThermistorCal {
            orientation,
            ..ThermistorCal::default()
        };
        for i in 0..1000 {
            let celsius = -20.0 + 120.0 * i as f64 / 999.0;
            let r = beta_resistance(celsius, &cal);
            let back = resistance_to_temperature(r, &cal);
            worst_t = worst_t.max((back - celsius).abs());
            let v = divider_output(r, &cal);
            let r_back = divider_to_resistance(v, &cal).map_err(|e| e.to_string())?;
            worst_r = worst_r.max(((r_back - r) / r).abs());
        }
    }
    ensure(worst_t <= 1e-9, format!("beta round trip off by {worst_t:e} C"))?;
    ensure(worst_r <= 1e-9, format!("divider inversion off by {worst_r:e} relative"))?;

    let horizon = TimeDelta::seconds(60);
    let mut rng = ChaCha8Rng::seed_from_u64(0xa11);
    let t0 = NaiveDate::from_ymd_opt(2025, 3, 10).unwrap().and_hms_opt(5, 0, 0).unwrap();
    let mut checks = 0u64;
    for stream in 0..200 {
        let mut w = RollingWindow::new(64, Duration::from_secs(60));
        let mut all: Vec<(NaiveDateTime, f64)> = Vec::new();
        let mut t = t0;
        for _ in 0..300 {
            t += TimeDelta::seconds(rng.gen_range(1..=7));
            let v: f64 = rng.gen_range(-50.0..150.0);
            w.push(t, v);
            all.push((t, v));
            let kept: Vec<f64> = all.iter().filter(|(s, _)| t - *s < horizon).map(|(_, v)| *v).collect();
            let brute = kept.iter().sum::<f64>() / kept.len() as f64;
            let got = w.average().map_err(|e| e.to_string())?;
            ensure(got == brute, format!("stream {stream}: {got} != {brute}"))?;
            let now = t + TimeDelta::seconds(rng.gen_range(0..70));
            let later: Vec<f64> = all.iter().filter(|(s, _)| now - *s < horizon).map(|(_, v)| *v).collect();
            match w.average_at(now) {
                Ok(got) => {
                    let brute = later.iter().sum::<f64>() / later.len() as f64;
                    ensure(got == brute, format!("stream {stream} at {now}: {got} != {brute}"))?;
                }
                Err(_) => ensure(later.is_empty(), format!("stream {stream}: empty at {now}"))?,
            }
            checks += 2;
        }
    }
    Ok(format!(
        "beta max err {worst_t:.1e} C, divider max rel err {worst_r:.1e}, {checks} rolling means exact"
    ))
}

// 7 ------------------------------------------------------------------------

fn timing_contracts() -> Verdict {
    let start = NaiveDate::from_ymd_opt(2025, 3, 10).unwrap().and_hms_opt(11, 0, 0).unwrap();
    let clock = Arc::new(SimClock::new(start));
    let cal = Calibration::default();
    let world = SimWorld::new(
        EnvironmentParams::default(),
        cal.clone(),
        ChannelMap::default(),
        3,
        FaultScript::empty(),
        start,
    )
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
    hal.init().map_err(|e| e.to_string())?;
    let bus = Bus::new(hal);
    let buffers = SharedBuffers::new();
    let dir = scratch();
    let log = OpsLog::open(dir.path(), clock.clone()).map_err(|e| e.to_string())?;
    let mut sampler = FastSampler::new(
        bus.clone(),
        cal.clone(),
        buffers.clone(),
        Arc::new(AtomicBool::new(true)),
        log,
    );
    let mut session = SessionCounters::default();
    calls.clear();
    for s in 0..600 {
        let t = start + TimeDelta::seconds(s);
        if clock.now() < t {
            clock.advance_to(t);
        }
        sampler.tick(t);
        if s % 60 == 0 {
            assemble_minute_frame(t, &mut bus.lock(), &buffers, &cal, &mut session);
        }
    }

    let records = calls.records();
    let is_thermistor_read = |code: Option<u8>, input: AdcInput| match input {
        AdcInput::A3 | AdcInput::A2 => true,
        AdcInput::A1 => code.is_some_and(|c| c < 4),
        AdcInput::A0 => false,
    };
    let mut scans = Vec::new();
    let mut irr_gaps = Vec::new();
    let mut selected: Option<u8> = None;
    let mut scan: Option<(NaiveDateTime, usize)> = None;
    let mut last_poll = start;
    let mut irr_minus: Option<NaiveDateTime> = None;
    let mut select_plus: Option<NaiveDateTime> = None;
    for rec in &records {
        match rec.call {
            Call::PollPulses => last_poll = rec.at,
            Call::Select(c) => {
                if c == 0 && scan.is_none() {
                    scan = Some((last_poll, 0));
                }
                if c == 5 {
                    select_plus = Some(rec.at);
                }
                selected = Some(c);
            }
            Call::ReadAdc(input) => {
                if let Some((began, n)) = scan.as_mut() {
                    if is_thermistor_read(selected, input) {
                        *n += 1;
                        if *n == 20 {
                            scans.push(rec.at - *began);
                            scan = None;
                        }
                    }
                }
                if input == AdcInput::A1 && selected == Some(4) {
                    irr_minus = Some(rec.at);
                }
                if input == AdcInput::A1 && selected == Some(5) {
                    let minus = irr_minus.take().ok_or("IRR+ read without IRR- before it")?;
                    let settle = rec.at - select_plus.ok_or("IRR+ read without select")?;
                    irr_gaps.push((rec.at - minus).min(settle));
                }
            }
            _ => {}
        }
    }
    ensure(scans.len() == 120, format!("{} complete scans in 10 min", scans.len()))?;
    ensure(irr_gaps.len() == 10, format!("{} irradiance passes in 10 min", irr_gaps.len()))?;
    let longest = *scans.iter().max().unwrap();
    let shortest_gap = *irr_gaps.iter().min().unwrap();
    ensure(longest < TimeDelta::seconds(5), format!("scan took {longest}"))?;
    ensure(shortest_gap >= TimeDelta::milliseconds(100), format!("IRR gap {shortest_gap}"))?;
    Ok(format!(
        "120 scans, longest {} ms; 10 IRR pairs, shortest gap {} ms",
        longest.num_milliseconds(),
        shortest_gap.num_milliseconds()
    ))
}

// 8 ------------------------------------------------------------------------

fn crash_safe_state() -> Verdict {
    let t0 = NaiveDate::from_ymd_opt(2025, 3, 10).unwrap().and_hms_opt(9, 30, 0).unwrap();
    let old = SessionState::idle(t0);
    let mut new = SessionState::idle(t0 + TimeDelta::minutes(1));
    new.csv_path = Some(PathBuf::from("/data/archive/data_20250310.csv"));
    new.rows_written = 271;
    new.recording = true;
    new.counters.rain_day_accum = 1.4;
    new.counters.energy_offsets = [1234.5, 0.125];
    new.counters.energy_last = [98765.4321, 87654.0625];

    let points = CrashPoint::all(new.encode().len());
    let (mut passed, mut total) = (0, 0);
    let mut failures = Vec::new();
    for cp in &points {
        for with_prior in [true, false] {
            total += 1;
            let dir = scratch();
            if with_prior {
                write_state(dir.path(), &old).map_err(|e| e.to_string())?;
            }
            if write_state_with(dir.path(), &new, Some(*cp)).is_ok() {
                failures.push(format!("{cp:?}: crash not injected"));
                continue;
            }
            let ok = match load_state(dir.path()) {
                StateLoad::Valid(s) => s == new || (with_prior && s == old),
                StateLoad::Absent => !with_prior,
                StateLoad::Corrupt(why) => {
                    failures.push(format!("{cp:?}: {why}"));
                    false
                }
            };
            // The next write after a crash must still land.
            let healed = write_state(dir.path(), &new).is_ok()
                && matches!(load_state(dir.path()), StateLoad::Valid(ref s) if *s == new);
            if ok && healed {
                passed += 1;
            } else if failures.len() < 3 {
                failures.push(format!("{cp:?} prior={with_prior}: ok={ok} healed={healed}"));
            }
        }
    }
    ensure(passed == total, format!("{passed}/{total}: {}", failures.join("; ")))?;
    Ok(format!("{passed}/{total} injection points ({} per payload) recovered", points.len()))
}

// 9 ------------------------------------------------------------------------

fn partial_capture(root: &Path) -> Verdict {
    let r = simulate("sensor-fail", root)?;
    // T11 dead for 10 minutes; the ambient sensor (temperature and humidity)
    // for 5.
    let want: BTreeMap<String, u64> =
        [("t11", 10), ("ambient_temp", 5), ("humidity", 5)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let flags: BTreeMap<String, u64> = r.report["flags"]
        .as_object()
        .map(|m| m.iter().map(|(k, v)| (k.clone(), u(v))).collect())
        .unwrap_or_default();
    ensure(flags == want, format!("report flags {flags:?}"))?;
    ensure(r.report["flags_match_script"] == true, "report disagrees with its own script")?;
    ensure(u(&r.report["frames"]) == 780, "not every frame archived")?;

    // Count empty cells straight from the archive.
    let files = archive_files(&r.out);
    ensure(files.len() == 1, format!("{} archive files", files.len()))?;
    let text = fs::read_to_string(&files[0]).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let mut empty: BTreeMap<String, u64> = BTreeMap::new();
    let mut rows = 0;
    for line in lines {
        rows += 1;
        for (col, cell) in header.iter().zip(line.split(',')) {
            if cell.is_empty() {
                *empty.entry(col.to_string()).or_default() += 1;
            }
        }
    }
    ensure(rows == 780, format!("{rows} CSV rows"))?;
    ensure(empty == want, format!("empty CSV cells {empty:?}"))?;
    Ok("t11=10 ambient_temp=5 humidity=5 in report and CSV, 780/780 rows".into())
}

fn main() {
    let root = scratch();
    let root = root.path().canonicalize().expect("canonical tempdir");
    let r = root.as_path();
    let criteria: Vec<Criterion> = vec![
        ("channel map fidelity", Box::new(channel_map_fidelity)),
        ("clean-day cadence", Box::new(|| cadence(r))),
        ("power-cycle recovery matrix", Box::new(|| recovery_matrix(r))),
        ("fault threshold", Box::new(fault_threshold)),
        ("no data loss through a network outage", Box::new(|| no_data_loss(r))),
        ("conversion oracles", Box::new(conversion_oracles)),
        ("timing contracts", Box::new(timing_contracts)),
        ("crash-safe state", Box::new(crash_safe_state)),
        ("partial capture", Box::new(|| partial_capture(r))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let verdict = panic::catch_unwind(panic::AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match verdict {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
