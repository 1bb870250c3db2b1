//! How a boot decides between resuming and starting fresh, for a range of
//! saved states and boot times. The archive check is stubbed so the
//! example needs no files.
//!
//! cargo run --example recovery_decision

use std::path::PathBuf;

use chrono::{NaiveDate, NaiveDateTime};
use pvdaq::acquire::OperatingWindow;
use pvdaq::recover::{decide, Integrity, RecoveryReason};
use pvdaq::store::{SessionState, StateLoad};

fn at(h: u32, m: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2025, 3, 10).unwrap().and_hms_opt(h, m, 0).unwrap()
}

fn main() {
    let window = OperatingWindow::default();
    let mut recording = SessionState::idle(at(12, 0));
    recording.recording = true;
    recording.csv_path = Some(PathBuf::from("archive/data_20250310.csv"));
    recording.rows_written = 420;

    let intact = |_: &std::path::Path, rows: u64| Integrity::Intact {
        rows,
        last_row: Some(at(12, 0)),
        last_rain_accum: Some(0.0),
    };
    let truncated = |_: &std::path::Path, _: u64| Integrity::Failed(RecoveryReason::ArchiveTruncated);

    let mut yesterday = recording.clone();
    yesterday.session_date = yesterday.session_date.pred_opt().unwrap();

    let cases: Vec<(&str, StateLoad, NaiveDateTime, bool)> = vec![
        ("no state, midday", StateLoad::Absent, at(12, 10), true),
        ("no state, 04:30", StateLoad::Absent, at(4, 30), true),
        ("recording, midday", StateLoad::Valid(recording.clone()), at(12, 10), true),
        ("recording, 19:00", StateLoad::Valid(recording.clone()), at(19, 0), true),
        ("recording, archive cut short", StateLoad::Valid(recording.clone()), at(12, 10), false),
        ("yesterday's session", StateLoad::Valid(yesterday), at(12, 10), true),
        ("unreadable state", StateLoad::Corrupt("checksum mismatch".into()), at(12, 10), true),
    ];
    for (label, saved, now, archive_ok) in cases {
        let d = if archive_ok {
            decide(&saved, now, &window, intact)
        } else {
            decide(&saved, now, &window, truncated)
        };
        println!("{label:<30} boot {} -> {} ({})", now.format("%H:%M"), d.mode, d.reason);
    }
}
