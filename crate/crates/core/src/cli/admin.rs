use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{Read, Seek, SeekFrom};
use std::path::Path;
use std::time::Duration;

use regex::Regex;

use super::run::lock_path;
use super::{load_config, AdminAction, CliError};
use crate::ops_log::{LogEntry, Level, LOG_FILE};
use crate::store::state::{load_state, StateLoad};

/// Summary of one log file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogStats {
    pub entries: u64,
    pub info: u64,
    pub warn: u64,
    pub error: u64,
    pub reinits: u64,
    pub last_frame: Option<String>,
}

pub fn log_stats(text: &str) -> LogStats {
    let mut s = LogStats::default();
    for e in text.lines().filter_map(LogEntry::parse) {
        s.entries += 1;
        match e.level {
            Level::Info => s.info += 1,
            Level::Warn => s.warn += 1,
            Level::Error => s.error += 1,
        }
        match e.event() {
            "REINIT" => s.reinits += 1,
            "FRAME" => {
                s.last_frame = e
                    .message
                    .split_whitespace()
                    .find_map(|w| w.strip_prefix("ts="))
                    .map(str::to_string)
            }
            _ => {}
        }
    }
    s
}

fn read_log(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("log {}: {e}", path.display())))
}

fn last_lines(text: &str, n: usize) -> Vec<&str> {
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(n)..].to_vec()
}

pub fn cmd_admin(config: Option<&Path>, action: &AdminAction) -> Result<(), CliError> {
    let (cfg, _) = load_config(config)?;
    let log_path = cfg.paths.log_dir.join(LOG_FILE);
    match action {
        AdminAction::Tail => tail(&log_path),
        AdminAction::Recent { n } => {
            for line in last_lines(&read_log(&log_path)?, *n) {
                println!("{line}");
            }
            Ok(())
        }
        AdminAction::Grep { pattern } => {
            let re = Regex::new(pattern).map_err(|e| CliError::Validation(format!("pattern: {e}")))?;
            let text = read_log(&log_path)?;
            let mut hits = 0;
            for line in text.lines().filter(|l| re.is_match(l)) {
                println!("{line}");
                hits += 1;
            }
            eprintln!("{hits} match(es)");
            Ok(())
        }
        AdminAction::Stats => {
            let s = log_stats(&read_log(&log_path)?);
            println!("entries    {}", s.entries);
            println!("info       {}", s.info);
            println!("warnings   {}", s.warn);
            println!("errors     {}", s.error);
            println!("reinits    {}", s.reinits);
            println!("last_frame {}", s.last_frame.as_deref().unwrap_or("none"));
            Ok(())
        }
        AdminAction::State => {
            match load_state(&cfg.paths.state_dir) {
                StateLoad::Absent => println!("no saved session"),
                StateLoad::Corrupt(why) => {
                    return Err(CliError::Runtime(format!("saved session is unreadable: {why}")));
                }
                StateLoad::Valid(s) => {
                    println!("session_date   {}", s.session_date);
                    println!("recording      {}", s.recording);
                    println!(
                        "csv_path       {}",
                        s.csv_path.as_ref().map_or("-".into(), |p| p.display().to_string())
                    );
                    println!("rows_written   {}", s.rows_written);
                    println!("rain_day_mm    {}", s.counters.rain_day_accum);
                    println!("energy_offset  {:?}", s.counters.energy_offsets);
                    println!("energy_last    {:?}", s.counters.energy_last);
                    println!("last_write     {}", s.last_write);
                    println!("schema         {}", s.schema_version);
                }
            }
            Ok(())
        }
        AdminAction::Stop => stop(&cfg.paths.state_dir),
    }
}

fn tail(path: &Path) -> Result<(), CliError> {
    let text = read_log(path)?;
    for line in last_lines(&text, 10) {
        println!("{line}");
    }
    let mut pos = text.len() as u64;
    loop {
        std::thread::sleep(Duration::from_millis(500));
        let len = fs::metadata(path).map(|m| m.len()).unwrap_or(0);
        if len < pos {
            // Rotated: start over on the new file.
            pos = 0;
        }
        if len > pos {
            let mut f = File::open(path).map_err(|e| CliError::Runtime(format!("log {}: {e}", path.display())))?;
            f.seek(SeekFrom::Start(pos))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let mut chunk = String::new();
            f.read_to_string(&mut chunk).map_err(|e| CliError::Runtime(e.to_string()))?;
            print!("{chunk}");
            pos = len;
        }
    }
}

fn stop(state_dir: &Path) -> Result<(), CliError> {
    let path = lock_path(state_dir);
    let file = OpenOptions::new()
        .read(true)
        .write(true)
        .open(&path)
        .map_err(|_| CliError::Runtime(format!("no running daemon ({} absent)", path.display())))?;
    match file.try_lock() {
        Ok(()) => return Err(CliError::Runtime("no running daemon (lock is free)".into())),
        Err(TryLockError::WouldBlock) => {}
        Err(TryLockError::Error(e)) => return Err(CliError::Runtime(format!("{}: {e}", path.display()))),
    }
    let pid: i32 = fs::read_to_string(&path)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| CliError::Runtime(format!("{} holds no process id", path.display())))?;
    // SAFETY: kill(2) with a valid signal number has no memory-safety
    // preconditions.
    let rc = unsafe { libc::kill(pid, libc::SIGTERM) };
    if rc != 0 {
        return Err(CliError::Runtime(format!(
            "signal to pid {pid} failed: {}",
            std::io::Error::last_os_error()
        )));
    }
    println!("sent SIGTERM to pid {pid}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_count_levels_reinits_and_last_frame() {
        let text = "\
2025-03-10T05:00:00.100 INFO scheduler: FRAME ts=2025-03-10T05:00:00 valid=34/34 flags=-
2025-03-10T05:01:00.100 WARN recover: REINIT after 10 consecutive failed cycles
garbage line
2025-03-10T05:01:00.200 ERROR sampler: READ_FAIL T11: bus fault
2025-03-10T05:01:00.300 INFO scheduler: FRAME ts=2025-03-10T05:01:00 valid=33/34 flags=t11
";
        let s = log_stats(text);
        assert_eq!(
            s,
            LogStats {
                entries: 4,
                info: 2,
                warn: 1,
                error: 1,
                reinits: 1,
                last_frame: Some("2025-03-10T05:01:00".into()),
            }
        );
    }

    #[test]
    fn last_lines_is_bounded() {
        assert_eq!(last_lines("a\nb\nc\n", 2), ["b", "c"]);
        assert_eq!(last_lines("a\n", 5), ["a"]);
    }
}
