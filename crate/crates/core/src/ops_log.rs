//! Operations log `daq.log`.
//!
//! One line per event: `<local time, ms> <LEVEL> <component>: <message>`.
//! Messages start with an upper-case event word (`BOOT`, `DECISION`,
//! `DAY_START`, `FRAME`, `HEALTH`, `REINIT`, `EOD`, `SHUTDOWN`, ...), which is
//! what the admin commands search for.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use chrono::{NaiveDate, NaiveDateTime};

use crate::clock::Clock;

pub const LOG_FILE: &str = "daq.log";
const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3f";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Info,
    Warn,
    Error,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Info => "INFO",
            Level::Warn => "WARN",
            Level::Error => "ERROR",
        })
    }
}

impl FromStr for Level {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "INFO" => Ok(Level::Info),
            "WARN" => Ok(Level::Warn),
            "ERROR" => Ok(Level::Error),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub at: NaiveDateTime,
    pub level: Level,
    pub component: String,
    pub message: String,
}

impl LogEntry {
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.splitn(3, ' ');
        let at = NaiveDateTime::parse_from_str(parts.next()?, TS_FORMAT).ok()?;
        let level = parts.next()?.parse().ok()?;
        let (component, message) = parts.next()?.split_once(": ")?;
        Some(Self {
            at,
            level,
            component: component.to_string(),
            message: message.to_string(),
        })
    }

    /// Leading event word of the message.
    pub fn event(&self) -> &str {
        self.message.split_whitespace().next().unwrap_or("")
    }
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}: {}",
            self.at.format(TS_FORMAT),
            self.level,
            self.component,
            self.message
        )
    }
}

struct Inner {
    path: PathBuf,
    file: File,
    echo: bool,
}

/// Cloneable handle; writes from both tasks are serialized.
#[derive(Clone)]
pub struct OpsLog {
    inner: Arc<Mutex<Inner>>,
    clock: Arc<dyn Clock>,
}

impl OpsLog {
    pub fn open(dir: &Path, clock: Arc<dyn Clock>) -> io::Result<Self> {
        let path = dir.join(LOG_FILE);
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            inner: Arc::new(Mutex::new(Inner {
                path,
                file,
                echo: false,
            })),
            clock,
        })
    }

    /// Also copy every line to stderr.
    pub fn with_echo(self, echo: bool) -> Self {
        self.lock().echo = echo;
        self
    }

    pub fn path(&self) -> PathBuf {
        self.lock().path.clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn write(&self, level: Level, component: &str, message: impl Into<String>) {
        let entry = LogEntry {
            at: self.clock.now(),
            level,
            component: component.to_string(),
            message: message.into(),
        };
        let mut inner = self.lock();
        // A full disk must not stop acquisition; the line is dropped.
        let _ = writeln!(inner.file, "{entry}");
        if inner.echo {
            eprintln!("{entry}");
        }
    }

    pub fn info(&self, component: &str, message: impl Into<String>) {
        self.write(Level::Info, component, message);
    }

    pub fn warn(&self, component: &str, message: impl Into<String>) {
        self.write(Level::Warn, component, message);
    }

    pub fn error(&self, component: &str, message: impl Into<String>) {
        self.write(Level::Error, component, message);
    }

    /// Moves lines from an earlier day to `daq_YYYYMMDD.log`, named after the
    /// date of their first entry. Returns the archive path when a move happened.
    pub fn rotate(&self, today: NaiveDate) -> io::Result<Option<PathBuf>> {
        let mut inner = self.lock();
        let text = fs::read_to_string(&inner.path)?;
        let Some(first) = text.lines().find_map(LogEntry::parse) else {
            return Ok(None);
        };
        let day = first.at.date();
        if day >= today {
            return Ok(None);
        }
        let target = inner
            .path
            .with_file_name(format!("daq_{}.log", day.format("%Y%m%d")));
        let mut archive = OpenOptions::new().create(true).append(true).open(&target)?;
        archive.write_all(text.as_bytes())?;
        archive.sync_all()?;
        File::create(&inner.path)?;
        inner.file = OpenOptions::new().append(true).open(&inner.path)?;
        Ok(Some(target))
    }
}

pub fn read_entries(path: &Path) -> io::Result<Vec<LogEntry>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter_map(LogEntry::parse)
        .collect())
}
