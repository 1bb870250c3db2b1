//! Daily CSV archive.
//!
//! One file per day, `data_YYYYMMDD.csv`, with a fixed 35-column header:
//!
//! ```text
//! timestamp,t00,...,t19,p0_volts,p0_amps,p0_watts,p0_joules,p1_volts,p1_amps,p1_watts,p1_joules,ambient_temp,humidity,irradiance,wind_speed,wind_dir,rain_mm
//! ```
//!
//! Timestamps are local time, `YYYY-MM-DDTHH:MM:SS`. Numbers use a fixed
//! number of decimals per column (see [`Field::decimals`]); a flagged field
//! is an empty cell. `rain_mm` is the accumulation since day start.
//!
//! When a day's file cannot be continued, a fresh one is started with a
//! numeric suffix: `data_YYYYMMDD_1.csv`, `data_YYYYMMDD_2.csv`, ...

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::acquire::{Field, MeasurementFrame, FIELD_COUNT};

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn header_line() -> String {
    let mut cols = vec!["timestamp".to_string()];
    cols.extend(Field::all().iter().map(|f| f.column()));
    cols.join(",")
}

pub fn csv_file_name(date: NaiveDate, suffix: u32) -> String {
    match suffix {
        0 => format!("data_{}.csv", date.format("%Y%m%d")),
        n => format!("data_{}_{n}.csv", date.format("%Y%m%d")),
    }
}

/// Archive files in `dir`, in chronological (and suffix) order.
pub fn list_archives(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out: Vec<(String, u32, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name.strip_prefix("data_").and_then(|s| s.strip_suffix(".csv")) else {
            continue;
        };
        let (day, suffix) = match stem.split_once('_') {
            Some((d, s)) => match s.parse() {
                Ok(n) => (d, n),
                Err(_) => continue,
            },
            None => (stem, 0),
        };
        if day.len() == 8 && day.bytes().all(|b| b.is_ascii_digit()) {
            out.push((day.to_string(), suffix, path));
        }
    }
    out.sort();
    Ok(out.into_iter().map(|(_, _, p)| p).collect())
}

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("archive {path}: header does not match the expected columns")]
    HeaderMismatch { path: PathBuf },
    #[error("archive {path} line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("frame {got} is not after the last archived row {last}")]
    OutOfOrder { last: NaiveDateTime, got: NaiveDateTime },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn format_row(frame: &MeasurementFrame) -> String {
    let mut row = frame.timestamp.format(TS_FORMAT).to_string();
    for (field, value) in frame.values() {
        row.push(',');
        if let Some(v) = value {
            row.push_str(&format!("{:.*}", field.decimals(), v));
        }
    }
    row
}

pub fn parse_row(line: &str) -> Result<MeasurementFrame, String> {
    let cells: Vec<&str> = line.split(',').collect();
    if cells.len() != FIELD_COUNT + 1 {
        return Err(format!("expected {} cells, found {}", FIELD_COUNT + 1, cells.len()));
    }
    let ts = NaiveDateTime::parse_from_str(cells[0], TS_FORMAT)
        .map_err(|e| format!("timestamp `{}`: {e}", cells[0]))?;
    let mut frame = MeasurementFrame::empty(ts);
    for (field, cell) in Field::all().into_iter().zip(&cells[1..]) {
        if cell.is_empty() {
            continue;
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| format!("{field}: `{cell}` is not a number"))?;
        if !v.is_finite() {
            return Err(format!("{field}: `{cell}` is not finite"));
        }
        frame.set(field, Some(v));
    }
    Ok(frame)
}

/// Result of reading an archive back in full.
#[derive(Debug, Clone)]
pub struct ArchiveScan {
    pub rows: Vec<MeasurementFrame>,
}

impl ArchiveScan {
    pub fn last(&self) -> Option<&MeasurementFrame> {
        self.rows.last()
    }
}

/// Integrity check: header matches, every line is a complete row, and
/// timestamps strictly increase.
pub fn read_archive(path: &Path) -> Result<ArchiveScan, ArchiveError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.split_inclusive('\n');
    match lines.next() {
        Some(h) if h.trim_end_matches('\n') == header_line() && h.ends_with('\n') => {}
        _ => {
            return Err(ArchiveError::HeaderMismatch {
                path: path.to_path_buf(),
            })
        }
    }
    let mut rows: Vec<MeasurementFrame> = Vec::new();
    for (i, raw) in lines.enumerate() {
        let corrupt = |reason: String| ArchiveError::Corrupt {
            path: path.to_path_buf(),
            line: i + 2,
            reason,
        };
        let Some(line) = raw.strip_suffix('\n') else {
            return Err(corrupt("row not terminated".into()));
        };
        let frame = parse_row(line).map_err(corrupt)?;
        if let Some(prev) = rows.last() {
            if frame.timestamp <= prev.timestamp {
                return Err(corrupt(format!("timestamp {} out of order", frame.timestamp)));
            }
        }
        rows.push(frame);
    }
    Ok(ArchiveScan { rows })
}

/// Append handle on one day's archive.
#[derive(Debug)]
pub struct DailyArchive {
    path: PathBuf,
    file: File,
    rows: u64,
    last: Option<NaiveDateTime>,
}

impl DailyArchive {
    /// Creates the file with its header when absent; otherwise validates it
    /// and positions at the end without modifying it.
    pub fn open(path: &Path) -> Result<Self, ArchiveError> {
        if !path.exists() {
            let mut file = OpenOptions::new()
                .create_new(true)
                .append(true)
                .open(path)
                .map_err(io_err(path))?;
            writeln!(file, "{}", header_line()).map_err(io_err(path))?;
            file.sync_all().map_err(io_err(path))?;
            if let Some(dir) = path.parent() {
                File::open(dir).and_then(|d| d.sync_all()).map_err(io_err(path))?;
            }
            return Ok(Self {
                path: path.to_path_buf(),
                file,
                rows: 0,
                last: None,
            });
        }
        let scan = read_archive(path)?;
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            rows: scan.rows.len() as u64,
            last: scan.last().map(|f| f.timestamp),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn last_timestamp(&self) -> Option<NaiveDateTime> {
        self.last
    }

    /// Appends one row and makes it durable before returning.
    pub fn append_frame(&mut self, frame: &MeasurementFrame) -> Result<u64, ArchiveError> {
        if let Some(last) = self.last {
            if frame.timestamp <= last {
                return Err(ArchiveError::OutOfOrder {
                    last,
                    got: frame.timestamp,
                });
            }
        }
        let mut line = format_row(frame);
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|()| self.file.sync_data())
            .map_err(io_err(&self.path))?;
        self.rows += 1;
        self.last = Some(frame.timestamp);
        Ok(self.rows)
    }
}

pub fn open_daily_csv(dir: &Path, date: NaiveDate) -> Result<DailyArchive, ArchiveError> {
    DailyArchive::open(&dir.join(csv_file_name(date, 0)))
}

/// A new, empty archive for `date` under the first unused suffix.
pub fn open_fresh_csv(dir: &Path, date: NaiveDate) -> Result<DailyArchive, ArchiveError> {
    let mut suffix = 1;
    loop {
        let path = dir.join(csv_file_name(date, suffix));
        if !path.exists() {
            return DailyArchive::open(&path);
        }
        suffix += 1;
    }
}

/// Every row of every archive in `dir`, in file order.
pub fn read_archive_dir(dir: &Path) -> Result<Vec<MeasurementFrame>, ArchiveError> {
    let mut out = Vec::new();
    for path in list_archives(dir).map_err(io_err(dir))? {
        out.extend(read_archive(&path)?.rows);
    }
    Ok(out)
}
