use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use chrono::NaiveDateTime;

use super::{load_config, CliError};
use crate::acquire::{Field, MeasurementFrame};
use crate::store::csv::read_archive_dir;
use crate::store::line_protocol::{decode_line_protocol, DecodedFrames};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldMismatch {
    MissingInSink,
    MissingInCsv,
    Differs { csv: f64, sink: f64 },
}

impl fmt::Display for FieldMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldMismatch::MissingInSink => f.write_str("missing in sink"),
            FieldMismatch::MissingInCsv => f.write_str("missing in csv"),
            FieldMismatch::Differs { csv, sink } => write!(f, "csv {csv} != sink {sink}"),
        }
    }
}

/// Every field disagreement at one frame time.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub timestamp: NaiveDateTime,
    pub fields: Vec<(Field, FieldMismatch)>,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.timestamp.format("%Y-%m-%dT%H:%M:%S"))?;
        for (field, m) in &self.fields {
            write!(f, " {field} {m};")?;
        }
        Ok(())
    }
}

/// Compares the two stores frame by frame at archive precision. Returns one
/// entry per disagreeing timestamp.
pub fn compare_stores(csv: &[MeasurementFrame], sink: &DecodedFrames) -> Vec<Mismatch> {
    let mut by_time: BTreeMap<NaiveDateTime, BTreeMap<Field, f64>> = BTreeMap::new();
    for frame in csv {
        let entry = by_time.entry(frame.timestamp).or_default();
        for (field, v) in frame.values() {
            if let Some(v) = v {
                entry.insert(field, field.quantize(v));
            }
        }
    }
    let empty = BTreeMap::new();
    let times: std::collections::BTreeSet<_> = by_time.keys().chain(sink.keys()).copied().collect();
    let mut out = Vec::new();
    for t in times {
        let a = by_time.get(&t).unwrap_or(&empty);
        let b = sink.get(&t).unwrap_or(&empty);
        let mut fields = Vec::new();
        for field in Field::all() {
            let m = match (a.get(&field), b.get(&field).map(|v| field.quantize(*v))) {
                (Some(_), None) => FieldMismatch::MissingInSink,
                (None, Some(_)) => FieldMismatch::MissingInCsv,
                (Some(x), Some(y)) if *x != y => FieldMismatch::Differs { csv: *x, sink: y },
                _ => continue,
            };
            fields.push((field, m));
        }
        if !fields.is_empty() {
            out.push(Mismatch { timestamp: t, fields });
        }
    }
    out
}

pub fn cmd_verify(config: Option<&Path>, csv_dir: &Path, sink_export: &Path) -> Result<(), CliError> {
    let (cfg, _) = load_config(config)?;
    let offset = cfg.utc_offset().expect("validated offset");
    let rows = read_archive_dir(csv_dir).map_err(|e| CliError::Validation(format!("csv: {e}")))?;
    let text = fs::read_to_string(sink_export)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", sink_export.display())))?;
    let (sink, duplicates) = decode_line_protocol(&text, offset)
        .map_err(|e| CliError::Validation(format!("{}: {e}", sink_export.display())))?;
    let mismatches = compare_stores(&rows, &sink);
    println!("csv rows      {}", rows.len());
    println!("sink frames   {}", sink.len());
    if !duplicates.is_empty() {
        println!("sink repeats  {} (last value kept)", duplicates.len());
    }
    for m in &mismatches {
        println!("{m}");
    }
    println!("mismatches    {}", mismatches.len());
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{} mismatching frame(s)", mismatches.len())))
    }
}
