//! Time-series sink encoding.
//!
//! Each frame becomes up to 23 lines sharing one epoch timestamp (seconds):
//!
//! ```text
//! pv_electrical,panel=0 volts=17.6123,amps=0.34568,watts=6,joules=1234.57 1741629600
//! pv_thermal,sensor=t00 temp=30.123 1741629600
//! weather ambient_temp=24.3,humidity=83.4,irradiance=987.65,wind_speed=2.223,wind_dir=225,rain_mm=0.2794 1741629600
//! ```
//!
//! Values carry the archive's precision. Flagged fields are left out, and a
//! line whose fields are all flagged is not emitted.

use std::collections::BTreeMap;

use chrono::{DateTime, FixedOffset, NaiveDateTime, TimeZone};
use thiserror::Error;

use crate::acquire::{Field, MeasurementFrame, PANEL_COUNT};
use crate::hal::channel_map::THERMISTOR_COUNT;

fn field_key(field: Field) -> &'static str {
    match field {
        Field::Thermal(_) => "temp",
        Field::Volts(_) => "volts",
        Field::Amps(_) => "amps",
        Field::Watts(_) => "watts",
        Field::Joules(_) => "joules",
        Field::AmbientTemp => "ambient_temp",
        Field::Humidity => "humidity",
        Field::Irradiance => "irradiance",
        Field::WindSpeed => "wind_speed",
        Field::WindDir => "wind_dir",
        Field::Rain => "rain_mm",
    }
}

pub fn epoch_seconds(local: NaiveDateTime, offset: FixedOffset) -> i64 {
    offset
        .from_local_datetime(&local)
        .single()
        .expect("fixed offsets are unambiguous")
        .timestamp()
}

pub fn local_time(epoch: i64, offset: FixedOffset) -> Option<NaiveDateTime> {
    DateTime::from_timestamp(epoch, 0).map(|utc| utc.with_timezone(&offset).naive_local())
}

fn line(measurement: &str, tag: Option<(&str, String)>, fields: &[(Field, f64)], ts: i64) -> Option<String> {
    if fields.is_empty() {
        return None;
    }
    let mut out = measurement.to_string();
    if let Some((k, v)) = tag {
        out.push_str(&format!(",{k}={v}"));
    }
    out.push(' ');
    let body: Vec<String> = fields
        .iter()
        .map(|(f, v)| format!("{}={}", field_key(*f), f.quantize(*v)))
        .collect();
    out.push_str(&body.join(","));
    out.push_str(&format!(" {ts}"));
    Some(out)
}

pub fn encode_line_protocol(frame: &MeasurementFrame, offset: FixedOffset) -> Vec<String> {
    let ts = epoch_seconds(frame.timestamp, offset);
    let present = |fields: &[Field]| -> Vec<(Field, f64)> {
        fields.iter().filter_map(|f| frame.get(*f).map(|v| (*f, v))).collect()
    };
    let mut out = Vec::new();
    for p in 0..PANEL_COUNT as u8 {
        let fields = present(&[Field::Volts(p), Field::Amps(p), Field::Watts(p), Field::Joules(p)]);
        out.extend(line("pv_electrical", Some(("panel", p.to_string())), &fields, ts));
    }
    for t in 0..THERMISTOR_COUNT as u8 {
        let fields = present(&[Field::Thermal(t)]);
        out.extend(line("pv_thermal", Some(("sensor", format!("t{t:02}"))), &fields, ts));
    }
    let fields = present(&[
        Field::AmbientTemp,
        Field::Humidity,
        Field::Irradiance,
        Field::WindSpeed,
        Field::WindDir,
        Field::Rain,
    ]);
    out.extend(line("weather", None, &fields, ts));
    out
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {reason}")]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

/// Field values keyed by frame time, as recovered from sink text.
pub type DecodedFrames = BTreeMap<NaiveDateTime, BTreeMap<Field, f64>>;

/// Parses line-protocol text produced by [`encode_line_protocol`]. A field
/// seen twice for the same time keeps the last value and is reported in the
/// returned duplicate list.
pub fn decode_line_protocol(
    text: &str,
    offset: FixedOffset,
) -> Result<(DecodedFrames, Vec<(NaiveDateTime, Field)>), LineError> {
    let mut frames = DecodedFrames::new();
    let mut duplicates = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let err = |reason: String| LineError { line: lineno, reason };
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut parts = raw.split(' ');
        let (Some(series), Some(body), Some(ts), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected `<series> <fields> <timestamp>`".into()));
        };
        let epoch: i64 = ts.parse().map_err(|_| err(format!("bad timestamp `{ts}`")))?;
        let at = local_time(epoch, offset).ok_or_else(|| err(format!("timestamp {epoch} out of range")))?;
        let (measurement, tag) = match series.split_once(',') {
            Some((m, t)) => (m, Some(t)),
            None => (series, None),
        };
        let entry = frames.entry(at).or_default();
        for kv in body.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("bad field `{kv}`")))?;
            let value: f64 = v.parse().map_err(|_| err(format!("bad value `{v}`")))?;
            let field = resolve(measurement, tag, k).ok_or_else(|| err(format!("unknown field `{series} {k}`")))?;
            if entry.insert(field, value).is_some() {
                duplicates.push((at, field));
            }
        }
    }
    Ok((frames, duplicates))
}

fn resolve(measurement: &str, tag: Option<&str>, key: &str) -> Option<Field> {
    match (measurement, tag) {
        ("pv_electrical", Some(t)) => {
            let p: u8 = t.strip_prefix("panel=")?.parse().ok()?;
            if p as usize >= PANEL_COUNT {
                return None;
            }
            match key {
                "volts" => Some(Field::Volts(p)),
                "amps" => Some(Field::Amps(p)),
                "watts" => Some(Field::Watts(p)),
                "joules" => Some(Field::Joules(p)),
                _ => None,
            }
        }
        ("pv_thermal", Some(t)) => {
            let n: u8 = t.strip_prefix("sensor=t")?.parse().ok()?;
            (key == "temp" && (n as usize) < THERMISTOR_COUNT).then_some(Field::Thermal(n))
        }
        ("weather", None) => [
            Field::AmbientTemp,
            Field::Humidity,
            Field::Irradiance,
            Field::WindSpeed,
            Field::WindDir,
            Field::Rain,
        ]
        .into_iter()
        .find(|f| field_key(*f) == key),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::PanelSi;
    use chrono::NaiveDate;

    fn offset() -> FixedOffset {
        FixedOffset::west_opt(6 * 3600).unwrap()
    }

    fn noon() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2025, 3, 10).unwrap().and_hms_opt(12, 0, 0).unwrap()
    }

    #[test]
    fn electrical_line_matches_documented_form() {
        let mut f = MeasurementFrame::empty(noon());
        f.set(Field::Volts(0), Some(5.0));
        f.set(Field::Amps(0), Some(1.0));
        f.set(Field::Watts(0), Some(5.0));
        let lines = encode_line_protocol(&f, offset());
        // 12:00 at UTC-6 is 18:00 UTC.
        assert_eq!(lines, ["pv_electrical,panel=0 volts=5,amps=1,watts=5 1741629600"]);
    }

    #[test]
    fn all_flagged_gives_no_lines() {
        assert!(encode_line_protocol(&MeasurementFrame::empty(noon()), offset()).is_empty());
    }

    #[test]
    fn decode_inverts_encode() {
        let mut f = MeasurementFrame::empty(noon());
        for i in 0..20 {
            f.set(Field::Thermal(i), Some(40.0 + i as f64 / 7.0));
        }
        f.set_panel(
            1,
            Some(PanelSi {
                volts: 18.1,
                amps: 0.33333333,
                watts: 6.03,
                joules: 99.999,
            }),
        );
        f.set(Field::Rain, Some(0.0));
        let text = encode_line_protocol(&f, offset()).join("\n");
        let (frames, dups) = decode_line_protocol(&text, offset()).unwrap();
        assert!(dups.is_empty());
        let got = &frames[&noon()];
        assert_eq!(got.len(), f.valid_count());
        for (field, v) in f.values() {
            assert_eq!(got.get(&field).copied(), v.map(|v| field.quantize(v)));
        }
    }

    #[test]
    fn decode_reports_line_numbers() {
        let e = decode_line_protocol("weather rain_mm=0 1\npv_thermal,sensor=t00 temp=x 1", offset()).unwrap_err();
        assert_eq!(e.line, 2);
    }
}
