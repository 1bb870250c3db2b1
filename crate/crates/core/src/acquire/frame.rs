use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;

use crate::convert::PanelSi;
use crate::hal::channel_map::THERMISTOR_COUNT;

pub const FIELD_COUNT: usize = 34;
pub const PANEL_COUNT: usize = 2;

/// One archived column of a frame, in archive order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Thermal(u8),
    Volts(u8),
    Amps(u8),
    Watts(u8),
    Joules(u8),
    AmbientTemp,
    Humidity,
    Irradiance,
    WindSpeed,
    WindDir,
    /// Day accumulation.
    Rain,
}

impl Field {
    pub fn all() -> [Field; FIELD_COUNT] {
        let mut out = [Field::Rain; FIELD_COUNT];
        let mut i = 0;
        for t in 0..THERMISTOR_COUNT as u8 {
            out[i] = Field::Thermal(t);
            i += 1;
        }
        for p in 0..PANEL_COUNT as u8 {
            for f in [Field::Volts(p), Field::Amps(p), Field::Watts(p), Field::Joules(p)] {
                out[i] = f;
                i += 1;
            }
        }
        for f in [
            Field::AmbientTemp,
            Field::Humidity,
            Field::Irradiance,
            Field::WindSpeed,
            Field::WindDir,
            Field::Rain,
        ] {
            out[i] = f;
            i += 1;
        }
        out
    }

    pub fn index(self) -> usize {
        let t = THERMISTOR_COUNT;
        match self {
            Field::Thermal(i) => i as usize,
            Field::Volts(p) => t + 4 * p as usize,
            Field::Amps(p) => t + 4 * p as usize + 1,
            Field::Watts(p) => t + 4 * p as usize + 2,
            Field::Joules(p) => t + 4 * p as usize + 3,
            Field::AmbientTemp => t + 8,
            Field::Humidity => t + 9,
            Field::Irradiance => t + 10,
            Field::WindSpeed => t + 11,
            Field::WindDir => t + 12,
            Field::Rain => t + 13,
        }
    }

    /// Decimal places written to the archive; the sink uses the same rounding.
    pub fn decimals(self) -> usize {
        match self {
            Field::Thermal(_) => 3,
            Field::Volts(_) => 4,
            Field::Amps(_) => 5,
            Field::Watts(_) => 4,
            Field::Joules(_) => 2,
            Field::AmbientTemp | Field::Humidity => 1,
            Field::Irradiance => 2,
            Field::WindSpeed => 3,
            Field::WindDir => 1,
            Field::Rain => 4,
        }
    }

    /// Column name in the archive header.
    pub fn column(self) -> String {
        match self {
            Field::Thermal(i) => format!("t{i:02}"),
            Field::Volts(p) => format!("p{p}_volts"),
            Field::Amps(p) => format!("p{p}_amps"),
            Field::Watts(p) => format!("p{p}_watts"),
            Field::Joules(p) => format!("p{p}_joules"),
            Field::AmbientTemp => "ambient_temp".into(),
            Field::Humidity => "humidity".into(),
            Field::Irradiance => "irradiance".into(),
            Field::WindSpeed => "wind_speed".into(),
            Field::WindDir => "wind_dir".into(),
            Field::Rain => "rain_mm".into(),
        }
    }

    /// Value rounded to the archive precision.
    pub fn quantize(self, v: f64) -> f64 {
        format!("{:.*}", self.decimals(), v).parse().unwrap()
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.column())
    }
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Field::all()
            .into_iter()
            .find(|f| f.column() == s)
            .ok_or_else(|| format!("unknown field `{s}`"))
    }
}

/// One minute of every channel. A `None` value is a flagged field.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    pub timestamp: NaiveDateTime,
    values: [Option<f64>; FIELD_COUNT],
    /// Rain in this minute, mm.
    pub rain_minute: Option<f64>,
}

impl MeasurementFrame {
    /// A frame with every field flagged.
    pub fn empty(timestamp: NaiveDateTime) -> Self {
        Self {
            timestamp,
            values: [None; FIELD_COUNT],
            rain_minute: None,
        }
    }

    pub fn get(&self, field: Field) -> Option<f64> {
        self.values[field.index()]
    }

    pub fn set(&mut self, field: Field, value: Option<f64>) {
        self.values[field.index()] = value.filter(|v| v.is_finite());
    }

    pub fn set_panel(&mut self, panel: u8, si: Option<PanelSi>) {
        self.set(Field::Volts(panel), si.map(|s| s.volts));
        self.set(Field::Amps(panel), si.map(|s| s.amps));
        self.set(Field::Watts(panel), si.map(|s| s.watts));
        self.set(Field::Joules(panel), si.map(|s| s.joules));
    }

    pub fn values(&self) -> impl Iterator<Item = (Field, Option<f64>)> + '_ {
        Field::all().into_iter().map(|f| (f, self.get(f)))
    }

    pub fn flags(&self) -> Vec<Field> {
        self.values().filter(|(_, v)| v.is_none()).map(|(f, _)| f).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_order_and_index_agree() {
        for (i, f) in Field::all().into_iter().enumerate() {
            assert_eq!(f.index(), i);
            assert_eq!(f.column().parse::<Field>().unwrap(), f);
        }
        let names: Vec<_> = Field::all().iter().map(|f| f.column()).collect();
        assert_eq!(names[0], "t00");
        assert_eq!(names[20], "p0_volts");
        assert_eq!(names[33], "rain_mm");
    }

    #[test]
    fn non_finite_values_are_flagged() {
        let mut f = MeasurementFrame::empty(NaiveDateTime::default());
        f.set(Field::Irradiance, Some(f64::NAN));
        assert_eq!(f.get(Field::Irradiance), None);
        f.set(Field::Irradiance, Some(812.5));
        assert_eq!(f.valid_count(), 1);
        assert_eq!(f.flags().len(), FIELD_COUNT - 1);
    }

    #[test]
    fn quantize_uses_archive_precision() {
        assert_eq!(Field::Thermal(0).quantize(25.00049), 25.0);
        assert_eq!(Field::Amps(1).quantize(0.123456), 0.12346);
    }
}
