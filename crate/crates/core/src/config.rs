//! Run configuration (`daq.toml`).
//!
//! Lookup order: `--config <path>`, then `$DAQ_CONFIG`, then `./daq.toml`,
//! then built-in defaults. Relative paths inside the file are resolved
//! against the file's directory.
//!
//! ```toml
//! backend = "sim"                # "sim" or "hw"
//!
//! [site]
//! utc_offset = "-06:00"
//! window_start = "05:00"
//! window_end = "18:00"
//!
//! [paths]
//! archive_dir = "archive"
//! state_dir = "state"
//! log_dir = "logs"
//!
//! [sink]
//! kind = "file"                  # "none", "file" or "http"
//! export_path = "sink_export.lp"
//! endpoint = "http://localhost:8086"
//! org = "lab"
//! bucket = "pv"
//! token = ""
//! backlog_limit = 1440
//!
//! [sync]
//! target_dir = "remote"          # omit to disable archive sync
//!
//! [sim]
//! seed = 1
//! date = "2025-03-10"            # simulated day for `simulate`
//! fault_script = "faults.toml"   # optional
//!
//! [timing]
//! mux_settle_ms = 5
//! adc_conversion_ms = 16
//! irradiance_settle_ms = 100
//! ambient_min_interval_ms = 2000
//!
//! [recovery]
//! reinit_threshold = 10
//!
//! [channels]
//! power_monitor_addresses = [0x40, 0x41]
//! ```
//!
//! `[calibration]` and `[sim.environment]` accept the fields of
//! [`Calibration`] and [`EnvironmentParams`].

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{FixedOffset, NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquire::OperatingWindow;
use crate::convert::Calibration;
use crate::hal::sim::EnvironmentParams;
use crate::hal::{ChannelMap, InitSettings, Timing};
use crate::store::sink::DEFAULT_BACKLOG_LIMIT;

pub const CONFIG_ENV: &str = "DAQ_CONFIG";
pub const DEFAULT_CONFIG_FILE: &str = "daq.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Sim,
    Hw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteConfig {
    pub utc_offset: String,
    #[serde(with = "hhmm")]
    pub window_start: NaiveTime,
    #[serde(with = "hhmm")]
    pub window_end: NaiveTime,
}

impl Default for SiteConfig {
    fn default() -> Self {
        let w = OperatingWindow::default();
        Self {
            utc_offset: "-06:00".into(),
            window_start: w.start,
            window_end: w.end,
        }
    }
}

mod hhmm {
    use chrono::NaiveTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format("%H:%M").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveTime, D::Error> {
        let s = String::deserialize(d)?;
        NaiveTime::parse_from_str(&s, "%H:%M")
            .or_else(|_| NaiveTime::parse_from_str(&s, "%H:%M:%S"))
            .map_err(|e| serde::de::Error::custom(format!("`{s}`: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub archive_dir: PathBuf,
    pub state_dir: PathBuf,
    pub log_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            archive_dir: "archive".into(),
            state_dir: "state".into(),
            log_dir: "logs".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SinkKind {
    None,
    File,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkConfig {
    pub kind: SinkKind,
    pub export_path: PathBuf,
    pub endpoint: String,
    pub org: String,
    pub bucket: String,
    pub token: String,
    pub backlog_limit: usize,
}

impl Default for SinkConfig {
    fn default() -> Self {
        Self {
            kind: SinkKind::File,
            export_path: "sink_export.lp".into(),
            endpoint: String::new(),
            org: String::new(),
            bucket: String::new(),
            token: String::new(),
            backlog_limit: DEFAULT_BACKLOG_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncConfig {
    pub target_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub date: NaiveDate,
    pub fault_script: Option<PathBuf>,
    pub environment: EnvironmentParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            date: NaiveDate::from_ymd_opt(2025, 3, 10).unwrap(),
            fault_script: None,
            environment: EnvironmentParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub mux_settle_ms: u64,
    pub adc_conversion_ms: u64,
    pub irradiance_settle_ms: u64,
    pub ambient_min_interval_ms: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        let t = Timing::default();
        let ms = |d: Duration| d.as_millis() as u64;
        Self {
            mux_settle_ms: ms(t.mux_settle),
            adc_conversion_ms: ms(t.adc_conversion),
            irradiance_settle_ms: ms(t.irradiance_settle),
            ambient_min_interval_ms: ms(t.ambient_min_interval),
        }
    }
}

impl From<TimingConfig> for Timing {
    fn from(t: TimingConfig) -> Self {
        Timing {
            mux_settle: Duration::from_millis(t.mux_settle_ms),
            adc_conversion: Duration::from_millis(t.adc_conversion_ms),
            irradiance_settle: Duration::from_millis(t.irradiance_settle_ms),
            ambient_min_interval: Duration::from_millis(t.ambient_min_interval_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub reinit_threshold: u32,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { reinit_threshold: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelsConfig {
    pub power_monitor_addresses: Vec<u8>,
}

impl Default for ChannelsConfig {
    fn default() -> Self {
        Self {
            power_monitor_addresses: ChannelMap::default().power_monitor_addresses().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub site: SiteConfig,
    pub paths: PathsConfig,
    pub sink: SinkConfig,
    pub sync: SyncConfig,
    pub sim: SimConfig,
    pub timing: TimingConfig,
    pub recovery: RecoveryConfig,
    pub channels: ChannelsConfig,
    pub calibration: Calibration,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Sim,
            site: SiteConfig::default(),
            paths: PathsConfig::default(),
            sink: SinkConfig::default(),
            sync: SyncConfig::default(),
            sim: SimConfig::default(),
            timing: TimingConfig::default(),
            recovery: RecoveryConfig::default(),
            channels: ChannelsConfig::default(),
            calibration: Calibration::default(),
        }
    }
}

/// One field-level validation problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration:\n{}", list(.0))]
    Invalid(Vec<Diagnostic>),
}

fn list(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

/// Which file (if any) supplied the configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigSource {
    Flag(PathBuf),
    Env(PathBuf),
    WorkingDir(PathBuf),
    Defaults,
}

impl ConfigSource {
    pub fn path(&self) -> Option<&Path> {
        match self {
            ConfigSource::Flag(p) | ConfigSource::Env(p) | ConfigSource::WorkingDir(p) => Some(p),
            ConfigSource::Defaults => None,
        }
    }
}

/// Applies the lookup order. `env` is the value of `$DAQ_CONFIG`, if set.
pub fn locate(flag: Option<&Path>, env: Option<&str>, cwd: &Path) -> ConfigSource {
    if let Some(p) = flag {
        return ConfigSource::Flag(p.to_path_buf());
    }
    if let Some(p) = env.filter(|s| !s.is_empty()) {
        return ConfigSource::Env(PathBuf::from(p));
    }
    let local = cwd.join(DEFAULT_CONFIG_FILE);
    if local.is_file() {
        return ConfigSource::WorkingDir(local);
    }
    ConfigSource::Defaults
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads the selected source and resolves relative paths against its
    /// directory (or `cwd` for defaults).
    pub fn load(source: &ConfigSource, cwd: &Path) -> Result<Self, ConfigError> {
        let (mut cfg, base) = match source.path() {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_path_buf(),
                    source,
                })?;
                let base = path
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .map(|p| cwd.join(p))
                    .unwrap_or_else(|| cwd.to_path_buf());
                (Self::parse(&text, path)?, base)
            }
            None => (Self::default(), cwd.to_path_buf()),
        };
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.archive_dir);
        fix(&mut self.paths.state_dir);
        fix(&mut self.paths.log_dir);
        fix(&mut self.sink.export_path);
        if let Some(p) = &mut self.sync.target_dir {
            fix(p);
        }
        if let Some(p) = &mut self.sim.fault_script {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn utc_offset(&self) -> Option<FixedOffset> {
        self.site.utc_offset.parse().ok()
    }

    pub fn window(&self) -> OperatingWindow {
        OperatingWindow {
            start: self.site.window_start,
            end: self.site.window_end,
        }
    }

    pub fn timing(&self) -> Timing {
        self.timing.into()
    }

    pub fn channel_map(&self) -> ChannelMap {
        ChannelMap::default()
            .with_power_monitor_addresses(self.channels.power_monitor_addresses.clone())
            .unwrap_or_default()
    }

    pub fn init_settings(&self) -> InitSettings {
        InitSettings {
            power_monitors: self.channels.power_monitor_addresses.clone(),
            current_lsb: self.calibration.electrical.current_lsb(),
            adc_full_scale: self.calibration.adc_full_scale,
            ..InitSettings::default()
        }
    }

    /// Checks every value that does not depend on the filesystem.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut d = Vec::new();
        let mut bad = |field: &str, message: String| {
            d.push(Diagnostic {
                field: field.to_string(),
                message,
            })
        };
        if self.utc_offset().is_none() {
            bad("site.utc_offset", format!("`{}` is not a ±HH:MM offset", self.site.utc_offset));
        }
        if self.site.window_start >= self.site.window_end {
            bad("site.window_start", "must be earlier than site.window_end".into());
        }
        if let Err(e) = self.calibration.validate() {
            bad("calibration", e.to_string());
        }
        if let Err(e) = ChannelMap::default().with_power_monitor_addresses(self.channels.power_monitor_addresses.clone()) {
            bad("channels.power_monitor_addresses", e.to_string());
        } else if self.channels.power_monitor_addresses.len() != crate::acquire::PANEL_COUNT {
            bad(
                "channels.power_monitor_addresses",
                format!("expected {} addresses", crate::acquire::PANEL_COUNT),
            );
        }
        if self.recovery.reinit_threshold == 0 {
            bad("recovery.reinit_threshold", "must be at least 1".into());
        }
        if self.sink.backlog_limit == 0 {
            bad("sink.backlog_limit", "must be at least 1".into());
        }
        if self.sink.kind == SinkKind::Http {
            if self.sink.endpoint.is_empty() {
                bad("sink.endpoint", "required when sink.kind = \"http\"".into());
            } else if !self.sink.endpoint.starts_with("http://") {
                bad("sink.endpoint", "only http:// endpoints are supported".into());
            }
            if self.sink.bucket.is_empty() {
                bad("sink.bucket", "required when sink.kind = \"http\"".into());
            }
        }
        let t = &self.timing;
        if t.adc_conversion_ms == 0 {
            bad("timing.adc_conversion_ms", "must be positive".into());
        }
        let scan_ms = 8 * t.mux_settle_ms + 20 * t.adc_conversion_ms;
        if scan_ms >= 5000 {
            bad("timing", format!("thermistor scan would take {scan_ms} ms, over the 5 s cadence"));
        }
        if d.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(d))
        }
    }

    /// Each configured directory must exist and accept new files.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let mut d = Vec::new();
        let mut dirs = vec![
            ("paths.archive_dir", &self.paths.archive_dir),
            ("paths.state_dir", &self.paths.state_dir),
            ("paths.log_dir", &self.paths.log_dir),
        ];
        if let Some(p) = &self.sync.target_dir {
            dirs.push(("sync.target_dir", p));
        }
        for (field, dir) in dirs {
            if let Err(msg) = check_writable_dir(dir) {
                d.push(Diagnostic {
                    field: field.into(),
                    message: format!("{}: {msg}", dir.display()),
                });
            }
        }
        if self.sink.kind == SinkKind::File {
            let parent = self.sink.export_path.parent().unwrap_or(Path::new("."));
            if let Err(msg) = check_writable_dir(parent) {
                d.push(Diagnostic {
                    field: "sink.export_path".into(),
                    message: format!("{}: {msg}", parent.display()),
                });
            }
        }
        if d.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(d))
        }
    }
}

fn check_writable_dir(dir: &Path) -> Result<(), String> {
    if !dir.is_dir() {
        return Err("directory does not exist".into());
    }
    let probe = dir.join(format!(".daq_probe_{}", std::process::id()));
    OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .open(&probe)
        .map_err(|e| format!("not writable ({e})"))?;
    let _ = fs::remove_file(probe);
    Ok(())
}
