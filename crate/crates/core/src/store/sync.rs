use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::atomic::write_atomic;
use super::csv::list_archives;
use crate::clock::Clock;
use crate::hal::fault::FaultScript;

pub const MANIFEST_FILE: &str = "sync_manifest.txt";

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("remote unavailable: {0}")]
    Unavailable(String),
    #[error("sync io: {0}")]
    Io(#[from] io::Error),
}

/// Remote copy destination for archive files.
pub trait SyncTarget: Send {
    fn put(&mut self, name: &str, contents: &[u8]) -> Result<(), SyncError>;
}

/// Mirrors files into a local directory.
pub struct DirectoryTarget {
    dir: PathBuf,
}

impl DirectoryTarget {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl SyncTarget for DirectoryTarget {
    fn put(&mut self, name: &str, contents: &[u8]) -> Result<(), SyncError> {
        fs::create_dir_all(&self.dir)?;
        write_atomic(&self.dir.join(name), contents)?;
        Ok(())
    }
}

/// Simulated remote that refuses transfers during scripted network outages.
pub struct OutageTarget<T> {
    inner: T,
    script: FaultScript,
    clock: Arc<dyn Clock>,
}

impl<T: SyncTarget> OutageTarget<T> {
    pub fn new(inner: T, script: FaultScript, clock: Arc<dyn Clock>) -> Self {
        Self { inner, script, clock }
    }
}

impl<T: SyncTarget> SyncTarget for OutageTarget<T> {
    fn put(&mut self, name: &str, contents: &[u8]) -> Result<(), SyncError> {
        if self.script.net_down_at(self.clock.now()) {
            return Err(SyncError::Unavailable("network outage".into()));
        }
        self.inner.put(name, contents)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyncReport {
    pub transferred: Vec<String>,
    pub unchanged: usize,
    pub error: Option<String>,
}

/// Content hashes of files already on the remote, persisted next to the
/// archive so re-runs skip unchanged files.
#[derive(Debug)]
pub struct ArchiveSync {
    manifest_path: PathBuf,
    sent: BTreeMap<String, String>,
}

impl ArchiveSync {
    pub fn open(manifest_path: PathBuf) -> io::Result<Self> {
        let mut sent = BTreeMap::new();
        match fs::read_to_string(&manifest_path) {
            Ok(text) => {
                for line in text.lines() {
                    if let Some((hash, name)) = line.split_once("  ") {
                        sent.insert(name.to_string(), hash.to_string());
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        Ok(Self { manifest_path, sent })
    }

    fn save(&self) -> io::Result<()> {
        let text: String = self
            .sent
            .iter()
            .map(|(name, hash)| format!("{hash}  {name}\n"))
            .collect();
        write_atomic(&self.manifest_path, text.as_bytes())
    }

    /// Copies new or changed archive files. Stops at the first failed
    /// transfer; the rest are retried on the next call.
    pub fn sync_archives(&mut self, archive_dir: &Path, target: &mut dyn SyncTarget) -> SyncReport {
        let mut report = SyncReport::default();
        let files = match list_archives(archive_dir) {
            Ok(f) => f,
            Err(e) => {
                report.error = Some(e.to_string());
                return report;
            }
        };
        for path in files {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            let contents = match fs::read(&path) {
                Ok(c) => c,
                Err(e) => {
                    report.error = Some(format!("{name}: {e}"));
                    break;
                }
            };
            let hash = hex::encode(Sha256::digest(&contents));
            if self.sent.get(&name) == Some(&hash) {
                report.unchanged += 1;
                continue;
            }
            match target.put(&name, &contents) {
                Ok(()) => {
                    self.sent.insert(name.clone(), hash);
                    report.transferred.push(name);
                }
                Err(e) => {
                    report.error = Some(e.to_string());
                    break;
                }
            }
        }
        if !report.transferred.is_empty() {
            if let Err(e) = self.save() {
                report.error.get_or_insert(format!("manifest: {e}"));
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::hal::fault::{FaultEntry, FaultKind};
    use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
    use std::time::Duration;

    fn t(m: i64) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2025, 3, 10).unwrap().and_hms_opt(10, 0, 0).unwrap() + TimeDelta::minutes(m)
    }

    #[test]
    fn transfers_once_then_idempotent() {
        let local = tempfile::tempdir().unwrap();
        let remote = tempfile::tempdir().unwrap();
        fs::write(local.path().join("data_20250310.csv"), "h\n").unwrap();
        let mut sync = ArchiveSync::open(local.path().join(MANIFEST_FILE)).unwrap();
        let mut target = DirectoryTarget::new(remote.path());
        let r = sync.sync_archives(local.path(), &mut target);
        assert_eq!(r.transferred, ["data_20250310.csv"]);
        let r = sync.sync_archives(local.path(), &mut target);
        assert!(r.transferred.is_empty());
        assert_eq!(r.unchanged, 1);
        // A fresh process reads the manifest and still transfers nothing.
        let mut again = ArchiveSync::open(local.path().join(MANIFEST_FILE)).unwrap();
        assert!(again.sync_archives(local.path(), &mut target).transferred.is_empty());
        fs::write(local.path().join("data_20250310.csv"), "h\nrow\n").unwrap();
        assert_eq!(again.sync_archives(local.path(), &mut target).transferred.len(), 1);
        assert_eq!(fs::read_to_string(remote.path().join("data_20250310.csv")).unwrap(), "h\nrow\n");
    }

    #[test]
    fn outage_defers_until_recovery() {
        let local = tempfile::tempdir().unwrap();
        let remote = tempfile::tempdir().unwrap();
        fs::write(local.path().join("data_20250310.csv"), "h\n").unwrap();
        let clock = Arc::new(SimClock::new(t(0)));
        let script = FaultScript::new(vec![FaultEntry {
            at: t(0),
            kind: FaultKind::NetOutage {
                duration: Duration::from_secs(15 * 60),
            },
        }])
        .unwrap();
        let mut target = OutageTarget::new(DirectoryTarget::new(remote.path()), script, clock.clone());
        let mut sync = ArchiveSync::open(local.path().join(MANIFEST_FILE)).unwrap();
        for cycle in 0..3 {
            clock.advance_to(t(5 * cycle));
            let r = sync.sync_archives(local.path(), &mut target);
            assert!(r.error.is_some());
            assert!(!remote.path().join("data_20250310.csv").exists());
        }
        clock.advance_to(t(15));
        let r = sync.sync_archives(local.path(), &mut target);
        assert_eq!(r.transferred.len(), 1);
        assert!(remote.path().join("data_20250310.csv").exists());
    }
}
