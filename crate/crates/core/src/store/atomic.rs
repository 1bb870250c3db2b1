use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Where an injected crash interrupts [`write_atomic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// Nothing on disk has changed yet.
    BeforeTemp,
    /// The temp file holds only the first `n` bytes.
    PartialWrite(usize),
    /// All bytes written to the temp file but not synced.
    BeforeSync,
    /// Temp file durable, rename not yet issued.
    BeforeRename,
    /// Renamed, directory entry not yet synced.
    BeforeDirSync,
}

impl CrashPoint {
    /// Every injection point for a payload of `len` bytes.
    pub fn all(len: usize) -> Vec<CrashPoint> {
        let mut v = vec![CrashPoint::BeforeTemp];
        v.extend((0..len).map(CrashPoint::PartialWrite));
        v.extend([
            CrashPoint::BeforeSync,
            CrashPoint::BeforeRename,
            CrashPoint::BeforeDirSync,
        ]);
        v
    }
}

pub fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Replaces `path` with `bytes` so that a reader (or a reboot) sees either
/// the previous content or the new content in full.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    write_atomic_with(path, bytes, None).map(|_| ())
}

/// As [`write_atomic`], stopping dead at `crash`. Returns `Ok(false)` when the
/// crash point was hit.
pub fn write_atomic_with(path: &Path, bytes: &[u8], crash: Option<CrashPoint>) -> io::Result<bool> {
    let hit = |p: CrashPoint| crash == Some(p);
    if hit(CrashPoint::BeforeTemp) {
        return Ok(false);
    }
    let tmp = temp_path(path);
    let mut f = OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .open(&tmp)?;
    if let Some(CrashPoint::PartialWrite(n)) = crash {
        f.write_all(&bytes[..n.min(bytes.len())])?;
        return Ok(false);
    }
    f.write_all(bytes)?;
    if hit(CrashPoint::BeforeSync) {
        return Ok(false);
    }
    f.sync_all()?;
    drop(f);
    if hit(CrashPoint::BeforeRename) {
        return Ok(false);
    }
    fs::rename(&tmp, path)?;
    if hit(CrashPoint::BeforeDirSync) {
        return Ok(false);
    }
    if let Some(dir) = path.parent() {
        let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
        File::open(dir)?.sync_all()?;
    }
    Ok(true)
}
