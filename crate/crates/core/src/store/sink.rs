use std::collections::VecDeque;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDateTime;
use thiserror::Error;

use super::atomic::write_atomic;
use crate::clock::Clock;
use crate::hal::fault::FaultScript;

pub const SPOOL_FILE: &str = "sink_backlog.lp";
/// One day of minute frames.
pub const DEFAULT_BACKLOG_LIMIT: usize = 1440;

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("sink unreachable: {0}")]
    Unreachable(String),
    #[error("sink rejected batch: {0}")]
    Rejected(String),
    #[error("sink io: {0}")]
    Io(#[from] io::Error),
}

pub trait SinkClient: Send {
    /// Delivers one batch of newline-separated lines.
    fn write_batch(&mut self, lines: &str) -> Result<(), SinkError>;
}

/// Appends delivered batches to a local export file.
pub struct FileSink {
    path: PathBuf,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl SinkClient for FileSink {
    fn write_batch(&mut self, lines: &str) -> Result<(), SinkError> {
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(lines.as_bytes())?;
        if !lines.ends_with('\n') {
            f.write_all(b"\n")?;
        }
        f.sync_data()?;
        Ok(())
    }
}

/// InfluxDB v2 style HTTP write endpoint.
pub struct HttpSink {
    agent: ureq::Agent,
    url: String,
    token: String,
}

impl HttpSink {
    pub fn new(endpoint: &str, org: &str, bucket: &str, token: &str) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(10))
            .build();
        let url = format!(
            "{}/api/v2/write?org={}&bucket={}&precision=s",
            endpoint.trim_end_matches('/'),
            encode_query(org),
            encode_query(bucket)
        );
        Self {
            agent,
            url,
            token: token.to_string(),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn encode_query(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

impl SinkClient for HttpSink {
    fn write_batch(&mut self, lines: &str) -> Result<(), SinkError> {
        let mut req = self
            .agent
            .post(&self.url)
            .set("Content-Type", "text/plain; charset=utf-8");
        if !self.token.is_empty() {
            req = req.set("Authorization", &format!("Token {}", self.token));
        }
        match req.send_string(lines) {
            Ok(_) => Ok(()),
            Err(ureq::Error::Status(code, resp)) => Err(SinkError::Rejected(format!(
                "HTTP {code}: {}",
                resp.into_string().unwrap_or_default()
            ))),
            Err(e) => Err(SinkError::Unreachable(e.to_string())),
        }
    }
}

/// Simulated network: fails every write while a scripted outage covers the
/// current time.
pub struct OutageSink<S> {
    inner: S,
    script: FaultScript,
    clock: Arc<dyn Clock>,
    attempts: u64,
}

impl<S: SinkClient> OutageSink<S> {
    pub fn new(inner: S, script: FaultScript, clock: Arc<dyn Clock>) -> Self {
        Self {
            inner,
            script,
            clock,
            attempts: 0,
        }
    }

    pub fn attempts(&self) -> u64 {
        self.attempts
    }
}

impl<S: SinkClient> SinkClient for OutageSink<S> {
    fn write_batch(&mut self, lines: &str) -> Result<(), SinkError> {
        self.attempts += 1;
        if self.script.net_down_at(self.clock.now()) {
            return Err(SinkError::Unreachable("network outage".into()));
        }
        self.inner.write_batch(lines)
    }
}

/// Encoded lines of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub frame_time: NaiveDateTime,
    pub lines: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DrainReport {
    pub delivered: usize,
    pub remaining: usize,
    pub error: Option<String>,
}

/// FIFO of batches awaiting delivery, bounded; the oldest batch is dropped
/// on overflow. Optionally spooled to disk so it survives restarts.
#[derive(Debug, Clone)]
pub struct SinkBacklog {
    pending: VecDeque<Batch>,
    limit: usize,
    high_water: usize,
    dropped: u64,
    spool: Option<PathBuf>,
}

impl SinkBacklog {
    pub fn new(limit: usize) -> Self {
        Self {
            pending: VecDeque::new(),
            limit: limit.max(1),
            high_water: 0,
            dropped: 0,
            spool: None,
        }
    }

    /// Backlog persisted at `path`, reloading any batches left there.
    pub fn with_spool(limit: usize, path: PathBuf) -> io::Result<Self> {
        let mut b = Self::new(limit);
        match fs::read_to_string(&path) {
            Ok(text) => {
                for batch in parse_spool(&text) {
                    b.enqueue(batch);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        b.spool = Some(path);
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn high_water(&self) -> usize {
        self.high_water
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn pending(&self) -> impl Iterator<Item = &Batch> {
        self.pending.iter()
    }

    /// Queues a batch. Returns the batch evicted to make room, if any.
    pub fn enqueue(&mut self, batch: Batch) -> Option<Batch> {
        let evicted = if self.pending.len() >= self.limit {
            self.dropped += 1;
            self.pending.pop_front()
        } else {
            None
        };
        self.pending.push_back(batch);
        self.high_water = self.high_water.max(self.pending.len());
        evicted
    }

    /// Delivers batches in order until one fails. Network failure is not an
    /// error; the remaining batches wait for the next push.
    pub fn push(&mut self, client: &mut dyn SinkClient) -> DrainReport {
        let mut report = DrainReport::default();
        if self.pending.is_empty() {
            return report;
        }
        while let Some(batch) = self.pending.front() {
            match client.write_batch(&batch.lines) {
                Ok(()) => {
                    self.pending.pop_front();
                    report.delivered += 1;
                }
                Err(e) => {
                    report.error = Some(e.to_string());
                    break;
                }
            }
        }
        report.remaining = self.pending.len();
        report
    }

    /// Brings the spool file in line with the queue.
    pub fn persist(&self) -> io::Result<()> {
        let Some(path) = &self.spool else {
            return Ok(());
        };
        if self.pending.is_empty() {
            return match fs::remove_file(path) {
                Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
                _ => Ok(()),
            };
        }
        let mut text = String::new();
        for b in &self.pending {
            text.push_str(&format!("# {}\n", b.frame_time.format("%Y-%m-%dT%H:%M:%S")));
            text.push_str(&b.lines);
            if !b.lines.ends_with('\n') {
                text.push('\n');
            }
        }
        write_atomic(path, text.as_bytes())
    }
}

fn parse_spool(text: &str) -> Vec<Batch> {
    let mut out: Vec<Batch> = Vec::new();
    for line in text.lines() {
        if let Some(ts) = line.strip_prefix("# ") {
            if let Ok(t) = NaiveDateTime::parse_from_str(ts, "%Y-%m-%dT%H:%M:%S") {
                out.push(Batch {
                    frame_time: t,
                    lines: String::new(),
                });
            }
        } else if let Some(b) = out.last_mut() {
            b.lines.push_str(line);
            b.lines.push('\n');
        }
    }
    out.retain(|b| !b.lines.is_empty());
    out
}
