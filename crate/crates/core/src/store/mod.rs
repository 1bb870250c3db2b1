//! Persistence: daily CSV archive, session state, time-series sink with
//! backlog, and remote archive sync.

pub mod atomic;
pub mod csv;
pub mod line_protocol;
pub mod sink;
pub mod state;
pub mod sync;

pub use csv::{open_daily_csv, open_fresh_csv, read_archive, ArchiveError, DailyArchive};
pub use line_protocol::{decode_line_protocol, encode_line_protocol};
pub use sink::{Batch, DrainReport, FileSink, HttpSink, OutageSink, SinkBacklog, SinkClient};
pub use state::{load_state, write_state, SessionState, StateLoad};
pub use sync::{ArchiveSync, DirectoryTarget, OutageTarget, SyncReport, SyncTarget};
