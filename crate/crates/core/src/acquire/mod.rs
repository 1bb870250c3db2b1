//! Two-rate acquisition: the 1 Hz sampler feeding rolling windows, and the
//! minute scheduler that turns them into frames.

pub mod frame;
pub mod sampler;
pub mod scheduler;
pub mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convert::ConvertError;
use crate::hal::HalError;

pub use frame::{Field, MeasurementFrame, FIELD_COUNT, PANEL_COUNT};
pub use sampler::{run_fast_sampler, scan_thermistors, FastSampler, SampleBuffers, SharedBuffers};
pub use scheduler::{
    assemble_minute_frame, read_irradiance_pass, run_scheduler, Cursor, Event, OperatingWindow,
    ScheduleHandler, ScheduledEvent, Scheduler,
};
pub use window::{EmptyWindow, RollingWindow};

#[derive(Debug, Clone, Error)]
pub enum ReadError {
    #[error(transparent)]
    Hal(#[from] HalError),
    #[error(transparent)]
    Convert(#[from] ConvertError),
    #[error("wiring: {0}")]
    Wiring(String),
}

/// Per-session accumulators carried across frames and persisted in the
/// session state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionCounters {
    /// Rain since day start, mm.
    pub rain_day_accum: f64,
    /// Added to each monitor's energy register, J.
    pub energy_offsets: [f64; PANEL_COUNT],
    /// Last reported cumulative energy per panel, J.
    pub energy_last: [f64; PANEL_COUNT],
}

impl SessionCounters {
    /// Called after the monitors' accumulators were zeroed, so the reported
    /// energy continues from where it was.
    pub fn rebase_energy(&mut self) {
        self.energy_offsets = self.energy_last;
    }
}
