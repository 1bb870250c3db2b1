//! Line-protocol encoding and the bounded backlog riding out a sink outage.
//!
//! cargo run --example sink_backlog

use chrono::{FixedOffset, NaiveDate, TimeDelta};
use pvdaq::acquire::{Field, MeasurementFrame};
use pvdaq::store::sink::SinkError;
use pvdaq::store::{encode_line_protocol, Batch, SinkBacklog, SinkClient};

/// Accepts writes only while `up` is set.
struct FlakySink {
    up: bool,
    received: usize,
}

impl SinkClient for FlakySink {
    fn write_batch(&mut self, lines: &str) -> Result<(), SinkError> {
        if !self.up {
            return Err(SinkError::Unreachable("connection refused".into()));
        }
        self.received += lines.lines().count();
        Ok(())
    }
}

fn main() {
    let offset = FixedOffset::west_opt(6 * 3600).unwrap();
    let t0 = NaiveDate::from_ymd_opt(2025, 3, 10).unwrap().and_hms_opt(10, 0, 0).unwrap();
    let frame = |i: i64| {
        let mut f = MeasurementFrame::empty(t0 + TimeDelta::minutes(i));
        for (k, field) in Field::all().into_iter().enumerate() {
            f.set(field, Some(20.0 + k as f64 * 0.5 + i as f64 * 0.01));
        }
        f.set(Field::Thermal(7), None);
        f
    };

    println!("frame 0 as line protocol:");
    for line in encode_line_protocol(&frame(0), offset).iter().take(4) {
        println!("  {line}");
    }
    println!("  ...");

    let mut sink = FlakySink { up: true, received: 0 };
    let mut backlog = SinkBacklog::new(5);
    for i in 0..12 {
        sink.up = !(3..9).contains(&i);
        let lines: String = encode_line_protocol(&frame(i), offset).into_iter().map(|l| l + "\n").collect();
        if let Some(lost) = backlog.enqueue(Batch {
            frame_time: t0 + TimeDelta::minutes(i),
            lines,
        }) {
            println!("minute {i}: backlog full, dropped {}", lost.frame_time.format("%H:%M"));
        }
        let r = backlog.push(&mut sink);
        println!(
            "minute {i}: sink {:<4} delivered {} pending {}",
            if sink.up { "up" } else { "down" },
            r.delivered,
            r.remaining
        );
    }
    println!("high water {}, dropped {}, lines received {}", backlog.high_water(), backlog.dropped(), sink.received);
}
