//! Prints the analog front-end wiring and the thermistor scan plan.
//!
//! cargo run --example channel_map

use pvdaq::hal::{AdcInput, ChannelMap, MuxId};

fn main() {
    let map = ChannelMap::default();
    println!("code  MUX1  MUX2  MUX3");
    for code in 0..8 {
        let cell = |m| map.signal_at(m, code).map_or("-".to_string(), |s| s.to_string());
        println!(
            "{code} {code:03b}  {:<5} {:<5} {}",
            cell(MuxId::Mux1),
            cell(MuxId::Mux2),
            cell(MuxId::Mux3)
        );
    }
    println!();
    for input in AdcInput::ALL {
        println!("{input} <- {:?}", map.source_of(input));
    }
    let addrs: Vec<String> = map.power_monitor_addresses().iter().map(|a| format!("{a:#04x}")).collect();
    println!("power monitors at {}", addrs.join(", "));
    println!();
    println!("scan plan (select code -> reads):");
    for (code, reads) in map.thermistor_scan_plan() {
        let r: Vec<String> = reads.iter().map(|(input, t)| format!("{input}:T{t}")).collect();
        println!("  {code}: {}", r.join(" "));
    }
    println!("ADC reads per reporting pass: {}", map.reads_per_reporting_pass());
}
