//! Replays a built-in scenario into a scratch directory and prints the
//! report.
//!
//! cargo run --example scenario_replay -- power-cycle-midday

use pvdaq::config::RunConfig;
use pvdaq::daemon::scenario::{find_scenario, run_simulation, scenario_names, SimulationSetup};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "sensor-fail".into());
    let Some(scenario) = find_scenario(&name) else {
        eprintln!("unknown scenario {name}; try one of {:?}", scenario_names());
        std::process::exit(1);
    };
    let out = tempfile::tempdir().expect("tempdir");
    let setup = SimulationSetup::builtin(scenario, RunConfig::default(), out.path()).expect("setup");
    let report = run_simulation(&setup).expect("replay");
    println!("{report}");
}
