use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{load_config, CliError};
use crate::config::BackendKind;
use crate::daemon::scenario::{
    find_scenario, run_simulation, scenario_names, SimulationSetup, CUSTOM_SCENARIO, REPORT_FILE, SINK_EXPORT,
    SCENARIOS,
};

pub const RESOLVED_CONFIG: &str = "daq.toml";

/// Files and directories a replay writes into its output directory.
const ARTIFACTS: &[&str] = &["archive", "state", "logs", "remote", SINK_EXPORT, REPORT_FILE, RESOLVED_CONFIG];

/// Removes a previous replay's artifacts so runs never see each other's
/// state. Anything else in `out` is left alone.
fn clear_previous(out: &Path) -> io::Result<()> {
    for name in ARTIFACTS {
        let p = out.join(name);
        if p.is_dir() {
            fs::remove_dir_all(&p)?;
        } else if p.exists() {
            fs::remove_file(&p)?;
        }
    }
    Ok(())
}

fn unknown(name: &str) -> CliError {
    let mut msg = format!("unknown scenario `{name}`; available:");
    for s in SCENARIOS {
        msg.push_str(&format!("\n  {:<20} {}", s.name, s.summary));
    }
    msg.push_str(&format!("\n  {CUSTOM_SCENARIO:<20} [sim] fault_script over the configured window"));
    CliError::Validation(msg)
}

pub fn cmd_simulate(
    config: Option<&Path>,
    scenario: &str,
    speedup: Option<f64>,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    if !scenario_names().contains(&scenario) {
        return Err(unknown(scenario));
    }
    let (mut cfg, _) = load_config(config)?;
    if cfg.backend != BackendKind::Sim {
        return Err(CliError::Validation("simulate requires backend = \"sim\"".into()));
    }
    if let Some(s) = speedup {
        if s.is_nan() || s <= 0.0 {
            return Err(CliError::Validation(format!("--speedup must be positive, got {s}")));
        }
    }
    if let Some(seed) = seed {
        cfg.sim.seed = seed;
    }
    let out: PathBuf = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("sim_out").join(scenario));
    let runtime = |e: String| CliError::Runtime(e);
    fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let out = out.canonicalize().map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    clear_previous(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;

    let mut setup = match find_scenario(scenario) {
        Some(s) => SimulationSetup::builtin(s, cfg, &out),
        None => SimulationSetup::custom(cfg, &out),
    }
    .map_err(|e| CliError::Validation(e.to_string()))?;
    setup.speedup = speedup;
    fs::write(out.join(RESOLVED_CONFIG), setup.config.to_toml())
        .map_err(|e| runtime(format!("{}: {e}", out.display())))?;

    let wall = Instant::now();
    let report = run_simulation(&setup).map_err(|e| runtime(e.to_string()))?;
    let secs = wall.elapsed().as_secs_f64();
    let simulated = (setup.end - setup.start).num_seconds() as f64;
    println!("{report}");
    println!("wall       {secs:.2} s ({:.0}x real time)", simulated / secs.max(1e-9));
    println!("output     {}", out.display());
    Ok(())
}
