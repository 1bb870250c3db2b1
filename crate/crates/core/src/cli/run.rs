use std::fs::{File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use signal_hook::consts::{SIGINT, SIGTERM};

use super::{load_config, CliError};
use crate::acquire::{FastSampler, SharedBuffers};
use crate::clock::{Clock, SystemClock};
use crate::config::{BackendKind, RunConfig, SinkKind};
use crate::daemon::{run_threaded, Node, NodeIo, NodeSettings};
use crate::hal::fault::FaultScript;
use crate::hal::sim::{SimBackend, SimWorld};
use crate::hal::{Bus, Hal};
use crate::ops_log::OpsLog;
use crate::store::sink::{FileSink, HttpSink, OutageSink, SinkClient, SinkError};
use crate::store::sync::{DirectoryTarget, OutageTarget, SyncTarget};

pub const LOCK_FILE: &str = "daq.lock";

pub fn lock_path(state_dir: &Path) -> PathBuf {
    state_dir.join(LOCK_FILE)
}

/// Exclusive hold on the state directory, released when dropped.
pub struct InstanceLock {
    _file: File,
}

impl InstanceLock {
    /// Takes the lock and records this process id in it.
    pub fn acquire(state_dir: &Path) -> Result<Self, CliError> {
        let path = lock_path(state_dir);
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        match file.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => {
                return Err(CliError::Runtime(format!(
                    "another instance is running ({} is locked)",
                    path.display()
                )))
            }
            Err(TryLockError::Error(e)) => return Err(CliError::Runtime(format!("{}: {e}", path.display()))),
        }
        file.set_len(0)
            .and_then(|()| writeln!(file, "{}", std::process::id()))
            .and_then(|()| file.sync_all())
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(Self { _file: file })
    }
}

/// Accepts and discards every batch (`[sink] kind = "none"`).
struct NullSink;

impl SinkClient for NullSink {
    fn write_batch(&mut self, _lines: &str) -> Result<(), SinkError> {
        Ok(())
    }
}

pub fn cmd_run(config: Option<&Path>) -> Result<(), CliError> {
    let (cfg, _) = load_config(config)?;
    cfg.check_paths()?;
    if cfg.backend == BackendKind::Hw {
        return Err(CliError::Validation(
            "backend = \"hw\": this build has no platform bus driver; implement hal::register::I2cBus and \
             GpioPort for the target board, or use backend = \"sim\""
                .into(),
        ));
    }
    let _lock = InstanceLock::acquire(&cfg.paths.state_dir)?;
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [SIGINT, SIGTERM] {
        // A second signal just sets the flag again; cleanup runs once.
        signal_hook::flag::register(sig, stop.clone())
            .map_err(|e| CliError::Runtime(format!("signal handler: {e}")))?;
    }
    let (node, sampler) = build_sim_node(&cfg)?;
    run_threaded(node, sampler, stop);
    Ok(())
}

/// Wires a node to the simulated backend on the wall clock.
pub fn build_sim_node(cfg: &RunConfig) -> Result<(Node, FastSampler), CliError> {
    let offset = cfg.utc_offset().expect("validated offset");
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new(offset));
    let now = clock.now();
    let log = OpsLog::open(&cfg.paths.log_dir, clock.clone())
        .map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.paths.log_dir.display())))?
        .with_echo(true);
    let script = match &cfg.sim.fault_script {
        Some(p) => FaultScript::load(p, now.date()).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
        None => FaultScript::empty(),
    };
    if script.power_cycles().next().is_some() {
        log.warn("daemon", "power_cycle entries are only replayed by `simulate`; ignoring them");
    }
    let world = SimWorld::new(
        cfg.sim.environment.clone(),
        cfg.calibration.clone(),
        cfg.channel_map(),
        cfg.sim.seed,
        script.clone(),
        now,
    )
    .shared();
    let backend = SimBackend::new(world, clock.clone());
    let hal = Hal::new(Box::new(backend), clock.clone(), cfg.channel_map(), cfg.timing(), cfg.init_settings());
    let bus = Bus::new(hal);
    let buffers = SharedBuffers::new();
    let acquiring = Arc::new(AtomicBool::new(false));
    let sink: Box<dyn SinkClient> = match cfg.sink.kind {
        SinkKind::None => Box::new(NullSink),
        SinkKind::File => Box::new(OutageSink::new(
            FileSink::new(cfg.sink.export_path.clone()),
            script.clone(),
            clock.clone(),
        )),
        SinkKind::Http => Box::new(HttpSink::new(&cfg.sink.endpoint, &cfg.sink.org, &cfg.sink.bucket, &cfg.sink.token)),
    };
    let sync_target: Option<Box<dyn SyncTarget>> = cfg.sync.target_dir.as_ref().map(|d| {
        Box::new(OutageTarget::new(DirectoryTarget::new(d.clone()), script.clone(), clock.clone())) as Box<dyn SyncTarget>
    });
    let sampler = FastSampler::new(bus.clone(), cfg.calibration.clone(), buffers.clone(), acquiring.clone(), log.clone());
    let node = Node::boot(
        NodeSettings::from_config(cfg),
        NodeIo {
            clock,
            bus,
            log,
            buffers,
            acquiring,
            sink,
            sync_target,
        },
    )
    .map_err(|e| CliError::Runtime(format!("startup: {e}")))?;
    Ok((node, sampler))
}
