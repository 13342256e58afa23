//! The harness decouples the fuzzer from the VP. It owns VP instances,
//! applies their configuration, and runs test cases in either restart mode
//! (fresh VP per case) or persistent mode (one VP, rewound to its snapshot
//! between cases, respawned after a crash).

pub mod config;
pub mod process;
pub mod protocol;
pub mod result;
pub mod vp;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

pub use config::{CrashMode, PersistentConfig, VpConfig, VpConfigError};
pub use result::{CrashReason, ExitKind, RunResult};
pub use vp::{Snapshot, StageTimings, Vp};

use crate::coverage::CoverageMap;
use crate::isa::bus::FaultKind;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(#[from] VpConfigError),
    #[error("failed to spawn VP: {0}")]
    Spawn(String),
    #[error("VP handshake failed: {0}")]
    Handshake(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("VP process died")]
    ChildDied,
    #[error("VP exceeded the wall-clock timeout")]
    WallClockTimeout,
}

/// One running VP, wherever it lives.
pub trait VpHandle {
    fn run(&mut self, input: &[u8]) -> Result<RunResult, HarnessError>;
    fn timings(&self) -> StageTimings;
}

pub struct EmbeddedVp {
    vp: Vp,
    timings: StageTimings,
}

impl EmbeddedVp {
    pub fn vp(&self) -> &Vp {
        &self.vp
    }
}

impl VpHandle for EmbeddedVp {
    fn run(&mut self, input: &[u8]) -> Result<RunResult, HarnessError> {
        Ok(self.vp.run(input))
    }

    fn timings(&self) -> StageTimings {
        self.timings
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Deployment {
    /// VP as a library instance in this process.
    Embedded,
    /// VP as a child process of the given executable (`<exe> vp`).
    Process(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExecMode {
    Restart,
    Persistent,
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecMode::Restart => "restart",
            ExecMode::Persistent => "persistent",
        })
    }
}

impl FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "restart" => Ok(ExecMode::Restart),
            "persistent" => Ok(ExecMode::Persistent),
            _ => Err(format!("unknown mode `{s}` (expected restart|persistent)")),
        }
    }
}

/// Creates a configured VP and reports its stage timings.
pub fn spawn_vp(config: &VpConfig, image: &[u8], deployment: &Deployment) -> Result<Box<dyn VpHandle>, HarnessError> {
    config.validate(image.len())?;
    Ok(match deployment {
        Deployment::Embedded => {
            let (vp, timings) = Vp::boot(config, image)?;
            Box::new(EmbeddedVp { vp, timings })
        }
        Deployment::Process(exe) => Box::new(process::ProcessVp::spawn(exe, config, image)?),
    })
}

/// Runs test cases against VPs it spawns and respawns as the mode requires.
pub struct Harness {
    config: VpConfig,
    image: Vec<u8>,
    deployment: Deployment,
    mode: ExecMode,
    handle: Option<Box<dyn VpHandle>>,
    spawns: u64,
    last_timings: StageTimings,
}

impl Harness {
    /// Validates the configuration; the first VP is spawned lazily.
    pub fn new(config: VpConfig, image: Vec<u8>, deployment: Deployment, mode: ExecMode) -> Result<Self, HarnessError> {
        config.validate(image.len())?;
        Ok(Harness { config, image, deployment, mode, handle: None, spawns: 0, last_timings: StageTimings::default() })
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    pub fn config(&self) -> &VpConfig {
        &self.config
    }

    /// Number of VPs created so far.
    pub fn spawns(&self) -> u64 {
        self.spawns
    }

    /// Stage timings of the most recent spawn.
    pub fn last_timings(&self) -> StageTimings {
        self.last_timings
    }

    /// Spawns a VP now if none is live. Returns true if one was created.
    pub fn ensure_spawned(&mut self) -> Result<bool, HarnessError> {
        if self.handle.is_some() {
            return Ok(false);
        }
        let h = spawn_vp(&self.config, &self.image, &self.deployment)?;
        self.last_timings = h.timings();
        self.spawns += 1;
        self.handle = Some(h);
        Ok(true)
    }

    pub fn run_case(&mut self, input: &[u8]) -> Result<RunResult, HarnessError> {
        self.ensure_spawned()?;
        let handle = self.handle.as_mut().expect("spawned above");
        let result = match handle.run(input) {
            Ok(r) => r,
            Err(HarnessError::ChildDied) => {
                self.handle = None;
                return Ok(synthetic(ExitKind::Crash(CrashReason::HardwareFault(FaultKind::BusError))));
            }
            Err(HarnessError::WallClockTimeout) => {
                self.handle = None;
                return Ok(synthetic(ExitKind::Timeout));
            }
            Err(e) => {
                self.handle = None;
                return Err(e);
            }
        };
        // a crashed guest's memory is untrusted: start over
        if self.mode == ExecMode::Restart || result.exit.is_crash() {
            self.handle = None;
        }
        Ok(result)
    }

    /// Shuts down the live VP, if any.
    pub fn shutdown(&mut self) {
        self.handle = None;
    }
}

fn synthetic(exit: ExitKind) -> RunResult {
    RunResult { exit, coverage: CoverageMap::new(), instructions: 0, probe_reads: None, exec_us: 0 }
}
