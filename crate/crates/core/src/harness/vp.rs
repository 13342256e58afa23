//! In-process virtual prototype: core + probe bus + coverage, configured
//! from a [`VpConfig`] and able to rewind to a snapshot between runs.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use super::config::{CrashMode, VpConfig, VpConfigError};
use super::result::{CrashReason, ExitKind, RunResult};
use crate::coverage::CoverageMap;
use crate::isa::bus::FaultKind;
use crate::isa::cpu::{CpuState, CpuStatus, RunLimits, StopReason, REG_A0, REG_SP};
use crate::isa::memory::GuestMemory;
use crate::probe::{ProbeConfig, ProbeEvent, SystemBus};

/// Instructions executed between wall-clock checks.
const WALL_CHECK_CHUNK: u64 = 1 << 20;

/// Saved machine state at the run entry point.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub cpu: CpuState,
    pub memory: Vec<u8>,
    pub taken_at_pc: u32,
}

/// Durations of the two set-up stages.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub startup: Duration,
    pub config: Duration,
}

pub struct Vp {
    cpu: CpuState,
    bus: SystemBus,
    coverage: CoverageMap,
    config: Option<VpConfig>,
    limits: RunLimits,
    snapshot: Option<Snapshot>,
    /// State differs from the snapshot.
    dirty: bool,
}

impl Default for Vp {
    fn default() -> Self {
        Self::new()
    }
}

impl Vp {
    /// Startup stage: allocates the machine with empty RAM.
    pub fn new() -> Self {
        Vp {
            cpu: CpuState::new(0),
            bus: SystemBus::new(GuestMemory::default(), ProbeConfig::default()),
            coverage: CoverageMap::new(),
            config: None,
            limits: RunLimits::default(),
            snapshot: None,
            dirty: false,
        }
    }

    /// Startup plus configuration, timing both stages.
    pub fn boot(config: &VpConfig, image: &[u8]) -> Result<(Vp, StageTimings), VpConfigError> {
        let t0 = Instant::now();
        let mut vp = Vp::new();
        let startup = t0.elapsed();
        let t1 = Instant::now();
        vp.configure(config, image)?;
        Ok((vp, StageTimings { startup, config: t1.elapsed() }))
    }

    /// Configuration stage: loads the image, installs tracking and
    /// breakpoints, runs to the persistent entry if one is set, and takes
    /// the snapshot every run starts from.
    pub fn configure(&mut self, config: &VpConfig, image: &[u8]) -> Result<(), VpConfigError> {
        config.validate(image.len())?;
        let mut mem = GuestMemory::default();
        mem.load_image(image, config.load_addr).map_err(|_| VpConfigError::ImageOutOfRam {
            load_addr: config.load_addr,
            len: image.len(),
            base: mem.base(),
            end: mem.end(),
        })?;
        mem.set_guards(config.guards.clone());
        self.bus = SystemBus::new(mem, config.probe_config()?);
        self.cpu = CpuState::new(config.entry_pc);
        self.cpu.set_reg(REG_SP, config.stack_top);

        if let Some(p) = config.persistent {
            self.bus.rearm(&[]);
            let mut limits = RunLimits::with_max(config.max_instructions);
            limits.breakpoints.insert(p.entry_pc);
            let out = self.cpu.run_until(&mut self.bus, &mut (), &limits);
            if out.stop != StopReason::Breakpoint(p.entry_pc) {
                return Err(VpConfigError::PrologueFailed { entry: p.entry_pc, detail: format!("{:?}", out.stop) });
            }
            self.cpu.status = CpuStatus::Running;
        }
        self.cpu.instr_count = 0;

        let mut bps = BTreeSet::new();
        match config.crash_mode {
            CrashMode::ReturnRegister { main_return_pc } => bps.insert(main_return_pc),
            CrashMode::ErrorHandler { handler_pc } => bps.insert(handler_pc),
        };
        if let Some(p) = config.persistent {
            bps.insert(p.exit_pc);
        }
        self.limits = RunLimits { max_instructions: config.max_instructions, breakpoints: bps };
        self.snapshot = Some(Snapshot {
            cpu: self.cpu.clone(),
            memory: self.bus.mem.as_bytes().to_vec(),
            taken_at_pc: self.cpu.pc,
        });
        self.bus.mem.clear_dirty();
        self.dirty = false;
        self.config = Some(config.clone());
        Ok(())
    }

    pub fn is_configured(&self) -> bool {
        self.config.is_some()
    }

    pub fn config(&self) -> Option<&VpConfig> {
        self.config.as_ref()
    }

    pub fn snapshot(&self) -> Option<&Snapshot> {
        self.snapshot.as_ref()
    }

    pub fn cpu(&self) -> &CpuState {
        &self.cpu
    }

    pub fn memory(&self) -> &GuestMemory {
        &self.bus.mem
    }

    pub fn bus(&self) -> &SystemBus {
        &self.bus
    }

    pub fn set_probe_trace(&mut self, on: bool) {
        self.bus.set_tracing(on);
    }

    pub fn take_probe_trace(&mut self) -> Vec<ProbeEvent> {
        self.bus.take_trace()
    }

    /// Puts the machine back at the run entry.
    pub fn restore(&mut self) {
        let snap = self.snapshot.as_ref().expect("VP not configured");
        let jump_only = self.config.as_ref().and_then(|c| c.persistent).is_some_and(|p| p.jump_only);
        if jump_only {
            self.cpu.pc = snap.taken_at_pc;
            self.cpu.status = CpuStatus::Running;
            self.cpu.instr_count = 0;
            self.bus.mem.clear_dirty();
        } else {
            self.cpu = snap.cpu.clone();
            self.bus.mem.restore_dirty_from(&snap.memory);
        }
        self.dirty = false;
    }

    /// Executes one test case from the run entry. Restores from the
    /// snapshot first if a previous run left state behind.
    pub fn run(&mut self, input: &[u8]) -> RunResult {
        let config = self.config.as_ref().expect("VP not configured");
        let timeout = Duration::from_millis(config.wall_clock_timeout_ms);
        let crash_mode = config.crash_mode;
        let exit_pc = config.persistent.map(|p| p.exit_pc);
        if self.dirty {
            self.restore();
        }
        self.dirty = true;
        self.bus.rearm(input);
        self.coverage.reset();
        self.coverage.record_edge(self.cpu.pc);

        let start = Instant::now();
        let budget = self.limits.max_instructions;
        let mut executed = 0u64;
        let mut limits = self.limits.clone();
        let stop = loop {
            limits.max_instructions = (budget - executed).min(WALL_CHECK_CHUNK);
            let out = self.cpu.run_until(&mut self.bus, &mut self.coverage, &limits);
            executed += out.instructions;
            match out.stop {
                StopReason::Timeout if executed < budget && start.elapsed() < timeout => continue,
                s => break s,
            }
        };
        let exec_us = start.elapsed().as_micros() as u64;

        let exit = match stop {
            StopReason::Exited(0) => ExitKind::Ok,
            StopReason::Exited(code) => ExitKind::Crash(CrashReason::ReturnValueNonzero(code as u32)),
            StopReason::Faulted(k) => ExitKind::Crash(CrashReason::HardwareFault(k)),
            StopReason::Timeout => ExitKind::Timeout,
            StopReason::InputExhausted => ExitKind::InputExhausted,
            StopReason::Breakpoint(pc) => match crash_mode {
                CrashMode::ErrorHandler { handler_pc } if pc == handler_pc => {
                    ExitKind::Crash(CrashReason::ErrorHandlerReached)
                }
                CrashMode::ReturnRegister { main_return_pc } if pc == main_return_pc => {
                    match self.cpu.reg(REG_A0) {
                        0 => ExitKind::Ok,
                        v => ExitKind::Crash(CrashReason::ReturnValueNonzero(v)),
                    }
                }
                _ if Some(pc) == exit_pc => ExitKind::Ok,
                // a guest EBREAK
                _ => ExitKind::Crash(CrashReason::HardwareFault(FaultKind::IllegalInstruction)),
            },
        };
        RunResult {
            exit,
            coverage: self.coverage.clone(),
            instructions: executed,
            probe_reads: Some(self.bus.cursor.reads_served()),
            exec_us,
        }
    }
}
