use std::path::PathBuf;

use thiserror::Error;

use crate::isa::cpu::DEFAULT_MAX_INSTRUCTIONS;
use crate::isa::memory::{DEFAULT_RAM_BASE, DEFAULT_RAM_SIZE};
use crate::probe::{AddressRange, ExhaustionPolicy, ProbeConfig, ProbeConfigError, WritePolicy};

pub const DEFAULT_TIMEOUT_MS: u64 = 2_000;

/// How the VP decides that a run found a bug, besides hardware faults and
/// nonzero exit codes which always count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrashMode {
    /// Break at the instruction main returns to and inspect `a0`.
    ReturnRegister { main_return_pc: u32 },
    /// Break at the guest's error handler.
    ErrorHandler { handler_pc: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PersistentConfig {
    pub entry_pc: u32,
    pub exit_pc: u32,
    /// Only move the PC back to `entry_pc` between runs; registers and
    /// memory carry over. Off by default.
    pub jump_only: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VpConfig {
    pub image: PathBuf,
    pub load_addr: u32,
    pub entry_pc: u32,
    pub stack_top: u32,
    pub guards: Vec<AddressRange>,
    pub tracked: Vec<AddressRange>,
    pub exhaustion_policy: ExhaustionPolicy,
    pub write_policy: WritePolicy,
    pub crash_mode: CrashMode,
    pub persistent: Option<PersistentConfig>,
    pub max_instructions: u64,
    pub wall_clock_timeout_ms: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VpConfigError {
    #[error("image of {len} bytes at load_addr 0x{load_addr:08x} lies outside RAM [0x{base:08x}, 0x{end:09x})")]
    ImageOutOfRam { load_addr: u32, len: usize, base: u32, end: u64 },
    #[error("{what} 0x{addr:08x} lies outside RAM")]
    AddressOutOfRam { what: &'static str, addr: u32 },
    #[error("{what} 0x{addr:08x} is not 4-byte aligned")]
    Misaligned { what: &'static str, addr: u32 },
    #[error(transparent)]
    Probe(#[from] ProbeConfigError),
    #[error("tracked range {0} overlaps the loaded image")]
    TrackedOverlapsImage(AddressRange),
    #[error("persistent entry and exit must differ (both 0x{0:08x})")]
    PersistentEntryEqualsExit(u32),
    #[error("max_instructions must be positive")]
    ZeroInstructionBudget,
    #[error("guest did not reach persistent entry 0x{entry:08x}: {detail}")]
    PrologueFailed { entry: u32, detail: String },
}

impl VpConfig {
    /// A config with the default memory layout and no tracking.
    pub fn new(image: impl Into<PathBuf>, crash_mode: CrashMode) -> Self {
        VpConfig {
            image: image.into(),
            load_addr: DEFAULT_RAM_BASE,
            entry_pc: DEFAULT_RAM_BASE,
            stack_top: DEFAULT_RAM_BASE + DEFAULT_RAM_SIZE,
            guards: Vec::new(),
            tracked: Vec::new(),
            exhaustion_policy: ExhaustionPolicy::EndRun,
            write_policy: WritePolicy::Discard,
            crash_mode,
            persistent: None,
            max_instructions: DEFAULT_MAX_INSTRUCTIONS,
            wall_clock_timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn probe_config(&self) -> Result<ProbeConfig, ProbeConfigError> {
        Ok(ProbeConfig::new(self.tracked.clone())?.with_policies(self.exhaustion_policy, self.write_policy))
    }

    /// Checks everything that can be checked before a VP exists.
    pub fn validate(&self, image_len: usize) -> Result<(), VpConfigError> {
        let base = DEFAULT_RAM_BASE;
        let end = base as u64 + DEFAULT_RAM_SIZE as u64;
        let in_ram = |a: u32| a >= base && (a as u64) < end;
        if self.load_addr < base || self.load_addr as u64 + image_len as u64 > end {
            return Err(VpConfigError::ImageOutOfRam { load_addr: self.load_addr, len: image_len, base, end });
        }
        for (what, addr) in self.code_addresses() {
            if !in_ram(addr) {
                return Err(VpConfigError::AddressOutOfRam { what, addr });
            }
            if addr & 3 != 0 {
                return Err(VpConfigError::Misaligned { what, addr });
            }
        }
        if self.stack_top <= base || self.stack_top as u64 > end {
            return Err(VpConfigError::AddressOutOfRam { what: "stack_top", addr: self.stack_top });
        }
        let probe = self.probe_config()?;
        if image_len > 0 {
            let image = AddressRange { start: self.load_addr, end: self.load_addr + (image_len as u32 - 1) };
            if let Some(r) = probe.tracked().iter().find(|r| r.overlaps(&image)) {
                return Err(VpConfigError::TrackedOverlapsImage(*r));
            }
        }
        if let Some(p) = self.persistent {
            if p.entry_pc == p.exit_pc {
                return Err(VpConfigError::PersistentEntryEqualsExit(p.entry_pc));
            }
        }
        if self.max_instructions == 0 {
            return Err(VpConfigError::ZeroInstructionBudget);
        }
        Ok(())
    }

    fn code_addresses(&self) -> Vec<(&'static str, u32)> {
        let mut v = vec![("entry_pc", self.entry_pc)];
        match self.crash_mode {
            CrashMode::ReturnRegister { main_return_pc } => v.push(("main_return_pc", main_return_pc)),
            CrashMode::ErrorHandler { handler_pc } => v.push(("handler_pc", handler_pc)),
        }
        if let Some(p) = self.persistent {
            v.push(("persistent_entry", p.entry_pc));
            v.push(("persistent_exit", p.exit_pc));
        }
        v
    }
}
