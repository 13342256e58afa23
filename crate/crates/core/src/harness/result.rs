use std::fmt;

use crate::coverage::CoverageMap;
use crate::isa::bus::FaultKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CrashReason {
    ReturnValueNonzero(u32),
    ErrorHandlerReached,
    HardwareFault(FaultKind),
}

impl CrashReason {
    /// Short tag used for deduplication and file names.
    pub fn tag(&self) -> &'static str {
        match self {
            CrashReason::ReturnValueNonzero(_) => "return_value",
            CrashReason::ErrorHandlerReached => "error_handler",
            CrashReason::HardwareFault(_) => "hardware_fault",
        }
    }
}

impl fmt::Display for CrashReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrashReason::ReturnValueNonzero(v) => write!(f, "return_value={v}"),
            CrashReason::ErrorHandlerReached => f.write_str("error_handler"),
            CrashReason::HardwareFault(k) => write!(f, "hardware_fault={k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExitKind {
    Ok,
    Crash(CrashReason),
    Timeout,
    InputExhausted,
}

impl ExitKind {
    pub fn is_crash(&self) -> bool {
        matches!(self, ExitKind::Crash(_))
    }

    pub fn crash_reason(&self) -> Option<CrashReason> {
        match self {
            ExitKind::Crash(r) => Some(*r),
            _ => None,
        }
    }
}

impl fmt::Display for ExitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitKind::Ok => f.write_str("OK"),
            ExitKind::Crash(r) => write!(f, "CRASH {r}"),
            ExitKind::Timeout => f.write_str("TIMEOUT"),
            ExitKind::InputExhausted => f.write_str("INPUT_EXHAUSTED"),
        }
    }
}

/// Everything one execution reports back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunResult {
    pub exit: ExitKind,
    /// Raw (unclassified) edge counters.
    pub coverage: CoverageMap,
    pub instructions: u64,
    /// Probe reads served from the input. Not carried over the wire, so
    /// `None` for results that came from a child process.
    pub probe_reads: Option<u64>,
    pub exec_us: u64,
}
