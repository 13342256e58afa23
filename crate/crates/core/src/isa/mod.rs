//! The simulated core: RV32I subset interpreter, guest RAM and the bus trait.

pub mod bus;
pub mod cpu;
pub mod decode;
pub mod memory;

pub use bus::{Bus, BusResponse, BusTransaction, Direction, FaultKind};
pub use cpu::{BlockSink, CpuState, CpuStatus, RunLimits, RunOutcome, StopReason};
pub use decode::{decode, disassemble, Instruction};
pub use memory::{GuestMemory, LoadError};
