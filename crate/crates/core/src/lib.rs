//! Coverage-guided fuzzing of bare-metal firmware on a small virtual prototype.
//!
//! The VP is an RV32I interpreter whose bus carries an MMIO probe: reads in
//! configured address ranges are served from the fuzzer's test case, so
//! peripheral input (a UART, say) becomes the fuzzing surface. A harness
//! sits between the fuzzer and the VP and runs cases either by restarting
//! the VP for every input or persistently, rewinding to a snapshot.
//!
//! - [`isa`]: interpreter, guest RAM, bus trait
//! - [`probe`]: MMIO interception and the input cursor
//! - [`coverage`]: edge bitmap, bucketing, new-coverage detection
//! - [`harness`]: VP lifecycle, wire protocol, restart/persistent modes
//! - [`fuzzer`]: havoc mutation, queue scheduling, crash triage, campaigns
//! - [`guest`]: assembler and bundled sample guests
//! - [`config`]: the configuration file format
//! - [`bench`]: stage timings and execution-mode throughput

pub mod bench;
pub mod config;
pub mod coverage;
pub mod fuzzer;
pub mod guest;
pub mod harness;
pub mod isa;
pub mod probe;
