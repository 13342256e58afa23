//! MMIO probe: sits on the bus between the core and RAM and serves reads in
//! tracked address ranges from the current test case.
//!
//! Every transaction has exactly one consumer. Reads inside a tracked range
//! are answered from the [`InputCursor`] (bytes consumed in access order,
//! little-endian, exactly `size` bytes per read); writes inside a tracked
//! range follow the [`WritePolicy`]; everything else goes to [`GuestMemory`].

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::isa::bus::{size_mask, Bus, BusResponse, BusTransaction, Direction, FaultKind};
use crate::isa::memory::GuestMemory;

/// Inclusive address range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AddressRange {
    pub start: u32,
    pub end: u32,
}

impl AddressRange {
    pub fn new(start: u32, end: u32) -> Option<Self> {
        (start <= end).then_some(AddressRange { start, end })
    }

    #[inline]
    pub fn contains(&self, addr: u32) -> bool {
        self.start <= addr && addr <= self.end
    }

    pub fn overlaps(&self, other: &AddressRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

impl fmt::Display for AddressRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:08x}-0x{:08x}", self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExhaustionPolicy {
    /// End the run with `InputExhausted`.
    #[default]
    EndRun,
    /// Serve zeros once the input runs out.
    ZeroFill,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WritePolicy {
    #[default]
    Discard,
    /// Keep written bytes in a per-run shadow store. A later tracked read
    /// whose every byte was written this run returns the shadow value
    /// without consuming input.
    StoreToShadow,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProbeConfigError {
    #[error("tracked ranges {0} and {1} overlap")]
    Overlap(AddressRange, AddressRange),
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ProbeConfig {
    tracked: Vec<AddressRange>,
    pub exhaustion_policy: ExhaustionPolicy,
    pub write_policy: WritePolicy,
}

impl ProbeConfig {
    pub fn new(mut tracked: Vec<AddressRange>) -> Result<Self, ProbeConfigError> {
        tracked.sort();
        for w in tracked.windows(2) {
            if w[0].overlaps(&w[1]) {
                return Err(ProbeConfigError::Overlap(w[0], w[1]));
            }
        }
        Ok(ProbeConfig { tracked, ..Default::default() })
    }

    pub fn with_policies(mut self, exhaustion: ExhaustionPolicy, write: WritePolicy) -> Self {
        self.exhaustion_policy = exhaustion;
        self.write_policy = write;
        self
    }

    pub fn tracked(&self) -> &[AddressRange] {
        &self.tracked
    }

    /// True if any byte of `[addr, addr+size)` falls in a tracked range.
    #[inline]
    pub fn is_tracked(&self, addr: u32, size: u8) -> bool {
        let last = addr.saturating_add(size as u32 - 1);
        self.tracked.iter().any(|r| r.start <= last && addr <= r.end)
    }
}

/// The current test case and how far the probe has read into it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InputCursor {
    input: Vec<u8>,
    offset: usize,
    reads_served: u64,
}

/// Why a probe read could not be served in full.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exhausted {
    pub available: usize,
}

impl InputCursor {
    pub fn new(input: impl Into<Vec<u8>>) -> Self {
        InputCursor { input: input.into(), offset: 0, reads_served: 0 }
    }

    /// Replaces the input and rewinds.
    pub fn rearm(&mut self, input: &[u8]) {
        self.input.clear();
        self.input.extend_from_slice(input);
        self.offset = 0;
        self.reads_served = 0;
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn reads_served(&self) -> u64 {
        self.reads_served
    }

    pub fn remaining(&self) -> usize {
        self.input.len() - self.offset
    }

    pub fn input(&self) -> &[u8] {
        &self.input
    }

    /// Consumes `size` bytes and assembles them little-endian. When fewer
    /// than `size` remain nothing is consumed.
    pub fn take(&mut self, size: u8) -> Result<u32, Exhausted> {
        let n = size as usize;
        if self.remaining() < n {
            return Err(Exhausted { available: self.remaining() });
        }
        let mut buf = [0u8; 4];
        buf[..n].copy_from_slice(&self.input[self.offset..self.offset + n]);
        self.offset += n;
        self.reads_served += 1;
        Ok(u32::from_le_bytes(buf))
    }

    /// Consumes what is left (fewer than `size` bytes), pads with zeros and
    /// pins the cursor at the end.
    pub fn take_zero_filled(&mut self, size: u8) -> u32 {
        let n = (size as usize).min(self.remaining());
        let mut buf = [0u8; 4];
        buf[..n].copy_from_slice(&self.input[self.offset..self.offset + n]);
        self.offset += n;
        self.reads_served += 1;
        u32::from_le_bytes(buf)
    }
}

/// Serves one probe read according to `policy`. `None` means the run
/// must end with `InputExhausted`.
pub fn probe_read(size: u8, cursor: &mut InputCursor, policy: ExhaustionPolicy) -> Option<u32> {
    match cursor.take(size) {
        Ok(v) => Some(v),
        Err(_) => match policy {
            ExhaustionPolicy::EndRun => None,
            ExhaustionPolicy::ZeroFill => Some(cursor.take_zero_filled(size)),
        },
    }
}

/// One served probe read, as printed by `--trace-probe`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeEvent {
    pub pc: u32,
    pub addr: u32,
    pub size: u8,
    pub value: u32,
}

impl fmt::Display for ProbeEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PROBE pc=0x{:08x} addr=0x{:08x} size={} value=0x{:x}", self.pc, self.addr, self.size, self.value)
    }
}

/// Per-consumer transaction counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RouteCounters {
    pub probe_reads: u64,
    pub probe_writes: u64,
    pub memory: u64,
}

/// RAM plus the probe: the bus the core runs against.
#[derive(Clone, Debug)]
pub struct SystemBus {
    pub mem: GuestMemory,
    pub config: ProbeConfig,
    pub cursor: InputCursor,
    shadow: HashMap<u32, u8>,
    trace: Option<Vec<ProbeEvent>>,
    pub counters: RouteCounters,
}

impl SystemBus {
    pub fn new(mem: GuestMemory, config: ProbeConfig) -> Self {
        SystemBus {
            mem,
            config,
            cursor: InputCursor::default(),
            shadow: HashMap::new(),
            trace: None,
            counters: RouteCounters::default(),
        }
    }

    pub fn set_tracing(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<ProbeEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Resets per-run probe state for a new input.
    pub fn rearm(&mut self, input: &[u8]) {
        self.cursor.rearm(input);
        self.shadow.clear();
        self.counters = RouteCounters::default();
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
    }

    pub fn shadow_byte(&self, addr: u32) -> Option<u8> {
        self.shadow.get(&addr).copied()
    }

    fn shadow_read(&self, addr: u32, size: u8) -> Option<u32> {
        if self.shadow.is_empty() {
            return None;
        }
        let mut buf = [0u8; 4];
        for (i, b) in buf[..size as usize].iter_mut().enumerate() {
            *b = *self.shadow.get(&(addr + i as u32))?;
        }
        Some(u32::from_le_bytes(buf))
    }

    /// Dispatches one transaction to its single consumer.
    pub fn route(&mut self, txn: &BusTransaction) -> BusResponse {
        if !self.config.is_tracked(txn.addr, txn.size) {
            self.counters.memory += 1;
            return self.mem.transact(txn);
        }
        match txn.dir {
            Direction::Read => {
                self.counters.probe_reads += 1;
                if let Some(v) = self.shadow_read(txn.addr, txn.size) {
                    return BusResponse::Ok(v);
                }
                match probe_read(txn.size, &mut self.cursor, self.config.exhaustion_policy) {
                    Some(value) => {
                        if let Some(t) = self.trace.as_mut() {
                            t.push(ProbeEvent { pc: txn.origin_pc, addr: txn.addr, size: txn.size, value });
                        }
                        BusResponse::Ok(value & size_mask(txn.size))
                    }
                    None => BusResponse::InputExhausted,
                }
            }
            Direction::Write => {
                self.counters.probe_writes += 1;
                if self.config.write_policy == WritePolicy::StoreToShadow {
                    for (i, b) in txn.data.to_le_bytes()[..txn.size as usize].iter().enumerate() {
                        self.shadow.insert(txn.addr + i as u32, *b);
                    }
                }
                BusResponse::Ok(0)
            }
        }
    }
}

impl Bus for SystemBus {
    #[inline]
    fn fetch(&mut self, addr: u32) -> Result<u32, FaultKind> {
        self.mem.fetch(addr)
    }

    #[inline]
    fn transact(&mut self, txn: &BusTransaction) -> BusResponse {
        self.route(txn)
    }
}
