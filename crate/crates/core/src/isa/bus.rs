//! Bus transactions and the routing trait the CPU issues them through.

use std::fmt;

/// Hardware fault classes raised by the simulated core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaultKind {
    BusError,
    IllegalInstruction,
    MisalignedAccess,
    StackOverflowGuard,
}

impl FaultKind {
    pub fn code(self) -> u8 {
        match self {
            FaultKind::BusError => 0,
            FaultKind::IllegalInstruction => 1,
            FaultKind::MisalignedAccess => 2,
            FaultKind::StackOverflowGuard => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => FaultKind::BusError,
            1 => FaultKind::IllegalInstruction,
            2 => FaultKind::MisalignedAccess,
            3 => FaultKind::StackOverflowGuard,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultKind::BusError => "bus_error",
            FaultKind::IllegalInstruction => "illegal_instruction",
            FaultKind::MisalignedAccess => "misaligned_access",
            FaultKind::StackOverflowGuard => "stack_overflow_guard",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Read,
    Write,
}

/// One guest memory access. `data` holds the little-endian payload in its
/// low `size` bytes (the write value, or zero for reads).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BusTransaction {
    pub addr: u32,
    pub size: u8,
    pub dir: Direction,
    pub data: u32,
    pub origin_pc: u32,
}

impl BusTransaction {
    /// Builds a transaction, returning `None` when `size` is not 1, 2 or 4
    /// or the access would wrap past the top of the address space.
    pub fn new(addr: u32, size: u8, dir: Direction, data: u32, origin_pc: u32) -> Option<Self> {
        if !matches!(size, 1 | 2 | 4) || addr.checked_add(size as u32 - 1).is_none() {
            return None;
        }
        Some(BusTransaction { addr, size, dir, data: data & size_mask(size), origin_pc })
    }

    pub fn read(addr: u32, size: u8, origin_pc: u32) -> Option<Self> {
        Self::new(addr, size, Direction::Read, 0, origin_pc)
    }

    pub fn write(addr: u32, size: u8, data: u32, origin_pc: u32) -> Option<Self> {
        Self::new(addr, size, Direction::Write, data, origin_pc)
    }

    /// Last byte touched by the access.
    pub fn end(&self) -> u32 {
        self.addr + (self.size as u32 - 1)
    }
}

#[inline]
pub fn size_mask(size: u8) -> u32 {
    match size {
        1 => 0xff,
        2 => 0xffff,
        _ => 0xffff_ffff,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BusResponse {
    /// Read data (zero-extended) or a write acknowledgement.
    Ok(u32),
    Fault(FaultKind),
    /// The probe could not serve a read and the run must end.
    InputExhausted,
}

/// Anything the CPU can fetch from and issue transactions to.
pub trait Bus {
    fn fetch(&mut self, addr: u32) -> Result<u32, FaultKind>;
    fn transact(&mut self, txn: &BusTransaction) -> BusResponse;
}
