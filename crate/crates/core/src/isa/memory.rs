//! Flat little-endian guest RAM with dirty-page tracking.

use thiserror::Error;

use super::bus::{Bus, BusResponse, BusTransaction, Direction, FaultKind};
use crate::probe::AddressRange;

pub const DEFAULT_RAM_BASE: u32 = 0x0000_1000;
pub const DEFAULT_RAM_SIZE: u32 = 1 << 20;
pub const PAGE_SHIFT: u32 = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoadError {
    #[error("image of {len} bytes at 0x{load_addr:08x} does not fit in RAM [0x{base:08x}, 0x{end:08x})")]
    OutOfBounds { load_addr: u32, len: usize, base: u32, end: u64 },
}

#[derive(Clone, Debug)]
pub struct GuestMemory {
    base: u32,
    bytes: Vec<u8>,
    dirty: Vec<u64>,
    guards: Vec<AddressRange>,
}

impl Default for GuestMemory {
    fn default() -> Self {
        Self::new(DEFAULT_RAM_BASE, DEFAULT_RAM_SIZE)
    }
}

impl GuestMemory {
    pub fn new(base: u32, size: u32) -> Self {
        assert!(base as u64 + size as u64 <= 1 << 32, "RAM wraps the address space");
        let pages = (size as usize).div_ceil(1 << PAGE_SHIFT);
        GuestMemory { base, bytes: vec![0; size as usize], dirty: vec![0; pages.div_ceil(64)], guards: Vec::new() }
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn size(&self) -> u32 {
        self.bytes.len() as u32
    }

    /// One past the last RAM address, as u64 so a RAM ending at 4 GiB is representable.
    pub fn end(&self) -> u64 {
        self.base as u64 + self.bytes.len() as u64
    }

    pub fn contains(&self, addr: u32, len: u32) -> bool {
        addr >= self.base && addr as u64 + len as u64 <= self.end()
    }

    /// Addresses inside a guard range fault with `StackOverflowGuard`.
    pub fn set_guards(&mut self, guards: Vec<AddressRange>) {
        self.guards = guards;
    }

    pub fn guards(&self) -> &[AddressRange] {
        &self.guards
    }

    /// Zeroes RAM and copies `image` to `load_addr`.
    pub fn load_image(&mut self, image: &[u8], load_addr: u32) -> Result<(), LoadError> {
        if !self.contains(load_addr, image.len() as u32) || image.len() > self.bytes.len() {
            return Err(LoadError::OutOfBounds { load_addr, len: image.len(), base: self.base, end: self.end() });
        }
        self.bytes.fill(0);
        let off = (load_addr - self.base) as usize;
        self.bytes[off..off + image.len()].copy_from_slice(image);
        self.dirty.fill(u64::MAX);
        Ok(())
    }

    fn check(&self, addr: u32, size: u32) -> Result<usize, FaultKind> {
        let last = addr.checked_add(size - 1).ok_or(FaultKind::BusError)?;
        if self.guards.iter().any(|g| g.start <= last && addr <= g.end) {
            return Err(FaultKind::StackOverflowGuard);
        }
        if !self.contains(addr, size) {
            return Err(FaultKind::BusError);
        }
        Ok((addr - self.base) as usize)
    }

    pub fn read(&self, addr: u32, size: u8) -> Result<u32, FaultKind> {
        let off = self.check(addr, size as u32)?;
        let mut buf = [0u8; 4];
        buf[..size as usize].copy_from_slice(&self.bytes[off..off + size as usize]);
        Ok(u32::from_le_bytes(buf))
    }

    pub fn write(&mut self, addr: u32, size: u8, value: u32) -> Result<(), FaultKind> {
        let off = self.check(addr, size as u32)?;
        let bytes = value.to_le_bytes();
        self.bytes[off..off + size as usize].copy_from_slice(&bytes[..size as usize]);
        self.mark_dirty(off, size as usize);
        Ok(())
    }

    #[inline]
    fn mark_dirty(&mut self, off: usize, len: usize) {
        let first = off >> PAGE_SHIFT;
        let last = (off + len - 1) >> PAGE_SHIFT;
        for page in first..=last {
            self.dirty[page / 64] |= 1 << (page % 64);
        }
    }

    /// Copies out `len` bytes, or `None` if the span is not inside RAM.
    pub fn read_bytes(&self, addr: u32, len: usize) -> Option<&[u8]> {
        if !self.contains(addr, len as u32) {
            return None;
        }
        let off = (addr - self.base) as usize;
        Some(&self.bytes[off..off + len])
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn clear_dirty(&mut self) {
        self.dirty.fill(0);
    }

    pub fn dirty_pages(&self) -> usize {
        self.dirty.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Restores every page written since the last `clear_dirty` from
    /// `image`, which must be a full copy of this memory.
    pub fn restore_dirty_from(&mut self, image: &[u8]) {
        assert_eq!(image.len(), self.bytes.len(), "snapshot size mismatch");
        let page = 1usize << PAGE_SHIFT;
        for (wi, word) in self.dirty.iter_mut().enumerate() {
            let mut bits = *word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let start = (wi * 64 + b) * page;
                let end = (start + page).min(image.len());
                self.bytes[start..end].copy_from_slice(&image[start..end]);
            }
            *word = 0;
        }
    }
}

impl Bus for GuestMemory {
    fn fetch(&mut self, addr: u32) -> Result<u32, FaultKind> {
        // instruction fetch does not consult guards
        if !self.contains(addr, 4) {
            return Err(FaultKind::BusError);
        }
        let off = (addr - self.base) as usize;
        Ok(u32::from_le_bytes(self.bytes[off..off + 4].try_into().unwrap()))
    }

    fn transact(&mut self, txn: &BusTransaction) -> BusResponse {
        let r = match txn.dir {
            Direction::Read => self.read(txn.addr, txn.size),
            Direction::Write => self.write(txn.addr, txn.size, txn.data).map(|_| 0),
        };
        match r {
            Ok(v) => BusResponse::Ok(v),
            Err(f) => BusResponse::Fault(f),
        }
    }
}
