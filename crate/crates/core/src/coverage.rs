//! AFL-style edge coverage bitmap.
//!
//! The simulator calls [`CoverageMap::record_edge`] on every basic-block
//! entry; the map travels raw to the fuzzer, which buckets it with
//! [`classify_counts`] and merges it into its global map with
//! [`has_new_bits`].

use thiserror::Error;

use crate::isa::cpu::BlockSink;

pub const MAP_SIZE: usize = 1 << 16;

const HASH_MULT: u32 = 0x9E37_79B1;

/// Multiplicative 32 to 16 bit mix: top half of `addr * 0x9E3779B1`.
#[inline]
pub fn hash16(addr: u32) -> u16 {
    (addr.wrapping_mul(HASH_MULT) >> 16) as u16
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("coverage map size mismatch: {global} vs {local}")]
pub struct MapSizeMismatch {
    pub global: usize,
    pub local: usize,
}

/// Equality compares counters only; `prev_loc` is execution state.
#[derive(Clone)]
pub struct CoverageMap {
    bytes: Vec<u8>,
    prev_loc: u16,
}

impl PartialEq for CoverageMap {
    fn eq(&self, other: &Self) -> bool {
        self.bytes == other.bytes
    }
}

impl Eq for CoverageMap {}

impl std::fmt::Debug for CoverageMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoverageMap")
            .field("len", &self.bytes.len())
            .field("nonzero", &self.count_nonzero())
            .field("digest", &format_args!("{:016x}", self.digest()))
            .finish()
    }
}

impl Default for CoverageMap {
    fn default() -> Self {
        Self::new()
    }
}

impl CoverageMap {
    pub fn new() -> Self {
        Self::with_size(MAP_SIZE)
    }

    /// `size` must be a power of two no larger than 65,536.
    pub fn with_size(size: usize) -> Self {
        assert!(size.is_power_of_two() && size <= MAP_SIZE, "map size must be a power of two <= 65536");
        CoverageMap { bytes: vec![0; size], prev_loc: 0 }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        assert!(bytes.len().is_power_of_two() && bytes.len() <= MAP_SIZE);
        CoverageMap { bytes, prev_loc: 0 }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.iter().all(|&b| b == 0)
    }

    pub fn prev_loc(&self) -> u16 {
        self.prev_loc
    }

    /// Zeroes all counters and the rolling previous location.
    pub fn reset(&mut self) {
        self.bytes.fill(0);
        self.prev_loc = 0;
    }

    #[inline]
    pub fn record_edge(&mut self, block_addr: u32) {
        let cur = hash16(block_addr);
        let idx = (cur ^ self.prev_loc) as usize & (self.bytes.len() - 1);
        let c = &mut self.bytes[idx];
        *c = c.saturating_add(1);
        self.prev_loc = cur >> 1;
    }

    pub fn count_nonzero(&self) -> usize {
        self.bytes.iter().filter(|&&b| b != 0).count()
    }

    pub fn count_bits(&self) -> u64 {
        self.bytes.iter().map(|b| b.count_ones() as u64).sum()
    }

    pub fn nonzero_indices(&self) -> Vec<u32> {
        self.bytes.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| i as u32).collect()
    }

    /// Stable 64-bit digest of the map contents.
    pub fn digest(&self) -> u64 {
        xxhash_rust::xxh3::xxh3_64(&self.bytes)
    }

    /// Returns a bucketed copy.
    pub fn classified(&self) -> CoverageMap {
        let mut m = self.clone();
        classify_counts(&mut m);
        m
    }
}

impl BlockSink for CoverageMap {
    #[inline]
    fn block(&mut self, addr: u32) {
        self.record_edge(addr);
    }
}

const fn build_bucket_table() -> [u8; 256] {
    let mut t = [0u8; 256];
    let mut v = 1;
    while v < 256 {
        t[v] = match v {
            1 => 1,
            2 => 2,
            3 => 4,
            4..=7 => 8,
            8..=15 => 16,
            16..=31 => 32,
            32..=127 => 64,
            _ => 128,
        };
        v += 1;
    }
    t
}

pub static COUNT_CLASS: [u8; 256] = build_bucket_table();

/// Replaces every raw hit counter with its bucket bit.
pub fn classify_counts(map: &mut CoverageMap) {
    let mut words = map.bytes.chunks_exact_mut(8);
    for w in &mut words {
        if u64::from_le_bytes((&*w).try_into().unwrap()) == 0 {
            continue;
        }
        for b in w.iter_mut() {
            *b = COUNT_CLASS[*b as usize];
        }
    }
    for b in words.into_remainder() {
        *b = COUNT_CLASS[*b as usize];
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NewBits {
    Nothing,
    NewCounts,
    NewEdges,
}

/// Compares a classified run map against the campaign's global map and
/// ORs it in when it contributes anything.
pub fn has_new_bits(global: &mut CoverageMap, local: &CoverageMap) -> Result<NewBits, MapSizeMismatch> {
    if global.len() != local.len() {
        return Err(MapSizeMismatch { global: global.len(), local: local.len() });
    }
    let mut ret = NewBits::Nothing;
    let mut g_words = global.bytes.chunks_exact_mut(8);
    let mut l_words = local.bytes.chunks_exact(8);
    for (g, l) in (&mut g_words).zip(&mut l_words) {
        let gw = u64::from_le_bytes(g.try_into().unwrap());
        let lw = u64::from_le_bytes(l.try_into().unwrap());
        if lw & !gw == 0 {
            continue;
        }
        if ret != NewBits::NewEdges {
            for i in 0..8 {
                if l[i] & !g[i] != 0 {
                    ret = if g[i] == 0 { NewBits::NewEdges } else { ret.max(NewBits::NewCounts) };
                }
            }
        }
        g.copy_from_slice(&(gw | lw).to_le_bytes());
    }
    // maps smaller than one word
    for (g, &l) in g_words.into_remainder().iter_mut().zip(l_words.remainder()) {
        if l & !*g != 0 {
            ret = ret.max(if *g == 0 { NewBits::NewEdges } else { NewBits::NewCounts });
            *g |= l;
        }
    }
    Ok(ret)
}
