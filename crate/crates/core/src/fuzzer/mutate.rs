//! Havoc: a random stack of byte-level edits.

use std::fmt;

use rand::Rng;

pub const MAX_INPUT_LEN: usize = 4096;
pub const INTERESTING_BYTES: [u8; 6] = [0x00, 0xff, 0x7f, 0x80, b'\n', b'\0'];
/// Stack depth is `1 << rand(0..=MAX_STACK_POW)`, so 1 to 64 edits.
const MAX_STACK_POW: u32 = 6;
const MAX_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MutOp {
    BitFlip,
    RandomByte,
    InterestingByte,
    Delete,
    Insert,
    ChunkDuplicate,
    Splice,
}

impl MutOp {
    pub const ALL: [MutOp; 7] = [
        MutOp::BitFlip,
        MutOp::RandomByte,
        MutOp::InterestingByte,
        MutOp::Delete,
        MutOp::Insert,
        MutOp::ChunkDuplicate,
        MutOp::Splice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MutOp::BitFlip => "bit_flip",
            MutOp::RandomByte => "random_byte",
            MutOp::InterestingByte => "interesting_byte",
            MutOp::Delete => "delete",
            MutOp::Insert => "insert",
            MutOp::ChunkDuplicate => "chunk_duplicate",
            MutOp::Splice => "splice",
        }
    }
}

impl fmt::Display for MutOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Count of applied edits per operation. Edits that had nothing to act on
/// (a byte flip on an empty buffer, say) are not counted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpHistogram(pub [u64; 7]);

impl OpHistogram {
    pub fn get(&self, op: MutOp) -> u64 {
        self.0[op as usize]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// Applies one edit; returns false if it could not apply.
fn apply<R: Rng>(buf: &mut Vec<u8>, op: MutOp, rng: &mut R, donor: Option<&[u8]>) -> bool {
    let len = buf.len();
    match op {
        MutOp::BitFlip if len > 0 => {
            let bit = rng.gen_range(0..len * 8);
            buf[bit / 8] ^= 1 << (bit % 8);
        }
        MutOp::RandomByte if len > 0 => {
            let i = rng.gen_range(0..len);
            buf[i] = rng.gen();
        }
        MutOp::InterestingByte if len > 0 => {
            let i = rng.gen_range(0..len);
            buf[i] = INTERESTING_BYTES[rng.gen_range(0..INTERESTING_BYTES.len())];
        }
        MutOp::Delete if len > 0 => {
            buf.remove(rng.gen_range(0..len));
        }
        MutOp::Insert if len < MAX_INPUT_LEN => {
            let at = rng.gen_range(0..=len);
            buf.insert(at, rng.gen());
        }
        MutOp::ChunkDuplicate if len > 0 && len < MAX_INPUT_LEN => {
            let n = rng.gen_range(1..=len.min(MAX_CHUNK));
            let from = rng.gen_range(0..=len - n);
            let at = rng.gen_range(0..=len);
            let chunk = buf[from..from + n].to_vec();
            buf.splice(at..at, chunk);
            buf.truncate(MAX_INPUT_LEN);
        }
        MutOp::Splice => {
            let Some(d) = donor.filter(|d| !d.is_empty()) else { return false };
            if len == 0 {
                return false;
            }
            let n = rng.gen_range(1..=len.min(d.len()).min(MAX_CHUNK));
            let from = rng.gen_range(0..=d.len() - n);
            let at = rng.gen_range(0..=len - n);
            buf[at..at + n].copy_from_slice(&d[from..from + n]);
        }
        _ => return false,
    }
    true
}

/// Mutates `input` with 1 to 64 stacked edits drawn uniformly from
/// [`MutOp::ALL`]. `donor` is another queue entry for splicing.
pub fn mutate_havoc<R: Rng>(input: &[u8], rng: &mut R, donor: Option<&[u8]>, hist: Option<&mut OpHistogram>) -> Vec<u8> {
    let mut buf = input[..input.len().min(MAX_INPUT_LEN)].to_vec();
    let stack = 1usize << rng.gen_range(0..=MAX_STACK_POW);
    let mut local = OpHistogram::default();
    for _ in 0..stack {
        let op = MutOp::ALL[rng.gen_range(0..MutOp::ALL.len())];
        if apply(&mut buf, op, rng, donor) {
            local.0[op as usize] += 1;
        }
    }
    if let Some(h) = hist {
        for (a, b) in h.0.iter_mut().zip(local.0) {
            *a += b;
        }
    }
    buf
}
