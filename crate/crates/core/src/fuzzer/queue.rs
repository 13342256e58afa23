//! Seed queue, favored-set culling and energy-weighted scheduling.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;

pub const BASE_ENERGY: u64 = 100;
pub const FAVORED_PROB: f64 = 0.8;
/// Entries found this recently (campaign clock) get double energy.
pub const RECENT_MS: u64 = 60_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueueEntry {
    pub input: Vec<u8>,
    /// Digest of the classified coverage map.
    pub coverage_digest: u64,
    /// Nonzero indices of the classified map.
    pub edges: Vec<u32>,
    pub exec_us: u64,
    pub found_at_ms: u64,
    pub favored: bool,
    /// Mutated executions derived from this entry.
    pub execs: u64,
}

impl QueueEntry {
    pub fn new(input: Vec<u8>, coverage_digest: u64, edges: Vec<u32>, exec_us: u64, found_at_ms: u64) -> Self {
        QueueEntry { input, coverage_digest, edges, exec_us, found_at_ms, favored: false, execs: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Queue {
    entries: Vec<QueueEntry>,
    inputs: HashSet<Vec<u8>>,
    median_exec_us: u64,
}

impl Queue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[QueueEntry] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &QueueEntry {
        &self.entries[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut QueueEntry {
        &mut self.entries[i]
    }

    pub fn contains(&self, input: &[u8]) -> bool {
        self.inputs.contains(input)
    }

    /// Adds an entry unless its input is already queued. Recomputes the
    /// favored set.
    pub fn add(&mut self, entry: QueueEntry) -> bool {
        if !self.inputs.insert(entry.input.clone()) {
            return false;
        }
        self.entries.push(entry);
        self.cull();
        let mut t: Vec<u64> = self.entries.iter().map(|e| e.exec_us).collect();
        t.sort_unstable();
        self.median_exec_us = t[t.len() / 2];
        true
    }

    /// For every covered map byte, the smallest entry (then fastest, then
    /// oldest) that covers it is its top-rated entry; the favored set is a
    /// greedy cover built from top-rated entries.
    fn cull(&mut self) {
        let mut top: BTreeMap<u32, usize> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            let key = (e.input.len(), e.exec_us, i);
            for &idx in &e.edges {
                top.entry(idx)
                    .and_modify(|best| {
                        let b = &self.entries[*best];
                        if key < (b.input.len(), b.exec_us, *best) {
                            *best = i;
                        }
                    })
                    .or_insert(i);
            }
        }
        for e in &mut self.entries {
            e.favored = false;
        }
        let mut covered: HashSet<u32> = HashSet::new();
        for (idx, &i) in &top {
            if covered.contains(idx) {
                continue;
            }
            self.entries[i].favored = true;
            covered.extend(self.entries[i].edges.iter().copied());
        }
    }

    pub fn median_exec_us(&self) -> u64 {
        self.median_exec_us
    }

    /// Base 100, doubled if found within the last minute, halved if slower
    /// than twice the median run time; never below 1.
    pub fn energy(&self, i: usize, now_ms: u64) -> u64 {
        let e = &self.entries[i];
        let mut energy = BASE_ENERGY;
        if now_ms.saturating_sub(e.found_at_ms) < RECENT_MS {
            energy *= 2;
        }
        if e.exec_us > 2 * self.median_exec_us {
            energy /= 2;
        }
        energy.max(1)
    }

    pub fn favored_count(&self) -> usize {
        self.entries.iter().filter(|e| e.favored).count()
    }
}

fn weighted_pick<R: Rng>(q: &Queue, candidates: &[usize], now_ms: u64, rng: &mut R) -> usize {
    let total: u64 = candidates.iter().map(|&i| q.energy(i, now_ms)).sum();
    let mut x = rng.gen_range(0..total);
    for &i in candidates {
        let e = q.energy(i, now_ms);
        if x < e {
            return i;
        }
        x -= e;
    }
    unreachable!("weights sum to total")
}

/// Picks the next entry to mutate: a uniformly chosen favored entry with
/// probability 0.8, otherwise an energy-weighted draw from the rest.
pub fn schedule_next<R: Rng>(queue: &Queue, now_ms: u64, rng: &mut R) -> usize {
    assert!(!queue.is_empty(), "schedule_next on an empty queue");
    let (fav, rest): (Vec<usize>, Vec<usize>) = (0..queue.len()).partition(|&i| queue.get(i).favored);
    if fav.is_empty() || rest.is_empty() {
        let all: Vec<usize> = (0..queue.len()).collect();
        if fav.is_empty() {
            return weighted_pick(queue, &all, now_ms, rng);
        }
        return fav[rng.gen_range(0..fav.len())];
    }
    if rng.gen_bool(FAVORED_PROB) {
        fav[rng.gen_range(0..fav.len())]
    } else {
        weighted_pick(queue, &rest, now_ms, rng)
    }
}
