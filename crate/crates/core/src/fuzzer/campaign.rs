//! The fuzzing loop: pick, mutate, execute, keep what is new.

use std::collections::VecDeque;
use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::mutate::{mutate_havoc, OpHistogram, MutOp, MAX_INPUT_LEN};
use super::queue::{schedule_next, Queue, QueueEntry};
use super::triage::{CrashRecord, Triage};
use crate::coverage::{classify_counts, has_new_bits, CoverageMap, NewBits};
use crate::harness::{ExecMode, ExitKind, Harness, HarnessError, RunResult};

pub const STATS_HEADER: &str = "unix_ms,total_execs,execs_per_sec,queue_len,crashes_unique,mode";
const STATS_INTERVAL_MS: u64 = 5_000;
const RATE_WINDOW_US: u64 = 10_000_000;

/// Anything that can run one test case.
pub trait Executor {
    fn execute(&mut self, input: &[u8]) -> Result<RunResult, HarnessError>;
    fn mode(&self) -> ExecMode;
}

impl Executor for Harness {
    fn execute(&mut self, input: &[u8]) -> Result<RunResult, HarnessError> {
        self.run_case(input)
    }

    fn mode(&self) -> ExecMode {
        Harness::mode(self)
    }
}

/// Where campaign time comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ClockKind {
    /// Each execution costs 50 us plus 1 us per 100 guest instructions.
    /// Makes timestamps, energy and stats rows a pure function of the
    /// execution sequence.
    #[default]
    Virtual,
    Wall,
}

impl fmt::Display for ClockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClockKind::Virtual => "virtual",
            ClockKind::Wall => "wall",
        })
    }
}

impl std::str::FromStr for ClockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(ClockKind::Virtual),
            "wall" => Ok(ClockKind::Wall),
            _ => Err(format!("unknown clock `{s}` (expected virtual|wall)")),
        }
    }
}

struct Clock {
    kind: ClockKind,
    virtual_us: u64,
    start: Instant,
}

impl Clock {
    fn now_us(&self) -> u64 {
        match self.kind {
            ClockKind::Virtual => self.virtual_us,
            ClockKind::Wall => self.start.elapsed().as_micros() as u64,
        }
    }

    fn cost_us(&self, r: &RunResult) -> u64 {
        match self.kind {
            ClockKind::Virtual => 50 + r.instructions / 100,
            ClockKind::Wall => r.exec_us,
        }
    }

    fn advance(&mut self, r: &RunResult) {
        self.virtual_us += 50 + r.instructions / 100;
    }

    /// Virtual time counts from zero; wall time is real Unix time.
    fn unix_ms(&self) -> u64 {
        match self.kind {
            ClockKind::Virtual => self.virtual_us / 1000,
            ClockKind::Wall => SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CampaignOptions {
    pub rng_seed: u64,
    pub max_execs: Option<u64>,
    /// Wall-clock budget, whatever the campaign clock.
    pub max_time: Option<Duration>,
    pub out_dir: Option<PathBuf>,
    /// Replace an existing non-empty `out_dir`.
    pub force: bool,
    pub stop_on_crash: bool,
    pub clock: ClockKind,
    /// Set from outside (Ctrl-C) to end the campaign.
    pub stop: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("output directory {0} exists and is not empty (use --force to replace it)")]
    OutDirExists(PathBuf),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopCause {
    MaxExecs,
    MaxTime,
    Interrupted,
    FirstCrash,
    HarnessError(String),
}

impl fmt::Display for StopCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopCause::MaxExecs => f.write_str("max_execs"),
            StopCause::MaxTime => f.write_str("max_time"),
            StopCause::Interrupted => f.write_str("interrupted"),
            StopCause::FirstCrash => f.write_str("first_crash"),
            StopCause::HarnessError(e) => write!(f, "harness_error: {e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzStats {
    pub total_execs: u64,
    /// Executions of the initial seeds; the rest are attributed to the
    /// queue entry they were mutated from.
    pub seed_execs: u64,
    pub execs_per_sec: f64,
    pub queue_len: usize,
    pub crashes_unique: usize,
    pub crash_events: u64,
    pub timeouts: u64,
    pub last_new_path_at_ms: u64,
    pub mode: ExecMode,
}

#[derive(Clone, Debug)]
pub struct CampaignReport {
    pub stats: FuzzStats,
    pub rng_seed: u64,
    pub clock: ClockKind,
    pub stop: StopCause,
    pub elapsed_ms: u64,
    pub queue: Vec<QueueEntry>,
    pub crashes: Vec<CrashRecord>,
    /// (execution number, campaign ms) of the first unique crash.
    pub first_crash: Option<(u64, u64)>,
    pub mutations: OpHistogram,
    /// `stats.csv` rows without the header.
    pub stats_rows: Vec<String>,
    pub warnings: Vec<String>,
}

fn mode_label(m: ExecMode) -> &'static str {
    match m {
        ExecMode::Restart => "Restart",
        ExecMode::Persistent => "Persistent",
    }
}

impl CampaignReport {
    pub fn to_text(&self) -> String {
        let s = &self.stats;
        let mut t = String::new();
        let _ = writeln!(t, "mode = {}", s.mode);
        let _ = writeln!(t, "clock = {}", self.clock);
        let _ = writeln!(t, "rng_seed = {}", self.rng_seed);
        let _ = writeln!(t, "stop = {}", self.stop);
        let _ = writeln!(t, "elapsed_ms = {}", self.elapsed_ms);
        let _ = writeln!(t, "total_execs = {}", s.total_execs);
        let _ = writeln!(t, "seed_execs = {}", s.seed_execs);
        let _ = writeln!(t, "execs_per_sec = {:.2}", s.execs_per_sec);
        let _ = writeln!(t, "queue_len = {}", s.queue_len);
        let _ = writeln!(t, "crash_events = {}", s.crash_events);
        let _ = writeln!(t, "crashes_unique = {}", s.crashes_unique);
        let _ = writeln!(t, "timeouts = {}", s.timeouts);
        let _ = writeln!(t, "last_new_path_at_ms = {}", s.last_new_path_at_ms);
        match self.first_crash {
            Some((n, ms)) => {
                let _ = writeln!(t, "first_crash = exec {n} at {ms} ms");
            }
            None => {
                let _ = writeln!(t, "first_crash = none");
            }
        }
        let _ = writeln!(t, "\n[queue]");
        for (i, e) in self.queue.iter().enumerate() {
            let _ = writeln!(
                t,
                "{i:06} len={} digest={:016x} found_at_ms={} favored={} execs={}",
                e.input.len(),
                e.coverage_digest,
                e.found_at_ms,
                e.favored,
                e.execs
            );
        }
        let _ = writeln!(t, "\n[crashes]");
        for (i, c) in self.crashes.iter().enumerate() {
            let _ = writeln!(t, "{i:06} {} digest={:016x} exec={} len={}", c.reason, c.coverage_digest, c.exec_number, c.input.len());
        }
        let _ = writeln!(t, "\n[mutations]");
        for op in MutOp::ALL {
            let _ = writeln!(t, "{op} = {}", self.mutations.get(op));
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(t, "\n[warnings]");
            for w in &self.warnings {
                let _ = writeln!(t, "{w}");
            }
        }
        t
    }
}

struct OutDir {
    root: PathBuf,
    stats: BufWriter<File>,
}

fn io_err(path: &Path, e: std::io::Error) -> CampaignError {
    CampaignError::Io { path: path.to_path_buf(), msg: e.to_string() }
}

fn prepare_out_dir(root: &Path, force: bool) -> Result<OutDir, CampaignError> {
    if root.exists() {
        let non_empty = fs::read_dir(root).map_err(|e| io_err(root, e))?.next().is_some();
        if non_empty && !force {
            return Err(CampaignError::OutDirExists(root.to_path_buf()));
        }
        if non_empty {
            fs::remove_dir_all(root).map_err(|e| io_err(root, e))?;
        }
    }
    for sub in ["queue", "crashes"] {
        let p = root.join(sub);
        fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
    }
    let sp = root.join("stats.csv");
    let mut stats = BufWriter::new(File::create(&sp).map_err(|e| io_err(&sp, e))?);
    writeln!(stats, "{STATS_HEADER}").map_err(|e| io_err(&sp, e))?;
    Ok(OutDir { root: root.to_path_buf(), stats })
}

struct Campaign<'a, E: Executor> {
    exec: &'a mut E,
    opts: &'a CampaignOptions,
    rng: ChaCha8Rng,
    clock: Clock,
    global: CoverageMap,
    queue: Queue,
    triage: Triage,
    out: Option<OutDir>,
    stats: FuzzStats,
    hist: OpHistogram,
    rows: Vec<String>,
    rate_samples: VecDeque<(u64, u64)>,
    next_row_ms: u64,
    first_crash: Option<(u64, u64)>,
    warnings: Vec<String>,
    stop: Option<StopCause>,
}

impl<E: Executor> Campaign<'_, E> {
    fn now_ms(&self) -> u64 {
        self.clock.now_us() / 1000
    }

    /// Runs one input and folds the result into queue, map and triage.
    fn run_one(&mut self, input: Vec<u8>) -> Option<RunResult> {
        let r = match self.exec.execute(&input) {
            Ok(r) => r,
            Err(e) => {
                self.stop = Some(StopCause::HarnessError(e.to_string()));
                return None;
            }
        };
        self.stats.total_execs += 1;
        let cost = self.clock.cost_us(&r);
        self.clock.advance(&r);
        let mut classified = r.coverage.clone();
        classify_counts(&mut classified);
        match r.exit {
            ExitKind::Timeout => self.stats.timeouts += 1,
            ExitKind::Crash(_) => {
                let digest = classified.digest();
                let n = self.stats.total_execs;
                if self.triage.triage_crash(&r, digest, &input, n) {
                    if self.first_crash.is_none() {
                        self.first_crash = Some((n, self.now_ms()));
                    }
                    if self.opts.stop_on_crash {
                        self.stop = Some(StopCause::FirstCrash);
                    }
                }
                self.warnings.extend(self.triage.take_warnings());
            }
            ExitKind::Ok | ExitKind::InputExhausted => {
                let nb = has_new_bits(&mut self.global, &classified).expect("maps share one size");
                if nb != NewBits::Nothing && !self.queue.contains(&input) {
                    let digest = classified.digest();
                    let now = self.now_ms();
                    let entry = QueueEntry::new(input, digest, classified.nonzero_indices(), cost, now);
                    self.persist_queue_entry(&entry);
                    self.queue.add(entry);
                    self.stats.last_new_path_at_ms = now;
                }
            }
        }
        Some(r)
    }

    fn persist_queue_entry(&mut self, e: &QueueEntry) {
        if let Some(out) = &self.out {
            let p = out.root.join("queue").join(format!("id_{:06}_{:016x}", self.queue.len(), e.coverage_digest));
            if let Err(err) = fs::write(&p, &e.input) {
                self.warnings.push(format!("could not write {}: {err}", p.display()));
            }
        }
    }

    fn refresh_stats(&mut self) {
        self.stats.queue_len = self.queue.len();
        self.stats.crashes_unique = self.triage.unique();
        self.stats.crash_events = self.triage.events();
        let now = self.clock.now_us();
        while self.rate_samples.len() > 1 && self.rate_samples[0].0 + RATE_WINDOW_US < now {
            self.rate_samples.pop_front();
        }
        if let Some(&(t0, e0)) = self.rate_samples.front() {
            let dt = now.saturating_sub(t0);
            if dt > 0 {
                self.stats.execs_per_sec = (self.stats.total_execs - e0) as f64 * 1e6 / dt as f64;
            }
        }
        self.rate_samples.push_back((now, self.stats.total_execs));
    }

    fn emit_row(&mut self) {
        self.refresh_stats();
        let s = &self.stats;
        let row = format!(
            "{},{},{:.2},{},{},{}",
            self.clock.unix_ms(),
            s.total_execs,
            s.execs_per_sec,
            s.queue_len,
            s.crashes_unique,
            mode_label(s.mode)
        );
        if let Some(out) = &mut self.out {
            if let Err(e) = writeln!(out.stats, "{row}").and_then(|_| out.stats.flush()) {
                self.warnings.push(format!("stats.csv: {e}"));
            }
        }
        self.rows.push(row);
    }

    fn maybe_row(&mut self) {
        if self.now_ms() >= self.next_row_ms {
            self.emit_row();
            while self.next_row_ms <= self.now_ms() {
                self.next_row_ms += STATS_INTERVAL_MS;
            }
        }
    }

    fn check_budget(&mut self, wall_start: Instant) {
        if self.stop.is_some() {
            return;
        }
        if self.opts.stop.as_ref().is_some_and(|f| f.load(Ordering::Relaxed)) {
            self.stop = Some(StopCause::Interrupted);
        } else if self.opts.max_execs.is_some_and(|m| self.stats.total_execs >= m) {
            self.stop = Some(StopCause::MaxExecs);
        } else if self.opts.max_time.is_some_and(|t| wall_start.elapsed() >= t) {
            self.stop = Some(StopCause::MaxTime);
        }
    }
}

/// Runs a campaign until a budget runs out, the stop flag is raised, or
/// (optionally) the first unique crash. A harness failure ends the
/// campaign early; the partial report is still written and returned with
/// [`StopCause::HarnessError`].
pub fn fuzz_campaign<E: Executor>(
    exec: &mut E,
    seeds: &[Vec<u8>],
    opts: &CampaignOptions,
) -> Result<CampaignReport, CampaignError> {
    let out = match &opts.out_dir {
        Some(d) => Some(prepare_out_dir(d, opts.force)?),
        None => None,
    };
    let crash_dir = out.as_ref().map(|o| o.root.join("crashes"));
    let mode = exec.mode();
    let wall_start = Instant::now();
    let mut c = Campaign {
        exec,
        opts,
        rng: ChaCha8Rng::seed_from_u64(opts.rng_seed),
        clock: Clock { kind: opts.clock, virtual_us: 0, start: wall_start },
        global: CoverageMap::new(),
        queue: Queue::new(),
        triage: Triage::new(crash_dir),
        out,
        stats: FuzzStats {
            total_execs: 0,
            seed_execs: 0,
            execs_per_sec: 0.0,
            queue_len: 0,
            crashes_unique: 0,
            crash_events: 0,
            timeouts: 0,
            last_new_path_at_ms: 0,
            mode,
        },
        hist: OpHistogram::default(),
        rows: Vec::new(),
        rate_samples: VecDeque::new(),
        next_row_ms: STATS_INTERVAL_MS,
        first_crash: None,
        warnings: Vec::new(),
        stop: None,
    };
    c.rate_samples.push_back((0, 0));

    let default_seed = [Vec::new()];
    let seeds = if seeds.is_empty() { &default_seed[..] } else { seeds };
    let mut first_seed = None;
    for s in seeds {
        c.check_budget(wall_start);
        if c.stop.is_some() {
            break;
        }
        let s = s[..s.len().min(MAX_INPUT_LEN)].to_vec();
        let Some(r) = c.run_one(s.clone()) else { break };
        c.stats.seed_execs += 1;
        if first_seed.is_none() {
            first_seed = Some((s, r));
        }
        c.maybe_row();
    }
    // keep something to mutate even if every seed crashed or timed out
    if c.queue.is_empty() && c.stop.is_none() {
        if let Some((s, r)) = first_seed {
            let cov = r.coverage.classified();
            let cost = c.clock.cost_us(&r);
            let entry = QueueEntry::new(s, cov.digest(), cov.nonzero_indices(), cost, c.now_ms());
            c.persist_queue_entry(&entry);
            c.queue.add(entry);
        }
    }

    loop {
        c.check_budget(wall_start);
        if c.stop.is_some() || c.queue.is_empty() {
            break;
        }
        let now = c.now_ms();
        let idx = schedule_next(&c.queue, now, &mut c.rng);
        let donor_idx = (c.queue.len() > 1).then(|| {
            let j = c.rng.gen_range(0..c.queue.len() - 1);
            if j >= idx { j + 1 } else { j }
        });
        let donor = donor_idx.map(|j| c.queue.get(j).input.clone());
        let input = mutate_havoc(&c.queue.get(idx).input, &mut c.rng, donor.as_deref(), Some(&mut c.hist));
        if c.run_one(input).is_none() {
            break;
        }
        c.queue.get_mut(idx).execs += 1;
        c.maybe_row();
    }

    c.emit_row();
    let stop = c.stop.clone().unwrap_or(StopCause::Interrupted);
    let mut warnings = std::mem::take(&mut c.warnings);
    if let Some(out) = &mut c.out {
        if let Err(e) = out.stats.flush() {
            warnings.push(format!("stats.csv: {e}"));
        }
    }
    let report = CampaignReport {
        stats: c.stats.clone(),
        rng_seed: opts.rng_seed,
        clock: opts.clock,
        stop,
        elapsed_ms: c.now_ms(),
        queue: c.queue.entries().to_vec(),
        crashes: c.triage.records().to_vec(),
        first_crash: c.first_crash,
        mutations: c.hist.clone(),
        stats_rows: c.rows.clone(),
        warnings,
    };
    if let Some(out) = &c.out {
        let p = out.root.join("report.txt");
        fs::write(&p, report.to_text()).map_err(|e| io_err(&p, e))?;
    }
    Ok(report)
}
