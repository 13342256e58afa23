//! Stage timings (startup, configuration, execution) and restart versus
//! persistent throughput.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::harness::{spawn_vp, Deployment, ExecMode, Harness, HarnessError, VpConfig};

pub const CSV_HEADER: &str = "iteration,mode,startup_ms,config_ms,exec_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct StageRow {
    pub iteration: usize,
    pub mode: ExecMode,
    pub startup_ms: f64,
    pub config_ms: f64,
    pub exec_ms: f64,
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub iterations: usize,
    pub corpus_size: usize,
    /// Executable that serves `vp` for the restart (process) side.
    pub exe: PathBuf,
    pub rng_seed: u64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<StageRow>,
    pub corpus_len: usize,
    pub restart_execs_per_sec: f64,
    pub persistent_execs_per_sec: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSummary {
    pub n: usize,
    pub startup_ms: f64,
    pub config_ms: f64,
    pub exec_ms: f64,
    /// Sample standard deviations; None for a single iteration.
    pub sd: Option<(f64, f64, f64)>,
}

fn mean_sd(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, None);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, Some(var.sqrt()))
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.persistent_execs_per_sec / self.restart_execs_per_sec
    }

    pub fn summary_for(&self, mode: ExecMode) -> Option<StageSummary> {
        let rows: Vec<&StageRow> = self.rows.iter().filter(|r| r.mode == mode).collect();
        if rows.is_empty() {
            return None;
        }
        let col = |f: fn(&StageRow) -> f64| mean_sd(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
        let (s, s_sd) = col(|r| r.startup_ms);
        let (c, c_sd) = col(|r| r.config_ms);
        let (e, e_sd) = col(|r| r.exec_ms);
        let sd = s_sd.zip(c_sd).zip(e_sd).map(|((a, b), c)| (a, b, c));
        Some(StageSummary { n: rows.len(), startup_ms: s, config_ms: c, exec_ms: e, sd })
    }

    pub fn csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.4},{:.4},{:.4}", r.iteration, r.mode, r.startup_ms, r.config_ms, r.exec_ms);
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for mode in [ExecMode::Restart, ExecMode::Persistent] {
            let Some(m) = self.summary_for(mode) else { continue };
            let _ = write!(
                s,
                "{mode:<10} n={} startup_ms={:.3} config_ms={:.3} exec_ms={:.4}",
                m.n, m.startup_ms, m.config_ms, m.exec_ms
            );
            if let Some((a, b, c)) = m.sd {
                let _ = write!(s, " (sd {a:.3} / {b:.3} / {c:.4})");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "throughput over {} inputs:", self.corpus_len);
        let _ = writeln!(s, "  restart    {:>12.1} execs/s", self.restart_execs_per_sec);
        let _ = writeln!(s, "  persistent {:>12.1} execs/s", self.persistent_execs_per_sec);
        let _ = writeln!(s, "  speedup    {:>12.1}x", self.speedup());
        s
    }
}

/// A fixed corpus of short lowercase lines, some unterminated.
pub fn bench_corpus(n: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(0..=8);
            let mut v: Vec<u8> = (0..len).map(|_| rng.gen_range(b'a'..=b'z')).collect();
            if rng.gen_bool(0.9) {
                v.push(b'\n');
            }
            v
        })
        .collect()
}

/// Runs every input once and returns executions per second.
pub fn measure_throughput(h: &mut Harness, corpus: &[Vec<u8>]) -> Result<f64, HarnessError> {
    let t = Instant::now();
    for input in corpus {
        h.run_case(input)?;
    }
    Ok(corpus.len() as f64 / t.elapsed().as_secs_f64())
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Stage rows for both modes: restart spawns a child VP per iteration,
/// persistent boots an embedded VP. Then the throughput of each mode over
/// the corpus.
pub fn run_bench(config: &VpConfig, image: &[u8], opts: &BenchOptions) -> Result<BenchReport, HarnessError> {
    let corpus = bench_corpus(opts.corpus_size, opts.rng_seed);
    let probe = corpus.first().cloned().unwrap_or_default();
    let mut rows = Vec::new();
    for (mode, dep) in [(ExecMode::Restart, Deployment::Process(opts.exe.clone())), (ExecMode::Persistent, Deployment::Embedded)]
    {
        for i in 0..opts.iterations {
            let mut h = spawn_vp(config, image, &dep)?;
            let r = h.run(&probe)?;
            let t = h.timings();
            rows.push(StageRow {
                iteration: i,
                mode,
                startup_ms: ms(t.startup),
                config_ms: ms(t.config),
                exec_ms: r.exec_us as f64 / 1e3,
            });
        }
    }
    let mut restart = Harness::new(config.clone(), image.to_vec(), Deployment::Process(opts.exe.clone()), ExecMode::Restart)?;
    let restart_eps = measure_throughput(&mut restart, &corpus)?;
    let mut persistent = Harness::new(config.clone(), image.to_vec(), Deployment::Embedded, ExecMode::Persistent)?;
    persistent.ensure_spawned()?;
    let persistent_eps = measure_throughput(&mut persistent, &corpus)?;
    Ok(BenchReport {
        rows,
        corpus_len: corpus.len(),
        restart_execs_per_sec: restart_eps,
        persistent_execs_per_sec: persistent_eps,
    })
}
