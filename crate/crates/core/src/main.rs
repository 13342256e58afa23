use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use vpfuzz::bench::{run_bench, BenchOptions};
use vpfuzz::config::ConfigFile;
use vpfuzz::fuzzer::{fuzz_campaign, CampaignOptions, ClockKind, StopCause};
use vpfuzz::guest::{self, BUNDLE_NAMES};
use vpfuzz::harness::{process, Deployment, ExecMode, ExitKind, Harness, Vp};

/// Exit statuses of `run`; every other subcommand uses 0, CONFIG_ERROR,
/// or FAILURE.
const EXIT_OK: u8 = 0;
const EXIT_CRASH: u8 = 1;
const EXIT_NO_VERDICT: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(name = "vpfuzz", version, about = "Coverage-guided fuzzing of bare-metal guests on a small RV32I virtual prototype")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one input and print the result.
    Run {
        config: PathBuf,
        input: PathBuf,
        /// Print a PROBE line for every intercepted read.
        #[arg(long)]
        trace_probe: bool,
        /// Write the raw 64 KiB coverage map to this file.
        #[arg(long, value_name = "FILE")]
        dump_coverage: Option<PathBuf>,
    },
    /// Run a fuzzing campaign.
    Fuzz {
        config: PathBuf,
        #[arg(long, default_value = "persistent")]
        mode: ExecMode,
        /// embedded or process; defaults to process for restart mode and
        /// embedded for persistent mode.
        #[arg(long)]
        deployment: Option<String>,
        #[arg(long)]
        max_execs: Option<u64>,
        /// Wall-clock budget in seconds.
        #[arg(long, value_name = "SECS")]
        max_time: Option<f64>,
        /// Output directory (overrides [fuzz] out_dir).
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Seed directory (overrides [fuzz] seed_dir).
        #[arg(long)]
        seeds: Option<PathBuf>,
        /// Overrides [fuzz] rng_seed.
        #[arg(long)]
        rng_seed: Option<u64>,
        /// virtual or wall; defaults to virtual for embedded deployment and
        /// wall for process deployment, whose spawn cost the virtual clock
        /// cannot see.
        #[arg(long)]
        clock: Option<ClockKind>,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        stop_on_crash: bool,
    },
    /// Measure VP stage timings and restart/persistent throughput.
    Bench {
        config: PathBuf,
        #[arg(long, default_value_t = 50)]
        iterations: usize,
        #[arg(long, default_value_t = 1000)]
        corpus: usize,
        /// Write the stage CSV here instead of stdout.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
    /// Bundled guests.
    Guest {
        #[command(subcommand)]
        cmd: GuestCmd,
    },
    /// Serve the VP side of the process protocol on stdin/stdout.
    #[command(hide = true)]
    Vp,
}

#[derive(Subcommand)]
enum GuestCmd {
    /// Write <name>.bin, <name>.sym and <name>.cfg.
    Build {
        name: String,
        #[arg(long, default_value = "hello")]
        password: String,
        #[arg(long, default_value_t = 1)]
        shift: u32,
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
    /// List bundled guests.
    List,
}

/// Errors that map to the configuration exit status.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct ConfigProblem(String);

fn config_problem(e: impl Into<anyhow::Error>) -> anyhow::Error {
    let e: anyhow::Error = e.into();
    ConfigProblem(format!("{e:#}")).into()
}

fn load(config: &Path) -> Result<(ConfigFile, Vec<u8>)> {
    let cf = ConfigFile::load(config).map_err(config_problem)?;
    let image = cf.load_image().map_err(config_problem)?;
    cf.vp.validate(image.len()).map_err(config_problem)?;
    Ok((cf, image))
}

fn cmd_run(config: &Path, input: &Path, trace: bool, dump: Option<&Path>) -> Result<u8> {
    let (cf, image) = load(config)?;
    let input = std::fs::read(input).with_context(|| format!("cannot read {}", input.display())).map_err(config_problem)?;
    let (mut vp, _) = Vp::boot(&cf.vp, &image).map_err(config_problem)?;
    vp.set_probe_trace(trace);
    let r = vp.run(&input);
    for ev in vp.take_probe_trace() {
        println!("{ev}");
    }
    println!("{}", r.exit);
    println!("instructions = {}", r.instructions);
    println!("probe_reads = {}", r.probe_reads.unwrap_or(0));
    println!("coverage_digest = {:016x}", r.coverage.classified().digest());
    println!("edges = {}", r.coverage.count_nonzero());
    if let Some(p) = dump {
        std::fs::write(p, r.coverage.as_bytes()).with_context(|| format!("cannot write {}", p.display()))?;
    }
    Ok(match r.exit {
        ExitKind::Ok => EXIT_OK,
        ExitKind::Crash(_) => EXIT_CRASH,
        ExitKind::Timeout | ExitKind::InputExhausted => EXIT_NO_VERDICT,
    })
}

fn read_seeds(dir: &Path) -> Result<Vec<Vec<u8>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read seed directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths.iter().map(|p| std::fs::read(p).with_context(|| format!("cannot read {}", p.display()))).collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_fuzz(
    config: &Path,
    mode: ExecMode,
    deployment: Option<&str>,
    max_execs: Option<u64>,
    max_time: Option<f64>,
    out: Option<PathBuf>,
    seeds: Option<PathBuf>,
    rng_seed: Option<u64>,
    clock: Option<ClockKind>,
    force: bool,
    stop_on_crash: bool,
) -> Result<u8> {
    let (cf, image) = load(config)?;
    if cf.vp.tracked.is_empty() {
        return Err(config_problem(anyhow::anyhow!("fuzzing needs at least one tracked range in [probe]")));
    }
    let deployment = match deployment.unwrap_or(if mode == ExecMode::Restart { "process" } else { "embedded" }) {
        "embedded" => Deployment::Embedded,
        "process" => Deployment::Process(std::env::current_exe()?),
        other => return Err(config_problem(anyhow::anyhow!("unknown deployment `{other}` (expected embedded|process)"))),
    };
    let clock = clock.unwrap_or(if deployment == Deployment::Embedded { ClockKind::Virtual } else { ClockKind::Wall });
    let out_dir = out
        .or(cf.fuzz.out_dir.clone())
        .ok_or_else(|| config_problem(anyhow::anyhow!("no output directory: pass --out or set [fuzz] out_dir")))?;
    let seeds = match seeds.or(cf.fuzz.seed_dir.clone()) {
        Some(d) => read_seeds(&d).map_err(config_problem)?,
        None => Vec::new(),
    };
    let max_time = match max_time {
        Some(t) if !(t.is_finite() && t >= 0.0) => return Err(config_problem(anyhow::anyhow!("bad --max-time {t}"))),
        t => t.map(Duration::from_secs_f64),
    };
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed)).context("cannot install Ctrl-C handler")?;

    let mut harness = Harness::new(cf.vp.clone(), image, deployment, mode).map_err(config_problem)?;
    let opts = CampaignOptions {
        rng_seed: rng_seed.or(cf.fuzz.rng_seed).unwrap_or(0),
        max_execs,
        max_time,
        out_dir: Some(out_dir.clone()),
        force,
        stop_on_crash,
        clock,
        stop: Some(stop),
    };
    let report = fuzz_campaign(&mut harness, &seeds, &opts).map_err(|e| match e {
        vpfuzz::fuzzer::CampaignError::OutDirExists(_) => config_problem(e),
        e => e.into(),
    })?;
    let s = &report.stats;
    println!(
        "{}: {} execs, {:.1} execs/s, queue {}, {} unique crashes ({} total), stop: {}",
        s.mode, s.total_execs, s.execs_per_sec, s.queue_len, s.crashes_unique, s.crash_events, report.stop
    );
    println!("report written to {}", out_dir.join("report.txt").display());
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if matches!(report.stop, StopCause::HarnessError(_)) { EXIT_FAILURE } else { EXIT_OK })
}

fn cmd_bench(config: &Path, iterations: usize, corpus: usize, csv: Option<&Path>) -> Result<u8> {
    if iterations == 0 || corpus == 0 {
        return Err(config_problem(anyhow::anyhow!("--iterations and --corpus must be positive")));
    }
    let (cf, image) = load(config)?;
    let opts = BenchOptions { iterations, corpus_size: corpus, exe: std::env::current_exe()?, rng_seed: 0 };
    let report = run_bench(&cf.vp, &image, &opts)?;
    match csv {
        Some(p) => std::fs::write(p, report.csv()).with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{}", report.csv()),
    }
    print!("{}", report.summary());
    Ok(EXIT_OK)
}

fn cmd_guest(cmd: GuestCmd) -> Result<u8> {
    match cmd {
        GuestCmd::List => {
            for n in BUNDLE_NAMES {
                println!("{n}");
            }
        }
        GuestCmd::Build { name, password, shift, out } => {
            let b = guest::build(&name, &password, shift).map_err(config_problem)?;
            for p in b.write_to(&out).with_context(|| format!("cannot write to {}", out.display()))? {
                println!("{}", p.display());
            }
        }
    }
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Run { config, input, trace_probe, dump_coverage } => cmd_run(&config, &input, trace_probe, dump_coverage.as_deref()),
        Cmd::Fuzz { config, mode, deployment, max_execs, max_time, out, seeds, rng_seed, clock, force, stop_on_crash } => cmd_fuzz(
            &config,
            mode,
            deployment.as_deref(),
            max_execs,
            max_time,
            out,
            seeds,
            rng_seed,
            clock,
            force,
            stop_on_crash,
        ),
        Cmd::Bench { config, iterations, corpus, csv } => cmd_bench(&config, iterations, corpus, csv.as_deref()),
        Cmd::Guest { cmd } => cmd_guest(cmd),
        Cmd::Vp => {
            process::serve(std::io::stdin().lock(), std::io::stdout().lock())?;
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors share the configuration status
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if e.downcast_ref::<ConfigProblem>().is_some() {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}
