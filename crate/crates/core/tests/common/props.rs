//! Property checks shared by the integration tests and the acceptance
//! runner. Each returns `Err` with a description of the first violation.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpfuzz::coverage::{classify_counts, has_new_bits, CoverageMap, NewBits, MAP_SIZE};
use vpfuzz::harness::protocol::{decode_frame, decode_stream, encode_frame, FrameError, Message, HEADER_LEN};
use vpfuzz::harness::{CrashReason, ExitKind, RunResult};
use vpfuzz::isa::{Bus, BusResponse, BusTransaction, Direction, FaultKind, GuestMemory};
use vpfuzz::probe::{AddressRange, ExhaustionPolicy, ProbeConfig, SystemBus, WritePolicy};

use super::{ref_bucket, ref_new_bits, random_bucket_map};

const MEM_BASE: u32 = 0x1000;
const MEM_SIZE: u32 = 0x4000;

fn pattern(addr: u32) -> u8 {
    (addr.wrapping_mul(7) ^ (addr >> 8)) as u8
}

fn tracked_ranges() -> Vec<AddressRange> {
    vec![
        AddressRange::new(0x2002, 0x2005).unwrap(),
        AddressRange::new(0x3000, 0x30ff).unwrap(),
        AddressRange::new(0x4000_2000, 0x4000_2000).unwrap(),
    ]
}

fn random_txn(rng: &mut ChaCha8Rng) -> BusTransaction {
    let size = [1u8, 2, 4][rng.gen_range(0..3)];
    let addr = match rng.gen_range(0..10) {
        0..=2 => 0x2000 + rng.gen_range(0..8),
        3..=4 => 0x3000 + rng.gen_range(0..0x100),
        5 => 0x4000_2000,
        6 => [0u32, 0x10_0000, 0xffff_fff0, 0x4000_3000][rng.gen_range(0..4)],
        _ => MEM_BASE + rng.gen_range(0..MEM_SIZE - 4),
    } & !(size as u32 - 1);
    let pc = MEM_BASE + 4 * rng.gen_range(0..64);
    if rng.gen_bool(0.6) {
        BusTransaction::read(addr, size, pc).unwrap()
    } else {
        BusTransaction::write(addr, size, rng.gen(), pc).unwrap()
    }
}

fn fresh_memory() -> GuestMemory {
    let mut m = GuestMemory::new(MEM_BASE, MEM_SIZE);
    let img: Vec<u8> = (MEM_BASE..MEM_BASE + MEM_SIZE).map(pattern).collect();
    m.load_image(&img, MEM_BASE).unwrap();
    m
}

/// Byte-level model of RAM: reads and writes in bounds, faults outside.
struct MemModel {
    bytes: HashMap<u32, u8>,
}

impl MemModel {
    fn new() -> Self {
        MemModel { bytes: (MEM_BASE..MEM_BASE + MEM_SIZE).map(|a| (a, pattern(a))).collect() }
    }

    fn apply(&mut self, t: &BusTransaction) -> BusResponse {
        let addrs: Vec<u32> = (0..t.size as u32).map(|i| t.addr.wrapping_add(i)).collect();
        if !addrs.iter().all(|a| self.bytes.contains_key(a)) || t.addr.checked_add(t.size as u32 - 1).is_none() {
            return BusResponse::Fault(FaultKind::BusError);
        }
        match t.dir {
            Direction::Read => BusResponse::Ok(addrs.iter().rev().fold(0u32, |v, a| (v << 8) | self.bytes[a] as u32)),
            Direction::Write => {
                for (i, a) in addrs.iter().enumerate() {
                    self.bytes.insert(*a, (t.data >> (8 * i)) as u8);
                }
                BusResponse::Ok(0)
            }
        }
    }
}

fn overlaps_tracked(ranges: &[AddressRange], t: &BusTransaction) -> bool {
    (0..t.size as u64).any(|i| {
        let a = t.addr as u64 + i;
        ranges.iter().any(|r| a >= r.start as u64 && a <= r.end as u64)
    })
}

/// Interception completeness, conservation and memory isolation over one
/// random stream. The seed also picks the probe policies.
pub fn check_probe_stream(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (exhaustion, write) = match seed % 3 {
        0 => (ExhaustionPolicy::EndRun, WritePolicy::Discard),
        1 => (ExhaustionPolicy::ZeroFill, WritePolicy::Discard),
        _ => (ExhaustionPolicy::EndRun, WritePolicy::StoreToShadow),
    };
    let ranges = tracked_ranges();
    let cfg = ProbeConfig::new(ranges.clone()).unwrap().with_policies(exhaustion, write);
    let mut bus = SystemBus::new(fresh_memory(), cfg);
    let input: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
    bus.rearm(&input);

    let mut model = MemModel::new();
    let mut off = 0usize;
    let mut served_bytes = 0usize;
    let mut shadow: HashMap<u32, u8> = HashMap::new();
    let (mut n_pr, mut n_pw, mut n_mem) = (0u64, 0u64, 0u64);
    let n = rng.gen_range(1..200);
    for k in 0..n {
        let t = random_txn(&mut rng);
        let got = bus.transact(&t);
        let want = if overlaps_tracked(&ranges, &t) {
            match t.dir {
                Direction::Read => {
                    n_pr += 1;
                    let sh: Option<Vec<u8>> =
                        (0..t.size as u32).map(|i| shadow.get(&(t.addr + i)).copied()).collect();
                    if let Some(b) = sh.filter(|_| write == WritePolicy::StoreToShadow) {
                        BusResponse::Ok(b.iter().rev().fold(0u32, |v, &x| (v << 8) | x as u32))
                    } else if off + t.size as usize <= input.len() {
                        let v = input[off..off + t.size as usize].iter().rev().fold(0u32, |v, &x| (v << 8) | x as u32);
                        off += t.size as usize;
                        served_bytes += t.size as usize;
                        BusResponse::Ok(v)
                    } else if exhaustion == ExhaustionPolicy::ZeroFill {
                        let mut b = input[off..].to_vec();
                        b.resize(t.size as usize, 0);
                        off = input.len();
                        BusResponse::Ok(b.iter().rev().fold(0u32, |v, &x| (v << 8) | x as u32))
                    } else {
                        BusResponse::InputExhausted
                    }
                }
                Direction::Write => {
                    n_pw += 1;
                    if write == WritePolicy::StoreToShadow {
                        for i in 0..t.size as u32 {
                            shadow.insert(t.addr + i, (t.data >> (8 * i)) as u8);
                        }
                    }
                    BusResponse::Ok(0)
                }
            }
        } else {
            n_mem += 1;
            model.apply(&t)
        };
        if got != want {
            return Err(format!("seed {seed} txn {k} {t:?}: got {got:?}, want {want:?}"));
        }
    }
    let c = bus.counters;
    if (c.probe_reads, c.probe_writes, c.memory) != (n_pr, n_pw, n_mem) {
        return Err(format!("seed {seed}: counters {c:?} vs model ({n_pr}, {n_pw}, {n_mem})"));
    }
    if bus.cursor.offset() != off {
        return Err(format!("seed {seed}: cursor offset {} vs model {off}", bus.cursor.offset()));
    }
    if exhaustion == ExhaustionPolicy::EndRun && served_bytes != bus.cursor.offset() {
        return Err(format!("seed {seed}: served {served_bytes} bytes but offset is {}", bus.cursor.offset()));
    }
    for a in MEM_BASE..MEM_BASE + MEM_SIZE {
        let got = bus.mem.read_bytes(a, 1).unwrap()[0];
        if got != model.bytes[&a] {
            return Err(format!("seed {seed}: memory at 0x{a:x} is {got:#x}, model {:#x}", model.bytes[&a]));
        }
    }
    Ok(())
}

/// With nothing tracked, the system bus behaves exactly like bare memory.
pub fn check_transparency(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut bus = SystemBus::new(fresh_memory(), ProbeConfig::new(Vec::new()).unwrap());
    bus.rearm(&[1, 2, 3]);
    let mut mem = fresh_memory();
    for k in 0..rng.gen_range(1..200) {
        let t = random_txn(&mut rng);
        let (a, b) = (bus.transact(&t), mem.transact(&t));
        if a != b {
            return Err(format!("seed {seed} txn {k} {t:?}: bus {a:?} vs memory {b:?}"));
        }
    }
    if bus.mem.as_bytes() != mem.as_bytes() || bus.cursor.offset() != 0 {
        return Err(format!("seed {seed}: state diverged"));
    }
    Ok(())
}

pub fn check_bucket_table() -> Result<(), String> {
    let masks = [0u8, 1, 2, 4, 8, 16, 32, 64, 128];
    for v in 0..=255u8 {
        let mut m = CoverageMap::with_size(8);
        m.as_bytes_mut()[0] = v;
        classify_counts(&mut m);
        let got = m.as_bytes()[0];
        if got != ref_bucket(v) || masks.iter().filter(|&&x| x == got).count() != 1 {
            return Err(format!("counter {v}: classified {got:#04x}, expected {:#04x}", ref_bucket(v)));
        }
    }
    Ok(())
}

/// One random pair of classified maps against the brute-force comparator.
pub fn check_new_bits_pair(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dg = rng.gen_range(0.0..0.05);
    let g = random_bucket_map(&mut rng, MAP_SIZE, dg);
    let mut l = match seed % 4 {
        0 => g.clone(),
        1 => g.iter().map(|&b| if b != 0 && rng.gen_bool(0.5) { b } else { 0 }).collect(),
        _ => {
            let dl = rng.gen_range(0.0..0.01);
            random_bucket_map(&mut rng, MAP_SIZE, dl)
        }
    };
    if seed % 4 == 1 && rng.gen_bool(0.5) {
        // a new count on an already covered byte
        if let Some(i) = g.iter().position(|&b| b != 0 && b != 0x80) {
            l[i] = g[i] << 1;
        }
    }
    let (want, merged) = ref_new_bits(&g, &l);
    let mut gm = CoverageMap::from_bytes(g);
    let lm = CoverageMap::from_bytes(l);
    let got = has_new_bits(&mut gm, &lm).map_err(|e| e.to_string())?;
    let got_code = match got {
        NewBits::Nothing => 0,
        NewBits::NewCounts => 1,
        NewBits::NewEdges => 2,
    };
    if got_code != want {
        return Err(format!("seed {seed}: has_new_bits {got:?}, brute force {want}"));
    }
    if gm.as_bytes() != &merged[..] {
        return Err(format!("seed {seed}: merged map differs"));
    }
    if has_new_bits(&mut gm, &lm).unwrap() != NewBits::Nothing {
        return Err(format!("seed {seed}: second merge not idempotent"));
    }
    Ok(())
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let bytes = |rng: &mut ChaCha8Rng, n: usize| -> Vec<u8> { (0..rng.gen_range(0..n)).map(|_| rng.gen()).collect() };
    let text = |rng: &mut ChaCha8Rng, n: usize| -> String {
        (0..rng.gen_range(0..n)).map(|_| char::from_u32(rng.gen_range(0x20..0x3000)).unwrap_or('?')).collect()
    };
    match rng.gen_range(0..6) {
        0 => Message::Configure { config: text(rng, 200), image: bytes(rng, 600) },
        1 => Message::Ready,
        2 => Message::Run(bytes(rng, 300)),
        3 => {
            let exit = match rng.gen_range(0..6) {
                0 => ExitKind::Ok,
                1 => ExitKind::Crash(CrashReason::ReturnValueNonzero(rng.gen_range(1..=u32::MAX))),
                2 => ExitKind::Crash(CrashReason::ErrorHandlerReached),
                3 => ExitKind::Crash(CrashReason::HardwareFault(
                    [FaultKind::BusError, FaultKind::IllegalInstruction, FaultKind::MisalignedAccess, FaultKind::StackOverflowGuard]
                        [rng.gen_range(0..4)],
                )),
                4 => ExitKind::Timeout,
                _ => ExitKind::InputExhausted,
            };
            let mut cov = CoverageMap::new();
            for _ in 0..rng.gen_range(0..50) {
                cov.as_bytes_mut()[rng.gen_range(0..MAP_SIZE)] = rng.gen();
            }
            Message::Result(Box::new(RunResult { exit, coverage: cov, instructions: rng.gen(), probe_reads: None, exec_us: rng.gen() }))
        }
        4 => Message::Shutdown,
        _ => Message::Error(text(rng, 100)),
    }
}

/// Round trip of one random frame, plus truncation at a random cut inside
/// a two-frame stream.
pub fn check_protocol_case(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random_message(&mut rng);
    let f = encode_frame(&m);
    let declared = u32::from_le_bytes(f[1..5].try_into().unwrap()) as usize;
    if f.len() != HEADER_LEN + declared || f[0] != m.msg_type() {
        return Err(format!("seed {seed}: bad framing arithmetic"));
    }
    match decode_frame(&f) {
        Ok((d, used)) if d == m && used == f.len() => {}
        other => return Err(format!("seed {seed}: round trip failed: {:?}", other.map(|(_, u)| u))),
    }
    // truncated second frame: rejected exactly at its first byte
    let m2 = random_message(&mut rng);
    let f2 = encode_frame(&m2);
    let cut = rng.gen_range(0..f2.len());
    let mut stream = f.clone();
    stream.extend_from_slice(&f2[..cut]);
    if cut == 0 {
        return match decode_stream(&stream) {
            Ok(v) if v == vec![m] => Ok(()),
            other => Err(format!("seed {seed}: whole-frame stream: {other:?}")),
        };
    }
    let needed = if cut < HEADER_LEN { HEADER_LEN - cut } else { f2.len() - cut };
    match decode_stream(&stream) {
        Err(FrameError::Incomplete { offset, needed: n }) if offset == f.len() && n == needed => Ok(()),
        other => Err(format!("seed {seed}: truncation at {cut} gave {other:?}, want Incomplete at {} needing {needed}", f.len())),
    }
}

/// Inputs for the restart/persistent comparison: the benchmark corpus plus
/// a few that reach every verdict of the password guest.
pub fn equivalence_corpus(n: usize) -> Vec<Vec<u8>> {
    let mut c = vpfuzz::bench::bench_corpus(n.saturating_sub(4), 11);
    c.extend([b"hello\n".to_vec(), b"hellp\n".to_vec(), Vec::new(), b"hel".to_vec()]);
    c
}

/// Runs the corpus through a fresh-process restart harness and an embedded
/// persistent one and compares verdicts and classified coverage.
pub fn check_mode_equivalence(exe: &std::path::Path, corpus: &[Vec<u8>]) -> Result<(), String> {
    use vpfuzz::harness::{Deployment, ExecMode, Harness};
    let b = vpfuzz::guest::build_password_guest("hello", 1).map_err(|e| e.to_string())?;
    let mk = |d, m| Harness::new(b.config.clone(), b.binary.clone(), d, m).map_err(|e| e.to_string());
    let mut restart = mk(Deployment::Process(exe.to_path_buf()), ExecMode::Restart)?;
    let mut persistent = mk(Deployment::Embedded, ExecMode::Persistent)?;
    let mut crashes = 0;
    for (i, input) in corpus.iter().enumerate() {
        let r = restart.run_case(input).map_err(|e| format!("restart #{i}: {e}"))?;
        let p = persistent.run_case(input).map_err(|e| format!("persistent #{i}: {e}"))?;
        if r.exit != p.exit {
            return Err(format!("input #{i} {input:?}: restart {} vs persistent {}", r.exit, p.exit));
        }
        let (dr, dp) = (r.coverage.classified().digest(), p.coverage.classified().digest());
        if dr != dp {
            return Err(format!("input #{i} {input:?}: coverage {dr:016x} vs {dp:016x}"));
        }
        crashes += r.exit.is_crash() as usize;
    }
    if restart.spawns() != corpus.len() as u64 {
        return Err(format!("restart harness spawned {} VPs for {} inputs", restart.spawns(), corpus.len()));
    }
    if crashes == 0 {
        return Err("corpus never reached the crash verdict".into());
    }
    Ok(())
}

/// Each extra correct password character must light up edges no shorter
/// prefix reached.
pub fn check_coverage_ladder(password: &str, shift: u32) -> Result<(), String> {
    let b = vpfuzz::guest::build_password_guest(password, shift).map_err(|e| e.to_string())?;
    let (mut vp, _) = vpfuzz::harness::Vp::boot(&b.config, &b.binary).map_err(|e| e.to_string())?;
    let mut global = CoverageMap::new();
    let pw = password.as_bytes();
    for k in 0..=pw.len() {
        let mut input = pw[..k].to_vec();
        // wrong from here on, same length
        input.extend(pw[k..].iter().map(|&c| if c == b'z' { b'a' } else { c + 1 }));
        input.push(b'\n');
        let r = vp.run(&input);
        let want = if k == pw.len() { ExitKind::Crash(CrashReason::ReturnValueNonzero(1)) } else { ExitKind::Ok };
        if r.exit != want {
            return Err(format!("prefix {k}: {} instead of {want}", r.exit));
        }
        let verdict = has_new_bits(&mut global, &r.coverage.classified()).map_err(|e| e.to_string())?;
        if verdict != NewBits::NewEdges {
            return Err(format!("prefix {k} of `{password}`: {verdict:?}"));
        }
    }
    Ok(())
}

/// Correct prefix plus newline: nonzero map bytes strictly increase with
/// the prefix length.
pub fn check_prefix_ladder(password: &str, shift: u32) -> Result<Vec<usize>, String> {
    let b = vpfuzz::guest::build_password_guest(password, shift).map_err(|e| e.to_string())?;
    let (mut vp, _) = vpfuzz::harness::Vp::boot(&b.config, &b.binary).map_err(|e| e.to_string())?;
    let mut counts = Vec::new();
    for k in 0..=password.len() {
        let mut input = password.as_bytes()[..k].to_vec();
        input.push(b'\n');
        let n = vp.run(&input).coverage.count_nonzero();
        if let Some(&prev) = counts.last() {
            if n <= prev {
                return Err(format!("prefix {k}: {n} nonzero bytes, prefix {} had {prev}", k - 1));
            }
        }
        counts.push(n);
    }
    Ok(counts)
}

fn harness_for(name: &str, mode: vpfuzz::harness::ExecMode) -> Result<(vpfuzz::guest::GuestBundle, vpfuzz::harness::Harness), String> {
    let b = vpfuzz::guest::build(name, "hello", 1).map_err(|e| e.to_string())?;
    let h = vpfuzz::harness::Harness::new(b.config.clone(), b.binary.clone(), vpfuzz::harness::Deployment::Embedded, mode)
        .map_err(|e| e.to_string())?;
    Ok((b, h))
}

/// Fuzzes the length-5 password guest from an empty seed in persistent
/// embedded mode until the first crash or the wall-clock budget.
pub fn password_campaign(budget: std::time::Duration, rng_seed: u64) -> Result<vpfuzz::fuzzer::CampaignReport, String> {
    use vpfuzz::fuzzer::{fuzz_campaign, CampaignOptions};
    let (_, mut h) = harness_for("password", vpfuzz::harness::ExecMode::Persistent)?;
    let opts = CampaignOptions { rng_seed, max_time: Some(budget), stop_on_crash: true, ..Default::default() };
    fuzz_campaign(&mut h, &[], &opts).map_err(|e| e.to_string())
}

/// Two identical embedded campaigns must leave identical report.txt and
/// stats.csv behind.
pub fn check_campaign_determinism(dir: &std::path::Path, guest: &str, execs: u64) -> Result<(), String> {
    use vpfuzz::fuzzer::{fuzz_campaign, CampaignOptions};
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let (_, mut h) = harness_for(guest, vpfuzz::harness::ExecMode::Persistent)?;
        let out = dir.join(run);
        let opts = CampaignOptions { rng_seed: 1234, max_execs: Some(execs), out_dir: Some(out.clone()), ..Default::default() };
        let report = fuzz_campaign(&mut h, &[b"seed\n".to_vec()], &opts).map_err(|e| e.to_string())?;
        let read = |f: &str| std::fs::read(out.join(f)).map_err(|e| format!("{f}: {e}"));
        outputs.push((read("report.txt")?, read("stats.csv")?, report.stats_rows.len()));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    if a.0 != b.0 {
        return Err("report.txt differs".into());
    }
    if a.1 != b.1 {
        return Err("stats.csv differs".into());
    }
    if a.2 < 2 {
        return Err(format!("only {} stats rows; trajectory too short to compare", a.2));
    }
    Ok(())
}

/// Finds crashes in handler_guest and fault_write by fuzzing, adds the
/// password guest's crash, and checks that triage keeps three distinct
/// records with the expected reasons.
pub fn check_crash_modes(password_crash: &[u8]) -> Result<(), String> {
    use vpfuzz::fuzzer::{fuzz_campaign, CampaignOptions, Triage};
    use vpfuzz::harness::ExecMode;
    let mut triage = Triage::new(None);
    let mut exec = 0;
    for (guest, seed) in [("handler_guest", b"\x04abcd".to_vec()), ("fault_write", b"x".to_vec())] {
        let (_, mut h) = harness_for(guest, ExecMode::Persistent)?;
        let opts = CampaignOptions { rng_seed: 3, max_execs: Some(200_000), stop_on_crash: true, ..Default::default() };
        let report = fuzz_campaign(&mut h, &[seed], &opts).map_err(|e| e.to_string())?;
        let c = report.crashes.first().ok_or_else(|| format!("{guest}: no crash in {} execs", report.stats.total_execs))?;
        // replay through a fresh restart harness
        let (_, mut fresh) = harness_for(guest, ExecMode::Restart)?;
        let r = fresh.run_case(&c.input).map_err(|e| e.to_string())?;
        exec += 1;
        triage.triage_crash(&r, r.coverage.classified().digest(), &c.input, exec);
    }
    let (_, mut h) = harness_for("password", ExecMode::Restart)?;
    let r = h.run_case(password_crash).map_err(|e| e.to_string())?;
    triage.triage_crash(&r, r.coverage.classified().digest(), password_crash, exec + 1);
    // seeing it again must not add a record
    let before = triage.unique();
    let r = h.run_case(password_crash).map_err(|e| e.to_string())?;
    triage.triage_crash(&r, r.coverage.classified().digest(), password_crash, exec + 2);
    let recs = triage.records();
    let reasons: Vec<CrashReason> = recs.iter().map(|r| r.reason).collect();
    let ok = recs.len() == 3
        && triage.unique() == before
        && reasons[0] == CrashReason::ErrorHandlerReached
        && matches!(reasons[1], CrashReason::HardwareFault(_))
        && reasons[2] == CrashReason::ReturnValueNonzero(1);
    let keys: std::collections::HashSet<_> = recs.iter().map(|r| r.dedup_key()).collect();
    if !ok || keys.len() != 3 {
        return Err(format!("triage kept {reasons:?} with {} distinct keys", keys.len()));
    }
    Ok(())
}
