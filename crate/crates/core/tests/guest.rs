mod common;

use common::props::check_coverage_ladder;
use common::ref_caesar;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpfuzz::guest::{assemble, build, build_password_guest, BUNDLE_NAMES};
use vpfuzz::harness::{CrashReason, ExitKind, Vp};
use vpfuzz::isa::disassemble;

const R3: [&str; 10] = ["add", "sub", "sll", "slt", "sltu", "xor", "srl", "sra", "or", "and"];
const I3: [&str; 6] = ["addi", "slti", "sltiu", "xori", "ori", "andi"];
const SH: [&str; 3] = ["slli", "srli", "srai"];
const LD: [&str; 5] = ["lb", "lh", "lw", "lbu", "lhu"];
const ST: [&str; 3] = ["sb", "sh", "sw"];
const BR: [&str; 6] = ["beq", "bne", "blt", "bge", "bltu", "bgeu"];

/// One instruction in the disassembler's canonical spelling.
fn canonical(rng: &mut ChaCha8Rng) -> String {
    let r = |rng: &mut ChaCha8Rng| rng.gen_range(0..32);
    let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| xs[rng.gen_range(0..xs.len())];
    match rng.gen_range(0..11) {
        0 => format!("{} x{}, x{}, x{}", pick(rng, &R3), r(rng), r(rng), r(rng)),
        1 => format!("{} x{}, x{}, {}", pick(rng, &I3), r(rng), r(rng), rng.gen_range(-2048..2048)),
        2 => format!("{} x{}, x{}, {}", pick(rng, &SH), r(rng), r(rng), rng.gen_range(0..32)),
        3 => format!("lui x{}, 0x{:x}", r(rng), rng.gen_range(0..0x100000)),
        4 => format!("auipc x{}, 0x{:x}", r(rng), rng.gen_range(0..0x100000)),
        5 => format!("jal x{}, {}", r(rng), rng.gen_range(-(1 << 19)..(1 << 19)) * 2),
        6 => format!("jalr x{}, {}(x{})", r(rng), rng.gen_range(-2048..2048), r(rng)),
        7 => format!("{} x{}, x{}, {}", pick(rng, &BR), r(rng), r(rng), rng.gen_range(-2048..2048) * 2),
        8 => format!("{} x{}, {}(x{})", pick(rng, &LD), r(rng), rng.gen_range(-2048..2048), r(rng)),
        9 => format!("{} x{}, {}(x{})", pick(rng, &ST), r(rng), rng.gen_range(-2048..2048), r(rng)),
        _ => ["ecall", "ebreak"][rng.gen_range(0..2)].to_string(),
    }
}

#[test]
fn canonical_programs_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let prog: Vec<String> = (0..50).map(|_| canonical(&mut rng)).collect();
        let bytes = assemble(&prog.join("\n"), 0x1000).unwrap().bytes;
        assert_eq!(bytes.len(), 200);
        assert_eq!(disassemble(&bytes), prog);
    }
}

proptest! {
    #[test]
    fn any_word_survives_disassembly(w in any::<u32>()) {
        let text = &disassemble(&w.to_le_bytes())[0];
        let back = assemble(text, 0x1000).unwrap().bytes;
        prop_assert_eq!(back, w.to_le_bytes().to_vec(), "{}", text);
    }
}

#[test]
fn coverage_ladder() {
    for pw in ["abcd", "hello", "secret"] {
        check_coverage_ladder(pw, 1).unwrap();
    }
    check_coverage_ladder("zebra", 25).unwrap();
}

#[test]
fn guest_shifts_the_buffer_like_the_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for shift in [1u32, 3, 13, 25] {
        let b = build_password_guest("hello", shift).unwrap();
        let (mut vp, _) = Vp::boot(&b.config, &b.binary).unwrap();
        let buf = b.symbol("read_str").unwrap();
        for _ in 0..50 {
            let len = rng.gen_range(0..20);
            let text: String = (0..len).map(|_| rng.gen_range(b' '..=b'~') as char).collect();
            vp.run(format!("{text}\n").as_bytes());
            let got = vp.memory().read_bytes(buf, len + 1).unwrap();
            assert_eq!(&got[..len], ref_caesar(&text, shift as u8).as_bytes());
            assert_eq!(got[len], 0);
        }
    }
}

#[test]
fn password_verdicts() {
    let b = build_password_guest("hello", 1).unwrap();
    let (mut vp, _) = Vp::boot(&b.config, &b.binary).unwrap();
    assert_eq!(vp.run(b"hello\n").exit, ExitKind::Crash(CrashReason::ReturnValueNonzero(1)));
    assert_eq!(vp.run(b"hello").exit, ExitKind::InputExhausted);
    assert_eq!(vp.run(b"hell\n").exit, ExitKind::Ok);
    assert_eq!(vp.run(b"helloo\n").exit, ExitKind::Ok);
    assert_eq!(vp.run(b"hello\0").exit, ExitKind::Crash(CrashReason::ReturnValueNonzero(1)));
}

#[test]
fn bundles_write_loadable_configs() {
    let dir = tempfile::tempdir().unwrap();
    for name in BUNDLE_NAMES {
        let b = build(name, "hello", 1).unwrap();
        b.write_to(dir.path()).unwrap();
        let cf = vpfuzz::config::ConfigFile::load(&dir.path().join(format!("{name}.cfg"))).unwrap();
        assert_eq!(cf.load_image().unwrap(), b.binary, "{name}");
        assert_eq!(cf.vp.entry_pc, b.config.entry_pc, "{name}");
        assert_eq!(cf.vp.crash_mode, b.config.crash_mode, "{name}");
        assert_eq!(cf.vp.persistent, b.config.persistent, "{name}");
    }
}
