//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls into the crate's interpreter, bucketing or
//! merge code.
#![allow(dead_code)]

use rand::Rng;

pub mod props;

pub const BASE: u32 = 0x1000;
pub const RAM: usize = 1 << 20;

fn sx(v: u32, bits: u32) -> u32 {
    let s = 32 - bits;
    (((v << s) as i32) >> s) as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefStop {
    Ecall,
    Ebreak,
    Fault,
    Limit,
}

/// Straight-from-the-manual RV32I interpreter over a flat RAM at 0x1000.
pub struct RefMachine {
    pub x: [u32; 32],
    pub pc: u32,
    pub mem: Vec<u8>,
    pub steps: u64,
}

impl RefMachine {
    pub fn new(image: &[u8]) -> Self {
        let mut mem = vec![0u8; RAM];
        mem[..image.len()].copy_from_slice(image);
        RefMachine { x: [0; 32], pc: BASE, mem, steps: 0 }
    }

    fn idx(&self, a: u32, n: u32) -> Option<usize> {
        if !a.is_multiple_of(n) || a < BASE {
            return None;
        }
        let i = (a - BASE) as usize;
        (i + n as usize <= RAM).then_some(i)
    }

    fn load(&self, a: u32, n: u32) -> Option<u32> {
        let i = self.idx(a, n)?;
        let mut v = 0u32;
        for k in (0..n as usize).rev() {
            v = (v << 8) | self.mem[i + k] as u32;
        }
        Some(v)
    }

    fn store(&mut self, a: u32, n: u32, v: u32) -> Option<()> {
        let i = self.idx(a, n)?;
        for k in 0..n as usize {
            self.mem[i + k] = (v >> (8 * k)) as u8;
        }
        Some(())
    }

    /// One instruction; `Some` if it stopped the machine.
    pub fn step(&mut self) -> Option<RefStop> {
        let Some(w) = self.load(self.pc, 4) else { return Some(RefStop::Fault) };
        self.steps += 1;
        let op = w & 0x7f;
        let rd = ((w >> 7) & 31) as usize;
        let f3 = (w >> 12) & 7;
        let rs1 = self.x[((w >> 15) & 31) as usize];
        let rs2 = self.x[((w >> 20) & 31) as usize];
        let f7 = w >> 25;
        let imm_i = sx(w >> 20, 12);
        let imm_s = sx(((w >> 25) << 5) | ((w >> 7) & 31), 12);
        let imm_b = sx(
            (((w >> 31) & 1) << 12) | (((w >> 7) & 1) << 11) | (((w >> 25) & 0x3f) << 5) | (((w >> 8) & 0xf) << 1),
            13,
        );
        let imm_j = sx(
            (((w >> 31) & 1) << 20) | (((w >> 12) & 0xff) << 12) | (((w >> 20) & 1) << 11) | (((w >> 21) & 0x3ff) << 1),
            21,
        );
        let mut next = self.pc.wrapping_add(4);
        let mut wb: Option<u32> = None;
        match op {
            0x37 => wb = Some(w & 0xffff_f000),
            0x17 => wb = Some(self.pc.wrapping_add(w & 0xffff_f000)),
            0x6f => {
                wb = Some(next);
                next = self.pc.wrapping_add(imm_j);
            }
            0x67 if f3 == 0 => {
                wb = Some(next);
                next = rs1.wrapping_add(imm_i) & !1;
            }
            0x63 => {
                let take = match f3 {
                    0 => rs1 == rs2,
                    1 => rs1 != rs2,
                    4 => (rs1 as i32) < (rs2 as i32),
                    5 => (rs1 as i32) >= (rs2 as i32),
                    6 => rs1 < rs2,
                    7 => rs1 >= rs2,
                    _ => return Some(RefStop::Fault),
                };
                if take {
                    next = self.pc.wrapping_add(imm_b);
                }
            }
            0x03 => {
                let a = rs1.wrapping_add(imm_i);
                let v = match f3 {
                    0 => self.load(a, 1).map(|v| sx(v, 8)),
                    1 => self.load(a, 2).map(|v| sx(v, 16)),
                    2 => self.load(a, 4),
                    4 => self.load(a, 1),
                    5 => self.load(a, 2),
                    _ => None,
                };
                match v {
                    Some(v) => wb = Some(v),
                    None => return Some(RefStop::Fault),
                }
            }
            0x23 => {
                let a = rs1.wrapping_add(imm_s);
                let n = match f3 {
                    0 => 1,
                    1 => 2,
                    2 => 4,
                    _ => return Some(RefStop::Fault),
                };
                if self.store(a, n, rs2).is_none() {
                    return Some(RefStop::Fault);
                }
            }
            0x13 => {
                let sh = (w >> 20) & 31;
                wb = Some(match (f3, f7) {
                    (0, _) => rs1.wrapping_add(imm_i),
                    (2, _) => ((rs1 as i32) < (imm_i as i32)) as u32,
                    (3, _) => (rs1 < imm_i) as u32,
                    (4, _) => rs1 ^ imm_i,
                    (6, _) => rs1 | imm_i,
                    (7, _) => rs1 & imm_i,
                    (1, 0) => rs1 << sh,
                    (5, 0) => rs1 >> sh,
                    (5, 0x20) => ((rs1 as i32) >> sh) as u32,
                    _ => return Some(RefStop::Fault),
                });
            }
            0x33 => {
                let sh = rs2 & 31;
                wb = Some(match (f3, f7) {
                    (0, 0) => rs1.wrapping_add(rs2),
                    (0, 0x20) => rs1.wrapping_sub(rs2),
                    (1, 0) => rs1 << sh,
                    (2, 0) => ((rs1 as i32) < (rs2 as i32)) as u32,
                    (3, 0) => (rs1 < rs2) as u32,
                    (4, 0) => rs1 ^ rs2,
                    (5, 0) => rs1 >> sh,
                    (5, 0x20) => ((rs1 as i32) >> sh) as u32,
                    (6, 0) => rs1 | rs2,
                    (7, 0) => rs1 & rs2,
                    _ => return Some(RefStop::Fault),
                });
            }
            0x73 if w == 0x0000_0073 => return Some(RefStop::Ecall),
            0x73 if w == 0x0010_0073 => return Some(RefStop::Ebreak),
            _ => return Some(RefStop::Fault),
        }
        if !next.is_multiple_of(4) {
            return Some(RefStop::Fault);
        }
        if let Some(v) = wb {
            if rd != 0 {
                self.x[rd] = v;
            }
        }
        self.pc = next;
        None
    }

    pub fn run(&mut self, limit: u64) -> RefStop {
        for _ in 0..limit {
            if let Some(s) = self.step() {
                return s;
            }
        }
        RefStop::Limit
    }
}

/// Bucket of a raw counter, from the documented ranges.
pub fn ref_bucket(v: u8) -> u8 {
    match v {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 4,
        4..=7 => 8,
        8..=15 => 16,
        16..=31 => 32,
        32..=127 => 64,
        128..=255 => 128,
    }
}

/// 0 nothing, 1 new counts, 2 new edges; plus the merged map.
pub fn ref_new_bits(global: &[u8], local: &[u8]) -> (u8, Vec<u8>) {
    let mut verdict = 0u8;
    let mut merged = global.to_vec();
    for i in 0..global.len() {
        for bit in 0..8 {
            let l = (local[i] >> bit) & 1;
            let g = (global[i] >> bit) & 1;
            if l == 1 && g == 0 {
                verdict = verdict.max(if global[i] == 0 { 2 } else { 1 });
            }
        }
        merged[i] = global[i] | local[i];
    }
    (verdict, merged)
}

/// hash16 written as a 64-bit product.
pub fn ref_hash16(a: u32) -> u16 {
    ((a as u64 * 0x9E37_79B1u64) as u32 >> 16) as u16
}

/// A map of bucket values with roughly `density` of its bytes set.
pub fn random_bucket_map<R: Rng>(rng: &mut R, len: usize, density: f64) -> Vec<u8> {
    (0..len).map(|_| if rng.gen_bool(density) { 1u8 << rng.gen_range(0..8) } else { 0 }).collect()
}

/// Caesar over lowercase letters, written independently of the guest kit.
pub fn ref_caesar(s: &str, k: u8) -> String {
    s.chars()
        .map(|c| if c.is_ascii_lowercase() { (((c as u8 - b'a' + k) % 26) + b'a') as char } else { c })
        .collect()
}

/// The differential corpus: small programs ending in `ecall`.
pub fn isa_programs() -> Vec<(&'static str, String)> {
    let mut v: Vec<(&'static str, String)> = vec![
        ("addi_chain", "li a0, 5\naddi a0, a0, 7\naddi a1, a0, -20\naddi a2, a1, 2047\necall".into()),
        ("lui_auipc", "lui t0, 0xfffff\nauipc t1, 0x10\nlui t2, 1\naddi t2, t2, -1\necall".into()),
        ("add_sub_overflow", "li t0, 0x7fffffff\nli t1, 1\nadd t2, t0, t1\nsub t3, t1, t0\nsub t4, zero, t1\necall".into()),
        ("logic", "li t0, 0xf0f0f0f0\nli t1, 0x0ff00ff0\nand a0, t0, t1\nor a1, t0, t1\nxor a2, t0, t1\nxori a3, t0, -1\nandi a4, t0, 0x7f\nori a5, t1, -2048\necall".into()),
        ("shifts_reg", "li t0, 0x80000001\nli t1, 33\nsll a0, t0, t1\nsrl a1, t0, t1\nsra a2, t0, t1\nli t1, 31\nsra a3, t0, t1\nsrl a4, t0, t1\necall".into()),
        ("shifts_imm", "li t0, -12345\nslli a0, t0, 3\nsrli a1, t0, 3\nsrai a2, t0, 3\nslli a3, t0, 31\nsrai a4, t0, 0\necall".into()),
        ("compare", "li t0, -1\nli t1, 1\nslt a0, t0, t1\nsltu a1, t0, t1\nslti a2, t0, 0\nsltiu a3, t1, -1\nsltiu a4, zero, 1\necall".into()),
        ("x0_writes", "li t0, 99\nadd zero, t0, t0\naddi zero, zero, 5\nlui zero, 0x12345\nmv a0, zero\necall".into()),
        ("loop_sum", "li t0, 0\nli t1, 100\nli a0, 0\nloop:\naddi t0, t0, 1\nadd a0, a0, t0\nbne t0, t1, loop\necall".into()),
        ("branches_signed", "li t0, -5\nli t1, 3\nli a0, 0\nblt t0, t1, l1\naddi a0, a0, 1\nl1: bge t0, t1, l2\naddi a0, a0, 2\nl2: bltu t0, t1, l3\naddi a0, a0, 4\nl3: bgeu t0, t1, l4\naddi a0, a0, 8\nl4: beq t0, t0, l5\naddi a0, a0, 16\nl5: ecall".into()),
        ("fib", "li a0, 0\nli a1, 1\nli t0, 20\nfib:\nadd t1, a0, a1\nmv a0, a1\nmv a1, t1\naddi t0, t0, -1\nbnez t0, fib\necall".into()),
        ("store_load_word", "la s0, buf\nli t0, 0xdeadbeef\nsw t0, 0(s0)\nlw a0, 0(s0)\nlh a1, 0(s0)\nlhu a2, 2(s0)\nlb a3, 3(s0)\nlbu a4, 1(s0)\necall\n.align 4\nbuf: .space 16".into()),
        ("store_bytes", "la s0, buf\nli t0, 0x81\nsb t0, 0(s0)\nsb t0, 1(s0)\nli t0, 0x7f02\nsh t0, 2(s0)\nlw a0, 0(s0)\nlb a1, 0(s0)\nlh a2, 2(s0)\necall\n.align 4\nbuf: .space 8".into()),
        ("negative_offsets", "la s0, buf_end\nli t0, 1234\nsw t0, -4(s0)\nlw a0, -4(s0)\naddi s1, s0, -8\nsw a0, 0(s1)\nlw a1, 4(s1)\necall\n.align 4\nbuf: .space 8\nbuf_end: .word 0".into()),
        ("call_return", "li sp, 0x2000\nli a0, 6\ncall square\naddi a1, a0, 1\necall\nsquare:\nmv t0, a0\nli t1, 0\nli a0, 0\nsq: beqz t0, sq_done\nadd a0, a0, t1\naddi t0, t0, -1\nj sq\nsq_done: ret".into()),
        ("nested_calls", "li sp, 0x3000\nli a0, 3\ncall f\necall\nf:\naddi sp, sp, -4\nsw ra, 0(sp)\naddi a0, a0, 10\ncall g\nlw ra, 0(sp)\naddi sp, sp, 4\nret\ng:\nslli a0, a0, 1\nret".into()),
        ("jalr_table", "la t0, target\njalr ra, 0(t0)\naddi a1, a1, 100\necall\ntarget:\nli a0, 42\njalr zero, 0(ra)".into()),
        ("jalr_lsb_cleared", "la t0, target\naddi t0, t0, 1\njalr ra, t0, 0\necall\ntarget:\nli a0, 7\nret".into()),
        ("memcpy", "la s0, src\nla s1, dst\nli t2, 12\ncp: lbu t0, 0(s0)\nsb t0, 0(s1)\naddi s0, s0, 1\naddi s1, s1, 1\naddi t2, t2, -1\nbnez t2, cp\nla s1, dst\nlw a0, 0(s1)\nlw a1, 4(s1)\nlw a2, 8(s1)\necall\n.align 4\nsrc: .ascii \"hello, world\"\n.align 4\ndst: .space 12".into()),
        ("bubble_sort", "la s0, arr\nli s1, 6\nouter: li t0, 0\nli t3, 0\naddi t4, s1, -1\ninner: bge t0, t4, pass_done\nslli t5, t0, 2\nadd t5, t5, s0\nlw t1, 0(t5)\nlw t2, 4(t5)\nbge t2, t1, noswap\nsw t2, 0(t5)\nsw t1, 4(t5)\nli t3, 1\nnoswap: addi t0, t0, 1\nj inner\npass_done: bnez t3, outer\nlw a0, 0(s0)\nlw a1, 4(s0)\nlw a2, 8(s0)\nlw a3, 12(s0)\nlw a4, 16(s0)\nlw a5, 20(s0)\necall\n.align 4\narr: .word 5, -3, 99, 0, 7, -100".into()),
        ("gcd", "li a0, 1071\nli a1, 462\ngcd: beqz a1, done\nmv t0, a1\nmv t1, a0\nrem: bltu t1, t0, rem_done\nsub t1, t1, t0\nj rem\nrem_done: mv a0, a0\nmv a0, a1\nmv a1, t1\nj gcd\ndone: ecall".into()),
        ("popcount", "li t0, 0xb6db6db7\nli a0, 0\npc: beqz t0, pc_done\nandi t1, t0, 1\nadd a0, a0, t1\nsrli t0, t0, 1\nj pc\npc_done: ecall".into()),
        ("all_regs", {
            let mut s = String::new();
            for r in 1..32 {
                s.push_str(&format!("li x{r}, {}\n", r * -77 + 3));
            }
            for r in 2..32 {
                s.push_str(&format!("add x{r}, x{r}, x{}\n", r - 1));
            }
            s.push_str("ecall\n");
            s
        }),
        ("exit_code", "li a0, 3\naddi a0, a0, 4\necall".into()),
    ];
    v.sort_by_key(|(n, _)| *n);
    v
}
