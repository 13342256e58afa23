//! Two-pass assembler for the supported RV32I subset.
//!
//! Pass one parses every line, assigns addresses and collects labels and
//! `.equ` constants; pass two encodes. Besides the base instructions it
//! understands the pseudo-instructions `nop`, `li`, `la`, `mv`, `j`, `jr`,
//! `ret`, `call`, `beqz`, `bnez`, `bgt`, `ble`, `bgtu`, `bleu`, and the
//! directives `.org`, `.align`, `.space`, `.equ`, `.byte`, `.half`,
//! `.word`, `.ascii`, `.asciz`.
//!
//! A label operand of a branch or jump is resolved PC-relative; a numeric
//! operand is taken as the raw offset, which is what the disassembler
//! prints.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct AsmError {
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, AsmError> {
    Err(AsmError { line, msg: msg.into() })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assembled {
    pub base: u32,
    pub bytes: Vec<u8>,
    /// Labels and `.equ` constants.
    pub symbols: BTreeMap<String, u32>,
}

impl Assembled {
    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }
}

#[derive(Clone, Debug)]
enum Expr {
    Num(i64),
    Sym(String),
}

#[derive(Clone, Debug)]
enum Stmt {
    Org(u32),
    Align(u32),
    Space(u32),
    Data { width: u8, items: Vec<Expr> },
    Ascii(Vec<u8>),
    Instr { mnemonic: String, ops: Vec<String> },
}

struct Line {
    no: usize,
    addr: u32,
    stmt: Stmt,
}

pub fn reg_number(name: &str) -> Option<u8> {
    const ABI: [&str; 32] = [
        "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7",
        "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6",
    ];
    if let Some(n) = name.strip_prefix('x') {
        if let Ok(v) = n.parse::<u8>() {
            return (v < 32 && (n == "0" || !n.starts_with('0'))).then_some(v);
        }
    }
    if name == "fp" {
        return Some(8);
    }
    ABI.iter().position(|&r| r == name).map(|i| i as u8)
}

fn parse_char(s: &str) -> Option<i64> {
    let inner = s.strip_prefix('\'')?.strip_suffix('\'')?;
    let b = match inner {
        "\\n" => b'\n',
        "\\0" => 0,
        "\\t" => b'\t',
        "\\r" => b'\r',
        "\\\\" => b'\\',
        "\\'" => b'\'',
        _ if inner.len() == 1 => inner.as_bytes()[0],
        _ => return None,
    };
    Some(b as i64)
}

fn parse_number(s: &str) -> Option<i64> {
    if let Some(c) = parse_char(s) {
        return Some(c);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(&h.replace('_', ""), 16).ok()?
    } else if body.chars().next()?.is_ascii_digit() {
        body.replace('_', "").parse::<i64>().ok()?
    } else {
        return None;
    };
    Some(if neg { -v } else { v })
}

fn is_ident(s: &str) -> bool {
    let mut c = s.chars();
    matches!(c.next(), Some(ch) if ch.is_ascii_alphabetic() || ch == '_' || ch == '.')
        && c.all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '.')
}

fn parse_expr(s: &str, line: usize) -> Result<Expr, AsmError> {
    if let Some(v) = parse_number(s) {
        Ok(Expr::Num(v))
    } else if is_ident(s) {
        Ok(Expr::Sym(s.to_owned()))
    } else {
        err(line, format!("bad operand `{s}`"))
    }
}

fn strip_comment(l: &str) -> &str {
    // '#' or ';' outside of quotes
    let mut in_str = false;
    let mut in_chr = false;
    let bytes = l.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'"' if !in_chr && (i == 0 || bytes[i - 1] != b'\\') => in_str = !in_str,
            b'\'' if !in_str && (i == 0 || bytes[i - 1] != b'\\') => in_chr = !in_chr,
            b'#' | b';' if !in_str && !in_chr => return &l[..i],
            _ => {}
        }
    }
    l
}

fn split_operands(s: &str) -> Vec<String> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_chr = false;
    for ch in s.chars() {
        match ch {
            '\'' => {
                in_chr = !in_chr;
                cur.push(ch);
            }
            ',' if !in_chr => out.push(std::mem::take(&mut cur).trim().to_owned()),
            _ => cur.push(ch),
        }
    }
    out.push(cur.trim().to_owned());
    out
}

fn parse_string(s: &str, line: usize) -> Result<Vec<u8>, AsmError> {
    let Some(inner) = s.strip_prefix('"').and_then(|r| r.strip_suffix('"')) else {
        return err(line, "expected a quoted string");
    };
    let mut out = Vec::new();
    let mut it = inner.bytes();
    while let Some(b) = it.next() {
        if b == b'\\' {
            out.push(match it.next() {
                Some(b'n') => b'\n',
                Some(b't') => b'\t',
                Some(b'r') => b'\r',
                Some(b'0') => 0,
                Some(b'\\') => b'\\',
                Some(b'"') => b'"',
                other => return err(line, format!("bad escape {:?}", other.map(|c| c as char))),
            });
        } else {
            out.push(b);
        }
    }
    Ok(out)
}

/// Words emitted by an instruction. Needs only what pass one knows.
fn instr_words(mnemonic: &str, ops: &[String], consts: &BTreeMap<String, u32>, line: usize) -> Result<u32, AsmError> {
    Ok(match mnemonic {
        "la" | "call" => match mnemonic {
            "la" => 2,
            _ => 1,
        },
        "li" => {
            let Some(v) = ops.get(1) else { return err(line, "li needs 2 operands") };
            let v = match parse_expr(v, line)? {
                Expr::Num(n) => n,
                Expr::Sym(s) => match consts.get(&s) {
                    Some(&c) => c as i64,
                    None => return err(line, format!("li needs a constant; `{s}` is not a prior .equ (use la for labels)")),
                },
            };
            if (-2048..2048).contains(&v) {
                1
            } else {
                2
            }
        }
        _ => 1,
    })
}

fn parse_lines(source: &str, base: u32) -> Result<(Vec<Line>, BTreeMap<String, u32>), AsmError> {
    let mut lines = Vec::new();
    let mut symbols: BTreeMap<String, u32> = BTreeMap::new();
    let mut pc = base as u64;
    for (i, raw) in source.lines().enumerate() {
        let no = i + 1;
        let mut l = strip_comment(raw).trim();
        // labels
        while let Some(colon) = l.find(':') {
            let name = l[..colon].trim();
            if !is_ident(name) || name.contains(char::is_whitespace) {
                break;
            }
            if symbols.insert(name.to_owned(), pc as u32).is_some() {
                return err(no, format!("label `{name}` defined twice"));
            }
            l = l[colon + 1..].trim();
        }
        if l.is_empty() {
            continue;
        }
        let (head, rest) = match l.find(char::is_whitespace) {
            Some(p) => (&l[..p], l[p..].trim()),
            None => (l, ""),
        };
        let head = head.to_ascii_lowercase();
        let stmt = match head.as_str() {
            ".org" => {
                let Expr::Num(v) = parse_expr(rest, no)? else { return err(no, ".org needs a number") };
                if (v as u64) < pc || v < 0 || v > u32::MAX as i64 {
                    return err(no, format!(".org 0x{v:x} moves backwards"));
                }
                Stmt::Org(v as u32)
            }
            ".align" => {
                let Expr::Num(v) = parse_expr(rest, no)? else { return err(no, ".align needs a number") };
                if v <= 0 || !(v as u64).is_power_of_two() {
                    return err(no, ".align takes a power-of-two byte count");
                }
                Stmt::Align(v as u32)
            }
            ".space" => {
                let Expr::Num(v) = parse_expr(rest, no)? else { return err(no, ".space needs a number") };
                if v < 0 {
                    return err(no, ".space needs a non-negative size");
                }
                Stmt::Space(v as u32)
            }
            ".equ" | ".set" => {
                let ops = split_operands(rest);
                if ops.len() != 2 || !is_ident(&ops[0]) {
                    return err(no, ".equ NAME, VALUE");
                }
                let v = match parse_expr(&ops[1], no)? {
                    Expr::Num(n) => n as u32,
                    Expr::Sym(s) => match symbols.get(&s) {
                        Some(&v) => v,
                        None => return err(no, format!("undefined symbol `{s}`")),
                    },
                };
                if symbols.insert(ops[0].clone(), v).is_some() {
                    return err(no, format!("symbol `{}` defined twice", ops[0]));
                }
                continue;
            }
            ".byte" | ".half" | ".word" => {
                let width = match head.as_str() {
                    ".byte" => 1,
                    ".half" => 2,
                    _ => 4,
                };
                let items = split_operands(rest).iter().map(|o| parse_expr(o, no)).collect::<Result<Vec<_>, _>>()?;
                if items.is_empty() {
                    return err(no, format!("{head} needs at least one value"));
                }
                Stmt::Data { width, items }
            }
            ".ascii" => Stmt::Ascii(parse_string(rest, no)?),
            ".asciz" | ".string" => {
                let mut s = parse_string(rest, no)?;
                s.push(0);
                Stmt::Ascii(s)
            }
            d if d.starts_with('.') => return err(no, format!("unknown directive `{d}`")),
            m => Stmt::Instr { mnemonic: m.to_owned(), ops: split_operands(rest) },
        };
        let size: u64 = match &stmt {
            Stmt::Org(a) => *a as u64 - pc,
            Stmt::Align(a) => (*a as u64 - pc % *a as u64) % *a as u64,
            Stmt::Space(n) => *n as u64,
            Stmt::Data { width, items } => *width as u64 * items.len() as u64,
            Stmt::Ascii(b) => b.len() as u64,
            Stmt::Instr { mnemonic, ops } => {
                if !pc.is_multiple_of(4) {
                    return err(no, "instruction is not 4-byte aligned");
                }
                4 * instr_words(mnemonic, ops, &symbols, no)? as u64
            }
        };
        lines.push(Line { no, addr: pc as u32, stmt });
        pc += size;
        if pc > u32::MAX as u64 + 1 {
            return err(no, "program runs past the end of the address space");
        }
    }
    Ok((lines, symbols))
}

struct Encoder<'a> {
    symbols: &'a BTreeMap<String, u32>,
    line: usize,
    pc: u32,
}

fn enc_r(f7: u32, rs2: u8, rs1: u8, f3: u32, rd: u8, op: u32) -> u32 {
    (f7 << 25) | ((rs2 as u32) << 20) | ((rs1 as u32) << 15) | (f3 << 12) | ((rd as u32) << 7) | op
}

fn enc_i(imm: i32, rs1: u8, f3: u32, rd: u8, op: u32) -> u32 {
    (((imm as u32) & 0xfff) << 20) | ((rs1 as u32) << 15) | (f3 << 12) | ((rd as u32) << 7) | op
}

fn enc_s(imm: i32, rs2: u8, rs1: u8, f3: u32, op: u32) -> u32 {
    let i = imm as u32;
    (((i >> 5) & 0x7f) << 25) | ((rs2 as u32) << 20) | ((rs1 as u32) << 15) | (f3 << 12) | ((i & 0x1f) << 7) | op
}

fn enc_b(imm: i32, rs2: u8, rs1: u8, f3: u32) -> u32 {
    let i = imm as u32;
    (((i >> 12) & 1) << 31)
        | (((i >> 5) & 0x3f) << 25)
        | ((rs2 as u32) << 20)
        | ((rs1 as u32) << 15)
        | (f3 << 12)
        | (((i >> 1) & 0xf) << 8)
        | (((i >> 11) & 1) << 7)
        | 0x63
}

fn enc_u(imm20: u32, rd: u8, op: u32) -> u32 {
    ((imm20 & 0xfffff) << 12) | ((rd as u32) << 7) | op
}

fn enc_j(imm: i32, rd: u8) -> u32 {
    let i = imm as u32;
    (((i >> 20) & 1) << 31) | (((i >> 1) & 0x3ff) << 21) | (((i >> 11) & 1) << 20) | (((i >> 12) & 0xff) << 12) | ((rd as u32) << 7) | 0x6f
}

/// Splits a 32-bit value into a LUI upper part and a sign-extended low 12 bits.
fn hi_lo(v: u32) -> (u32, i32) {
    let lo = ((v & 0xfff) as i32) << 20 >> 20;
    let hi = v.wrapping_sub(lo as u32) >> 12;
    (hi, lo)
}

impl Encoder<'_> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, AsmError> {
        err(self.line, msg)
    }

    fn reg(&self, s: &str) -> Result<u8, AsmError> {
        reg_number(s).map_or_else(|| self.fail(format!("unknown register `{s}`")), Ok)
    }

    fn value(&self, s: &str) -> Result<i64, AsmError> {
        match parse_expr(s, self.line)? {
            Expr::Num(v) => Ok(v),
            Expr::Sym(name) => match self.symbols.get(&name) {
                Some(&v) => Ok(v as i64),
                None => self.fail(format!("undefined label `{name}`")),
            },
        }
    }

    fn imm12(&self, s: &str) -> Result<i32, AsmError> {
        let v = self.value(s)?;
        if !(-2048..2048).contains(&v) {
            return self.fail(format!("immediate {v} out of 12-bit range"));
        }
        Ok(v as i32)
    }

    /// Branch/jump target: labels are PC-relative, numbers are raw offsets.
    fn offset(&self, s: &str, bits: u32) -> Result<i32, AsmError> {
        let off = match parse_expr(s, self.line)? {
            Expr::Num(v) => v,
            Expr::Sym(name) => match self.symbols.get(&name) {
                Some(&t) => t as i64 - self.pc as i64,
                None => return self.fail(format!("undefined label `{name}`")),
            },
        };
        let lim = 1i64 << (bits - 1);
        if off < -lim || off >= lim {
            return self.fail(format!("target offset {off} out of range"));
        }
        if off % 2 != 0 {
            return self.fail(format!("target offset {off} is odd"));
        }
        Ok(off as i32)
    }

    /// `imm(reg)` memory operand.
    fn mem(&self, s: &str) -> Result<(i32, u8), AsmError> {
        let Some(open) = s.find('(') else { return self.fail(format!("expected imm(reg), got `{s}`")) };
        let Some(inner) = s[open + 1..].strip_suffix(')') else { return self.fail(format!("expected imm(reg), got `{s}`")) };
        let imm_s = s[..open].trim();
        let imm = if imm_s.is_empty() { 0 } else { self.imm12(imm_s)? };
        Ok((imm, self.reg(inner.trim())?))
    }

    fn want(&self, ops: &[String], n: usize, m: &str) -> Result<(), AsmError> {
        if ops.len() != n {
            return self.fail(format!("`{m}` takes {n} operands, got {}", ops.len()));
        }
        Ok(())
    }

    fn encode(&self, m: &str, ops: &[String]) -> Result<Vec<u32>, AsmError> {
        let branch = |f3: u32, swap: bool| -> Result<Vec<u32>, AsmError> {
            self.want(ops, 3, m)?;
            let (a, b) = (self.reg(&ops[0])?, self.reg(&ops[1])?);
            let (rs1, rs2) = if swap { (b, a) } else { (a, b) };
            Ok(vec![enc_b(self.offset(&ops[2], 13)?, rs2, rs1, f3)])
        };
        let load = |f3: u32| -> Result<Vec<u32>, AsmError> {
            self.want(ops, 2, m)?;
            let (imm, rs1) = self.mem(&ops[1])?;
            Ok(vec![enc_i(imm, rs1, f3, self.reg(&ops[0])?, 0x03)])
        };
        let store = |f3: u32| -> Result<Vec<u32>, AsmError> {
            self.want(ops, 2, m)?;
            let (imm, rs1) = self.mem(&ops[1])?;
            Ok(vec![enc_s(imm, self.reg(&ops[0])?, rs1, f3, 0x23)])
        };
        let op_imm = |f3: u32| -> Result<Vec<u32>, AsmError> {
            self.want(ops, 3, m)?;
            Ok(vec![enc_i(self.imm12(&ops[2])?, self.reg(&ops[1])?, f3, self.reg(&ops[0])?, 0x13)])
        };
        let shift_imm = |f3: u32, f7: u32| -> Result<Vec<u32>, AsmError> {
            self.want(ops, 3, m)?;
            let sh = self.value(&ops[2])?;
            if !(0..32).contains(&sh) {
                return self.fail(format!("shift amount {sh} out of range"));
            }
            Ok(vec![enc_r(f7, sh as u8, self.reg(&ops[1])?, f3, self.reg(&ops[0])?, 0x13)])
        };
        let op = |f3: u32, f7: u32| -> Result<Vec<u32>, AsmError> {
            self.want(ops, 3, m)?;
            Ok(vec![enc_r(f7, self.reg(&ops[2])?, self.reg(&ops[1])?, f3, self.reg(&ops[0])?, 0x33)])
        };
        let upper = |opc: u32| -> Result<Vec<u32>, AsmError> {
            self.want(ops, 2, m)?;
            let v = self.value(&ops[1])?;
            if !(0..=0xfffff).contains(&v) {
                return self.fail(format!("upper immediate {v} out of 20-bit range"));
            }
            Ok(vec![enc_u(v as u32, self.reg(&ops[0])?, opc)])
        };
        match m {
            "lui" => upper(0x37),
            "auipc" => upper(0x17),
            "jal" => match ops.len() {
                1 => Ok(vec![enc_j(self.offset(&ops[0], 21)?, 1)]),
                _ => {
                    self.want(ops, 2, m)?;
                    Ok(vec![enc_j(self.offset(&ops[1], 21)?, self.reg(&ops[0])?)])
                }
            },
            "jalr" => match ops.len() {
                1 => Ok(vec![enc_i(0, self.reg(&ops[0])?, 0, 1, 0x67)]),
                2 => {
                    let (imm, rs1) = self.mem(&ops[1])?;
                    Ok(vec![enc_i(imm, rs1, 0, self.reg(&ops[0])?, 0x67)])
                }
                _ => {
                    self.want(ops, 3, m)?;
                    Ok(vec![enc_i(self.imm12(&ops[2])?, self.reg(&ops[1])?, 0, self.reg(&ops[0])?, 0x67)])
                }
            },
            "beq" => branch(0, false),
            "bne" => branch(1, false),
            "blt" => branch(4, false),
            "bge" => branch(5, false),
            "bltu" => branch(6, false),
            "bgeu" => branch(7, false),
            "bgt" => branch(4, true),
            "ble" => branch(5, true),
            "bgtu" => branch(6, true),
            "bleu" => branch(7, true),
            "beqz" | "bnez" => {
                self.want(ops, 2, m)?;
                let f3 = if m == "beqz" { 0 } else { 1 };
                Ok(vec![enc_b(self.offset(&ops[1], 13)?, 0, self.reg(&ops[0])?, f3)])
            }
            "lb" => load(0),
            "lh" => load(1),
            "lw" => load(2),
            "lbu" => load(4),
            "lhu" => load(5),
            "sb" => store(0),
            "sh" => store(1),
            "sw" => store(2),
            "addi" => op_imm(0),
            "slti" => op_imm(2),
            "sltiu" => op_imm(3),
            "xori" => op_imm(4),
            "ori" => op_imm(6),
            "andi" => op_imm(7),
            "slli" => shift_imm(1, 0x00),
            "srli" => shift_imm(5, 0x00),
            "srai" => shift_imm(5, 0x20),
            "add" => op(0, 0x00),
            "sub" => op(0, 0x20),
            "sll" => op(1, 0x00),
            "slt" => op(2, 0x00),
            "sltu" => op(3, 0x00),
            "xor" => op(4, 0x00),
            "srl" => op(5, 0x00),
            "sra" => op(5, 0x20),
            "or" => op(6, 0x00),
            "and" => op(7, 0x00),
            "ecall" => {
                self.want(ops, 0, m)?;
                Ok(vec![0x0000_0073])
            }
            "ebreak" => {
                self.want(ops, 0, m)?;
                Ok(vec![0x0010_0073])
            }
            "nop" => {
                self.want(ops, 0, m)?;
                Ok(vec![0x0000_0013])
            }
            "mv" => {
                self.want(ops, 2, m)?;
                Ok(vec![enc_i(0, self.reg(&ops[1])?, 0, self.reg(&ops[0])?, 0x13)])
            }
            "j" => {
                self.want(ops, 1, m)?;
                Ok(vec![enc_j(self.offset(&ops[0], 21)?, 0)])
            }
            "call" => {
                self.want(ops, 1, m)?;
                Ok(vec![enc_j(self.offset(&ops[0], 21)?, 1)])
            }
            "jr" => {
                self.want(ops, 1, m)?;
                Ok(vec![enc_i(0, self.reg(&ops[0])?, 0, 0, 0x67)])
            }
            "ret" => {
                self.want(ops, 0, m)?;
                Ok(vec![0x0000_8067])
            }
            "li" => {
                self.want(ops, 2, m)?;
                let rd = self.reg(&ops[0])?;
                let v = self.value(&ops[1])?;
                if !(i32::MIN as i64..=u32::MAX as i64).contains(&v) {
                    return self.fail(format!("li value {v} does not fit 32 bits"));
                }
                if (-2048..2048).contains(&v) {
                    Ok(vec![enc_i(v as i32, 0, 0, rd, 0x13)])
                } else {
                    let (hi, lo) = hi_lo(v as u32);
                    Ok(vec![enc_u(hi, rd, 0x37), enc_i(lo, rd, 0, rd, 0x13)])
                }
            }
            "la" => {
                self.want(ops, 2, m)?;
                let rd = self.reg(&ops[0])?;
                let (hi, lo) = hi_lo(self.value(&ops[1])? as u32);
                Ok(vec![enc_u(hi, rd, 0x37), enc_i(lo, rd, 0, rd, 0x13)])
            }
            _ => self.fail(format!("unknown mnemonic `{m}`")),
        }
    }
}

/// Assembles `source` for loading at `base`.
pub fn assemble(source: &str, base: u32) -> Result<Assembled, AsmError> {
    let (lines, symbols) = parse_lines(source, base)?;
    let mut bytes: Vec<u8> = Vec::new();
    for l in &lines {
        let off = (l.addr - base) as usize;
        debug_assert!(bytes.len() <= off);
        bytes.resize(off, 0);
        let enc = Encoder { symbols: &symbols, line: l.no, pc: l.addr };
        match &l.stmt {
            Stmt::Org(_) | Stmt::Align(_) => {}
            Stmt::Space(n) => bytes.resize(off + *n as usize, 0),
            Stmt::Ascii(s) => bytes.extend_from_slice(s),
            Stmt::Data { width, items } => {
                for it in items {
                    let v = match it {
                        Expr::Num(n) => *n,
                        Expr::Sym(s) => enc.value(s)?,
                    };
                    let bits = *width as u32 * 8;
                    if bits < 64 && (v >= 1i64 << bits || v < -(1i64 << (bits - 1))) {
                        return err(l.no, format!("value {v} does not fit in {width} byte(s)"));
                    }
                    bytes.extend_from_slice(&(v as u32).to_le_bytes()[..*width as usize]);
                }
            }
            Stmt::Instr { mnemonic, ops } => {
                for w in enc.encode(mnemonic, ops)? {
                    bytes.extend_from_slice(&w.to_le_bytes());
                }
            }
        }
    }
    Ok(Assembled { base, bytes, symbols })
}
