//! RV32I subset decoder and a text disassembler.

use std::fmt;

/// Register index, 0..=31.
pub type Reg = u8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchOp {
    Beq,
    Bne,
    Blt,
    Bge,
    Bltu,
    Bgeu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LoadOp {
    Lb,
    Lh,
    Lw,
    Lbu,
    Lhu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StoreOp {
    Sb,
    Sh,
    Sw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Sll,
    Slt,
    Sltu,
    Xor,
    Srl,
    Sra,
    Or,
    And,
}

/// A decoded instruction. Immediates are already sign-extended and, for
/// U-type instructions, shifted into place.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Instruction {
    Lui { rd: Reg, imm: i32 },
    Auipc { rd: Reg, imm: i32 },
    Jal { rd: Reg, imm: i32 },
    Jalr { rd: Reg, rs1: Reg, imm: i32 },
    Branch { op: BranchOp, rs1: Reg, rs2: Reg, imm: i32 },
    Load { op: LoadOp, rd: Reg, rs1: Reg, imm: i32 },
    Store { op: StoreOp, rs1: Reg, rs2: Reg, imm: i32 },
    OpImm { op: AluOp, rd: Reg, rs1: Reg, imm: i32 },
    Op { op: AluOp, rd: Reg, rs1: Reg, rs2: Reg },
    Ecall,
    Ebreak,
    /// Anything outside the supported subset. Carries the raw word.
    Illegal(u32),
}

impl Instruction {
    pub const NOP: Instruction = Instruction::OpImm { op: AluOp::Add, rd: 0, rs1: 0, imm: 0 };
}

#[inline]
fn rd(w: u32) -> Reg {
    ((w >> 7) & 0x1f) as Reg
}

#[inline]
fn rs1(w: u32) -> Reg {
    ((w >> 15) & 0x1f) as Reg
}

#[inline]
fn rs2(w: u32) -> Reg {
    ((w >> 20) & 0x1f) as Reg
}

#[inline]
fn funct3(w: u32) -> u32 {
    (w >> 12) & 0x7
}

#[inline]
fn funct7(w: u32) -> u32 {
    w >> 25
}

#[inline]
fn imm_i(w: u32) -> i32 {
    (w as i32) >> 20
}

#[inline]
fn imm_s(w: u32) -> i32 {
    (((w as i32) >> 25) << 5) | ((w >> 7) & 0x1f) as i32
}

#[inline]
fn imm_b(w: u32) -> i32 {
    let sign = ((w as i32) >> 31) << 12;
    let b11 = ((w >> 7) & 1) << 11;
    let b10_5 = ((w >> 25) & 0x3f) << 5;
    let b4_1 = ((w >> 8) & 0xf) << 1;
    sign | (b11 | b10_5 | b4_1) as i32
}

#[inline]
fn imm_j(w: u32) -> i32 {
    let sign = ((w as i32) >> 31) << 20;
    let b19_12 = w & 0x000f_f000;
    let b11 = ((w >> 20) & 1) << 11;
    let b10_1 = ((w >> 21) & 0x3ff) << 1;
    sign | (b19_12 | b11 | b10_1) as i32
}

/// Decodes one 32-bit instruction word. Unsupported encodings decode to
/// [`Instruction::Illegal`].
pub fn decode(w: u32) -> Instruction {
    use Instruction::*;
    let illegal = Illegal(w);
    match w & 0x7f {
        0x37 => Lui { rd: rd(w), imm: (w & 0xffff_f000) as i32 },
        0x17 => Auipc { rd: rd(w), imm: (w & 0xffff_f000) as i32 },
        0x6f => Jal { rd: rd(w), imm: imm_j(w) },
        0x67 if funct3(w) == 0 => Jalr { rd: rd(w), rs1: rs1(w), imm: imm_i(w) },
        0x63 => {
            let op = match funct3(w) {
                0 => BranchOp::Beq,
                1 => BranchOp::Bne,
                4 => BranchOp::Blt,
                5 => BranchOp::Bge,
                6 => BranchOp::Bltu,
                7 => BranchOp::Bgeu,
                _ => return illegal,
            };
            Branch { op, rs1: rs1(w), rs2: rs2(w), imm: imm_b(w) }
        }
        0x03 => {
            let op = match funct3(w) {
                0 => LoadOp::Lb,
                1 => LoadOp::Lh,
                2 => LoadOp::Lw,
                4 => LoadOp::Lbu,
                5 => LoadOp::Lhu,
                _ => return illegal,
            };
            Load { op, rd: rd(w), rs1: rs1(w), imm: imm_i(w) }
        }
        0x23 => {
            let op = match funct3(w) {
                0 => StoreOp::Sb,
                1 => StoreOp::Sh,
                2 => StoreOp::Sw,
                _ => return illegal,
            };
            Store { op, rs1: rs1(w), rs2: rs2(w), imm: imm_s(w) }
        }
        0x13 => {
            let (op, imm) = match (funct3(w), funct7(w)) {
                (0, _) => (AluOp::Add, imm_i(w)),
                (2, _) => (AluOp::Slt, imm_i(w)),
                (3, _) => (AluOp::Sltu, imm_i(w)),
                (4, _) => (AluOp::Xor, imm_i(w)),
                (6, _) => (AluOp::Or, imm_i(w)),
                (7, _) => (AluOp::And, imm_i(w)),
                (1, 0x00) => (AluOp::Sll, rs2(w) as i32),
                (5, 0x00) => (AluOp::Srl, rs2(w) as i32),
                (5, 0x20) => (AluOp::Sra, rs2(w) as i32),
                _ => return illegal,
            };
            OpImm { op, rd: rd(w), rs1: rs1(w), imm }
        }
        0x33 => {
            let op = match (funct3(w), funct7(w)) {
                (0, 0x00) => AluOp::Add,
                (0, 0x20) => AluOp::Sub,
                (1, 0x00) => AluOp::Sll,
                (2, 0x00) => AluOp::Slt,
                (3, 0x00) => AluOp::Sltu,
                (4, 0x00) => AluOp::Xor,
                (5, 0x00) => AluOp::Srl,
                (5, 0x20) => AluOp::Sra,
                (6, 0x00) => AluOp::Or,
                (7, 0x00) => AluOp::And,
                _ => return illegal,
            };
            Op { op, rd: rd(w), rs1: rs1(w), rs2: rs2(w) }
        }
        0x73 => match w {
            0x0000_0073 => Ecall,
            0x0010_0073 => Ebreak,
            _ => illegal,
        },
        _ => illegal,
    }
}

impl BranchOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BranchOp::Beq => "beq",
            BranchOp::Bne => "bne",
            BranchOp::Blt => "blt",
            BranchOp::Bge => "bge",
            BranchOp::Bltu => "bltu",
            BranchOp::Bgeu => "bgeu",
        }
    }
}

impl LoadOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            LoadOp::Lb => "lb",
            LoadOp::Lh => "lh",
            LoadOp::Lw => "lw",
            LoadOp::Lbu => "lbu",
            LoadOp::Lhu => "lhu",
        }
    }
}

impl StoreOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            StoreOp::Sb => "sb",
            StoreOp::Sh => "sh",
            StoreOp::Sw => "sw",
        }
    }
}

impl AluOp {
    fn reg_mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Sll => "sll",
            AluOp::Slt => "slt",
            AluOp::Sltu => "sltu",
            AluOp::Xor => "xor",
            AluOp::Srl => "srl",
            AluOp::Sra => "sra",
            AluOp::Or => "or",
            AluOp::And => "and",
        }
    }

    fn imm_mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "addi",
            AluOp::Sub => "subi?",
            AluOp::Sll => "slli",
            AluOp::Slt => "slti",
            AluOp::Sltu => "sltiu",
            AluOp::Xor => "xori",
            AluOp::Srl => "srli",
            AluOp::Sra => "srai",
            AluOp::Or => "ori",
            AluOp::And => "andi",
        }
    }
}

/// Canonical disassembly: numeric register names (`x5`), decimal
/// immediates, PC-relative offsets rather than resolved targets, and the
/// upper immediate of LUI/AUIPC shown as its 20-bit field in hex.
impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Instruction::*;
        match *self {
            Lui { rd, imm } => write!(f, "lui x{rd}, 0x{:x}", (imm as u32) >> 12),
            Auipc { rd, imm } => write!(f, "auipc x{rd}, 0x{:x}", (imm as u32) >> 12),
            Jal { rd, imm } => write!(f, "jal x{rd}, {imm}"),
            Jalr { rd, rs1, imm } => write!(f, "jalr x{rd}, {imm}(x{rs1})"),
            Branch { op, rs1, rs2, imm } => write!(f, "{} x{rs1}, x{rs2}, {imm}", op.mnemonic()),
            Load { op, rd, rs1, imm } => write!(f, "{} x{rd}, {imm}(x{rs1})", op.mnemonic()),
            Store { op, rs1, rs2, imm } => write!(f, "{} x{rs2}, {imm}(x{rs1})", op.mnemonic()),
            OpImm { op, rd, rs1, imm } => write!(f, "{} x{rd}, x{rs1}, {imm}", op.imm_mnemonic()),
            Op { op, rd, rs1, rs2 } => write!(f, "{} x{rd}, x{rs1}, x{rs2}", op.reg_mnemonic()),
            Ecall => f.write_str("ecall"),
            Ebreak => f.write_str("ebreak"),
            Illegal(w) => write!(f, ".word 0x{w:08x}"),
        }
    }
}

/// Disassembles a little-endian byte image into one line per word.
pub fn disassemble(bytes: &[u8]) -> Vec<String> {
    bytes
        .chunks(4)
        .map(|c| {
            let mut w = [0u8; 4];
            w[..c.len()].copy_from_slice(c);
            decode(u32::from_le_bytes(w)).to_string()
        })
        .collect()
}
