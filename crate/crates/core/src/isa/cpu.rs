//! The interpreter core: register file, single-step execution and bounded runs.

use std::collections::BTreeSet;

use super::bus::{Bus, BusResponse, BusTransaction, FaultKind};
use super::decode::{decode, AluOp, BranchOp, Instruction, LoadOp, StoreOp};

/// ABI return register (`a0`).
pub const REG_A0: usize = 10;
/// Return address (`ra`).
pub const REG_RA: usize = 1;
/// Stack pointer (`sp`).
pub const REG_SP: usize = 2;

pub const DEFAULT_MAX_INSTRUCTIONS: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpuStatus {
    Running,
    Exited(u8),
    Faulted(FaultKind),
    BreakpointHit(u32),
    /// A probe read found no input left under the end-run policy.
    InputExhausted,
}

/// Receives the address of every basic-block entry the core executes.
pub trait BlockSink {
    fn block(&mut self, addr: u32);
}

impl BlockSink for () {
    #[inline]
    fn block(&mut self, _addr: u32) {}
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CpuState {
    regs: [u32; 32],
    pub pc: u32,
    pub instr_count: u64,
    pub status: CpuStatus,
}

impl CpuState {
    pub fn new(pc: u32) -> Self {
        CpuState { regs: [0; 32], pc, instr_count: 0, status: CpuStatus::Running }
    }

    #[inline]
    pub fn reg(&self, r: usize) -> u32 {
        self.regs[r]
    }

    /// Writes to x0 are dropped.
    #[inline]
    pub fn set_reg(&mut self, r: usize, v: u32) {
        if r != 0 {
            self.regs[r] = v;
        }
    }

    pub fn regs(&self) -> &[u32; 32] {
        &self.regs
    }

    /// Executes exactly one instruction. Faults are recorded in `status`.
    pub fn step<B: Bus, S: BlockSink>(&mut self, bus: &mut B, sink: &mut S) {
        debug_assert_eq!(self.status, CpuStatus::Running);
        self.instr_count += 1;
        let pc = self.pc;
        if pc & 3 != 0 {
            self.status = CpuStatus::Faulted(FaultKind::MisalignedAccess);
            return;
        }
        let word = match bus.fetch(pc) {
            Ok(w) => w,
            Err(f) => {
                self.status = CpuStatus::Faulted(f);
                return;
            }
        };
        let mut next = pc.wrapping_add(4);
        let mut taken = false;
        match decode(word) {
            Instruction::Lui { rd, imm } => self.set_reg(rd as usize, imm as u32),
            Instruction::Auipc { rd, imm } => self.set_reg(rd as usize, pc.wrapping_add(imm as u32)),
            Instruction::Jal { rd, imm } => {
                let target = pc.wrapping_add(imm as u32);
                // a faulting jump must not write its link register
                if target & 3 != 0 {
                    self.status = CpuStatus::Faulted(FaultKind::MisalignedAccess);
                    return;
                }
                self.set_reg(rd as usize, next);
                next = target;
                taken = true;
            }
            Instruction::Jalr { rd, rs1, imm } => {
                let target = self.regs[rs1 as usize].wrapping_add(imm as u32) & !1;
                if target & 3 != 0 {
                    self.status = CpuStatus::Faulted(FaultKind::MisalignedAccess);
                    return;
                }
                self.set_reg(rd as usize, next);
                next = target;
                taken = true;
            }
            Instruction::Branch { op, rs1, rs2, imm } => {
                let a = self.regs[rs1 as usize];
                let b = self.regs[rs2 as usize];
                let cond = match op {
                    BranchOp::Beq => a == b,
                    BranchOp::Bne => a != b,
                    BranchOp::Blt => (a as i32) < (b as i32),
                    BranchOp::Bge => (a as i32) >= (b as i32),
                    BranchOp::Bltu => a < b,
                    BranchOp::Bgeu => a >= b,
                };
                if cond {
                    next = pc.wrapping_add(imm as u32);
                    taken = true;
                }
            }
            Instruction::Load { op, rd, rs1, imm } => {
                let addr = self.regs[rs1 as usize].wrapping_add(imm as u32);
                let size = match op {
                    LoadOp::Lb | LoadOp::Lbu => 1,
                    LoadOp::Lh | LoadOp::Lhu => 2,
                    LoadOp::Lw => 4,
                };
                let Some(raw) = self.access(bus, BusTransaction::read(addr, size, pc)) else { return };
                let v = match op {
                    LoadOp::Lb => raw as u8 as i8 as i32 as u32,
                    LoadOp::Lh => raw as u16 as i16 as i32 as u32,
                    LoadOp::Lw | LoadOp::Lbu | LoadOp::Lhu => raw,
                };
                self.set_reg(rd as usize, v);
            }
            Instruction::Store { op, rs1, rs2, imm } => {
                let addr = self.regs[rs1 as usize].wrapping_add(imm as u32);
                let size = match op {
                    StoreOp::Sb => 1,
                    StoreOp::Sh => 2,
                    StoreOp::Sw => 4,
                };
                let txn = BusTransaction::write(addr, size, self.regs[rs2 as usize], pc);
                if self.access(bus, txn).is_none() {
                    return;
                }
            }
            Instruction::OpImm { op, rd, rs1, imm } => {
                let v = alu(op, self.regs[rs1 as usize], imm as u32);
                self.set_reg(rd as usize, v);
            }
            Instruction::Op { op, rd, rs1, rs2 } => {
                let v = alu(op, self.regs[rs1 as usize], self.regs[rs2 as usize]);
                self.set_reg(rd as usize, v);
            }
            Instruction::Ecall => {
                self.status = CpuStatus::Exited(self.regs[REG_A0] as u8);
                return;
            }
            Instruction::Ebreak => {
                self.status = CpuStatus::BreakpointHit(pc);
                return;
            }
            Instruction::Illegal(_) => {
                self.status = CpuStatus::Faulted(FaultKind::IllegalInstruction);
                return;
            }
        }
        if taken {
            if next & 3 != 0 {
                self.status = CpuStatus::Faulted(FaultKind::MisalignedAccess);
                return;
            }
            sink.block(next);
        }
        self.pc = next;
    }

    /// Issues one data access. Returns `None` (with `status` updated) when
    /// the access did not complete.
    fn access<B: Bus>(&mut self, bus: &mut B, txn: Option<BusTransaction>) -> Option<u32> {
        let Some(txn) = txn else {
            self.status = CpuStatus::Faulted(FaultKind::BusError);
            return None;
        };
        if txn.addr % txn.size as u32 != 0 {
            self.status = CpuStatus::Faulted(FaultKind::MisalignedAccess);
            return None;
        }
        match bus.transact(&txn) {
            BusResponse::Ok(v) => Some(v),
            BusResponse::Fault(f) => {
                self.status = CpuStatus::Faulted(f);
                None
            }
            BusResponse::InputExhausted => {
                self.status = CpuStatus::InputExhausted;
                None
            }
        }
    }

    /// Steps until the core leaves `Running`, a breakpoint address is about
    /// to execute, or `limits.max_instructions` have been executed by this call.
    pub fn run_until<B: Bus, S: BlockSink>(&mut self, bus: &mut B, sink: &mut S, limits: &RunLimits) -> RunOutcome {
        let start = self.instr_count;
        let check_bps = !limits.breakpoints.is_empty();
        while self.status == CpuStatus::Running {
            if check_bps && limits.breakpoints.contains(&self.pc) {
                self.status = CpuStatus::BreakpointHit(self.pc);
                break;
            }
            if self.instr_count - start >= limits.max_instructions {
                return RunOutcome { stop: StopReason::Timeout, instructions: self.instr_count - start };
            }
            self.step(bus, sink);
        }
        let stop = match self.status {
            CpuStatus::Exited(code) => StopReason::Exited(code),
            CpuStatus::Faulted(k) => StopReason::Faulted(k),
            CpuStatus::BreakpointHit(a) => StopReason::Breakpoint(a),
            CpuStatus::InputExhausted => StopReason::InputExhausted,
            CpuStatus::Running => unreachable!(),
        };
        RunOutcome { stop, instructions: self.instr_count - start }
    }
}

#[inline]
fn alu(op: AluOp, a: u32, b: u32) -> u32 {
    match op {
        AluOp::Add => a.wrapping_add(b),
        AluOp::Sub => a.wrapping_sub(b),
        AluOp::Sll => a << (b & 31),
        AluOp::Slt => ((a as i32) < (b as i32)) as u32,
        AluOp::Sltu => (a < b) as u32,
        AluOp::Xor => a ^ b,
        AluOp::Srl => a >> (b & 31),
        AluOp::Sra => ((a as i32) >> (b & 31)) as u32,
        AluOp::Or => a | b,
        AluOp::And => a & b,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLimits {
    pub max_instructions: u64,
    pub breakpoints: BTreeSet<u32>,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits { max_instructions: DEFAULT_MAX_INSTRUCTIONS, breakpoints: BTreeSet::new() }
    }
}

impl RunLimits {
    pub fn with_max(max_instructions: u64) -> Self {
        RunLimits { max_instructions, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Exited(u8),
    Faulted(FaultKind),
    Breakpoint(u32),
    Timeout,
    InputExhausted,
}

/// How a bounded run ended and how many instructions it executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    pub stop: StopReason,
    pub instructions: u64,
}
