use std::collections::BTreeMap;

use super::instr::{Instruction, MemOperand, Reg, RegisterFile};
use super::program::{Program, TxRegion};
use crate::error::ExecError;
use crate::machine::{MachineState, Span};
use crate::vmem::{PhysAddr, VirtAddr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaultKind {
    /// Address not mapped in the current page table.
    PageFault,
    /// Mapped, but the current privilege may not access it.
    ProtectionFault,
    /// Explicit RAISE.
    Trap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fault {
    pub kind: FaultKind,
    /// Program index of the faulting instruction.
    pub index: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TxOutcome {
    #[default]
    None,
    Committed,
    Aborted(FaultKind),
}

/// Final value of every physical byte the program stored to.
pub type MemoryDelta = BTreeMap<PhysAddr, u8>;

/// Architecturally visible outcome of running a program.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchResult {
    pub regs: RegisterFile,
    pub mem_delta: MemoryDelta,
    pub fault: Option<Fault>,
    /// Outcome of the last transaction the program entered.
    pub tx: TxOutcome,
}

struct Interp<'a> {
    prog: &'a Program,
    m: &'a MachineState,
    cache: crate::cache::CacheState,
    regs: RegisterFile,
    delta: MemoryDelta,
    tx: Option<(TxRegion, RegisterFile, MemoryDelta)>,
    outcome: TxOutcome,
}

impl Interp<'_> {
    fn addr(&self, mem: &MemOperand) -> VirtAddr {
        let base = self.regs.get(mem.base);
        VirtAddr(mem.index.map_or(base, |i| base.wrapping_add(self.regs.get(i))))
    }

    fn read(&self, spans: &[Span]) -> u64 {
        let mut buf = [0u8; 8];
        let mut at = 0;
        for &(pa, n) in spans {
            for k in 0..n {
                let a = pa.offset(k as u64);
                buf[at] = match self.delta.get(&a) {
                    Some(b) => *b,
                    None => self.m.mem.read_byte(a).unwrap_or(0),
                };
                at += 1;
            }
        }
        u64::from_le_bytes(buf)
    }

    fn write(&mut self, spans: &[Span], value: u64) {
        let bytes = value.to_le_bytes();
        let mut at = 0;
        for &(pa, n) in spans {
            for k in 0..n {
                self.delta.insert(pa.offset(k as u64), bytes[at]);
                at += 1;
            }
        }
    }

    /// Executes a load. With `timer`, that register receives the access
    /// latency before the loaded value is written.
    fn load(&mut self, instr: &Instruction, timer: Option<Reg>) -> Result<(), FaultKind> {
        let (dst, mem, width) = match *instr {
            Instruction::LoadByte { dst, mem } => (dst, mem, 1),
            Instruction::LoadWord { dst, mem } => (dst, mem, 8),
            _ => unreachable!("not a load"),
        };
        let spans = self.m.resolve(self.addr(&mem), width, false).map_err(|f| f.kind)?;
        let value = self.read(&spans);
        let latency = spans.iter().map(|&(pa, _)| self.cache.access(pa)).max().unwrap_or(0);
        if let Some(t) = timer {
            self.regs.set(t, latency);
        }
        if width == 1 {
            self.regs.set_low_byte(dst, value as u8);
        } else {
            self.regs.set(dst, value);
        }
        Ok(())
    }

    /// Runs the instruction at `pc`; returns the next pc, `None` to stop.
    fn step(&mut self, pc: usize) -> Result<Option<usize>, (usize, FaultKind)> {
        let prog = self.prog;
        let instr = &prog.instructions()[pc];
        let next = pc + 1;
        match *instr {
            Instruction::LoadByte { .. } | Instruction::LoadWord { .. } => {
                self.load(instr, None).map_err(|k| (pc, k))?;
            }
            Instruction::Store { src, mem } => {
                let spans = self.m.resolve(self.addr(&mem), 8, true).map_err(|f| (pc, f.kind))?;
                self.write(&spans, self.regs.get(src));
            }
            Instruction::ShlImm { dst, amount } => self.regs.set(dst, self.regs.get(dst) << amount),
            Instruction::ShrImm { dst, amount } => self.regs.set(dst, self.regs.get(dst) >> amount),
            Instruction::AndImm { dst, imm } => self.regs.set(dst, self.regs.get(dst) & imm),
            Instruction::Add { dst, src } => self.regs.set(dst, self.regs.get(dst).wrapping_add(self.regs.get(src))),
            Instruction::MovImm { dst, imm } => self.regs.set(dst, imm),
            Instruction::Jz { src, target } => {
                return Ok(Some(if self.regs.get(src) == 0 { target } else { next }));
            }
            Instruction::Jmp { target } => return Ok(Some(target)),
            Instruction::Clflush { mem } => {
                let spans = self.m.resolve(self.addr(&mem), 1, false).map_err(|f| (pc, f.kind))?;
                self.cache.flush(spans[0].0);
            }
            Instruction::TimeRead { dst } => {
                // fused with the load that follows; a faulting load discards both
                let saved = self.regs;
                if let Err(k) = self.load(&prog.instructions()[next], Some(dst)) {
                    self.regs = saved;
                    return Err((next, k));
                }
                return Ok(Some(next + 1));
            }
            Instruction::TxBegin => {
                let region = prog.enclosing_tx(pc).expect("validated region");
                self.tx = Some((region, self.regs, self.delta.clone()));
            }
            Instruction::TxEnd => {
                self.tx = None;
                self.outcome = TxOutcome::Committed;
            }
            Instruction::Raise => return Err((pc, FaultKind::Trap)),
            Instruction::Halt => return Ok(None),
        }
        Ok(Some(next))
    }
}

/// Executes `prog` strictly in order on a copy of the machine's architectural state.
///
/// Permissions are checked before any data is read, and the machine (its
/// cache included) is never modified: `TIME_READ` latencies come from a
/// private copy of the cache.
pub fn interpret_in_order(prog: &Program, machine: &MachineState) -> Result<ArchResult, ExecError> {
    let mut it = Interp {
        prog,
        m: machine,
        cache: machine.cache.clone(),
        regs: machine.regs,
        delta: MemoryDelta::new(),
        tx: None,
        outcome: TxOutcome::None,
    };
    let mut fault = None;
    let mut pc = 0;
    let mut steps = 0u64;
    while pc < prog.len() {
        steps += if matches!(prog.get(pc), Some(Instruction::TimeRead { .. })) { 2 } else { 1 };
        if steps > machine.cpu.max_steps {
            return Err(ExecError::StepLimit(machine.cpu.max_steps));
        }
        match it.step(pc) {
            Ok(Some(next)) => pc = next,
            Ok(None) => break,
            Err((index, kind)) => match it.tx.take() {
                Some((region, regs, delta)) => {
                    it.regs = regs;
                    it.delta = delta;
                    it.outcome = TxOutcome::Aborted(kind);
                    pc = region.end + 1;
                }
                None => {
                    fault = Some(Fault { kind, index });
                    break;
                }
            },
        }
    }
    Ok(ArchResult { regs: it.regs, mem_delta: it.delta, fault, tx: it.outcome })
}
