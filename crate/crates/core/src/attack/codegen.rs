//! Programs the attacker runs. Registers: r0 data, r1 target, r2 probe base,
//! r3 timer, r4 scratch.

use crate::error::ProgramError;
use crate::isa::{Instruction, MemOperand, Program, ProgramBuilder, Reg};
use crate::vmem::VirtAddr;

/// How a byte is pushed through the cache.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Encoding {
    /// Page `value` of the probe array is touched.
    Byte,
    /// Bit `n` of the value selects line 0 or line 1 of probe page 0.
    Bit(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransientSpec {
    pub target: VirtAddr,
    pub probe: VirtAddr,
    pub encoding: Encoding,
    /// Loop back while the (transient) value reads as zero.
    pub retry: bool,
    /// Wrap the faulting part in a transaction.
    pub tx: bool,
}

pub fn transient(spec: &TransientSpec) -> Result<Program, ProgramError> {
    let mut b = ProgramBuilder::new();
    b.mov(Reg::R1, spec.target.get()).mov(Reg::R2, spec.probe.get()).mov(Reg::R0, 0);
    if spec.tx {
        b.push(Instruction::TxBegin);
    }
    b.label("retry").load_byte(Reg::R0, MemOperand::base(Reg::R1));
    match spec.encoding {
        Encoding::Byte => {
            b.push(Instruction::ShlImm { dst: Reg::R0, amount: 12 });
        }
        Encoding::Bit(n) => {
            b.push(Instruction::ShrImm { dst: Reg::R0, amount: n })
                .push(Instruction::AndImm { dst: Reg::R0, imm: 1 })
                .push(Instruction::ShlImm { dst: Reg::R0, amount: 6 });
        }
    }
    if spec.retry {
        b.jz(Reg::R0, "retry");
    }
    b.load_word(Reg::R2, MemOperand::indexed(Reg::R2, Reg::R0));
    if spec.tx {
        b.push(Instruction::TxEnd);
    }
    b.push(Instruction::Halt).build()
}

/// Evicts each address's line.
pub fn flush(lines: &[VirtAddr]) -> Result<Program, ProgramError> {
    let mut b = ProgramBuilder::new();
    for va in lines {
        b.mov(Reg::R1, va.get()).push(Instruction::Clflush { mem: MemOperand::base(Reg::R1) });
    }
    b.push(Instruction::Halt).build()
}

/// Times one load from `va`; the latency lands in r3.
pub fn reload(va: VirtAddr) -> Result<Program, ProgramError> {
    ProgramBuilder::new()
        .mov(Reg::R1, va.get())
        .push(Instruction::TimeRead { dst: Reg::R3 })
        .load_byte(Reg::R4, MemOperand::base(Reg::R1))
        .push(Instruction::Halt)
        .build()
}

/// The two-instruction toy: a trap followed by an encode that should never run.
pub fn toy(data: u8, probe: VirtAddr) -> Result<Program, ProgramError> {
    ProgramBuilder::new()
        .mov(Reg::R0, data as u64)
        .mov(Reg::R2, probe.get())
        .push(Instruction::Raise)
        .push(Instruction::ShlImm { dst: Reg::R0, amount: 12 })
        .load_byte(Reg::R3, MemOperand::indexed(Reg::R2, Reg::R0))
        .push(Instruction::Halt)
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_program_shape() {
        let p = transient(&TransientSpec {
            target: VirtAddr(0xffff_8800_0000_0000),
            probe: VirtAddr(0x1000_0000),
            encoding: Encoding::Byte,
            retry: true,
            tx: false,
        })
        .unwrap();
        let text = p.to_string();
        assert!(text.contains("load_byte r0, [r1]"), "{text}");
        assert!(text.contains("shl_imm r0, 12"), "{text}");
        assert!(text.contains("jz r0"), "{text}");
        assert!(text.contains("load_word r2, [r2 + r0]"), "{text}");
    }

    #[test]
    fn tx_wraps_everything_that_can_fault() {
        let p = transient(&TransientSpec {
            target: VirtAddr(0),
            probe: VirtAddr(0),
            encoding: Encoding::Bit(3),
            retry: false,
            tx: true,
        })
        .unwrap();
        let r = p.tx_regions()[0];
        for (i, instr) in p.instructions().iter().enumerate() {
            if instr.is_load() {
                assert!(r.contains(i));
            }
        }
    }
}
