//! The toy instruction set, its µop decoder, assembler and in-order reference interpreter.

mod asm;
mod instr;
mod interp;
mod program;

pub use asm::parse as parse_asm;
pub use instr::{
    decode, decode_at, merge_low_byte, AluOp, Instruction, MemOperand, Microop, Reg, RegSet, RegisterFile, UopKind,
    UopOp, NUM_REGS,
};
pub use interp::{interpret_in_order, ArchResult, Fault, FaultKind, MemoryDelta, TxOutcome};
pub use program::{Program, ProgramBuilder, TxRegion};
