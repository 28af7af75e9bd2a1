use std::fmt;

use crate::error::DecodeError;

pub const NUM_REGS: usize = 8;

/// One of the eight general-purpose registers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(u8);

impl Reg {
    pub const R0: Reg = Reg(0);
    pub const R1: Reg = Reg(1);
    pub const R2: Reg = Reg(2);
    pub const R3: Reg = Reg(3);
    pub const R4: Reg = Reg(4);
    pub const R5: Reg = Reg(5);
    pub const R6: Reg = Reg(6);
    pub const R7: Reg = Reg(7);

    pub fn new(id: u8) -> Option<Reg> {
        ((id as usize) < NUM_REGS).then_some(Reg(id))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = Reg> {
        (0..NUM_REGS as u8).map(Reg)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// The register file: eight 64-bit registers with a low-byte write view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct RegisterFile([u64; NUM_REGS]);

impl RegisterFile {
    pub fn get(&self, r: Reg) -> u64 {
        self.0[r.index()]
    }

    pub fn set(&mut self, r: Reg, v: u64) {
        self.0[r.index()] = v;
    }

    /// Writes only bits 0..8, like a write to `al`.
    pub fn set_low_byte(&mut self, r: Reg, b: u8) {
        let old = self.0[r.index()];
        self.0[r.index()] = merge_low_byte(old, b);
    }

    pub fn as_array(&self) -> &[u64; NUM_REGS] {
        &self.0
    }
}

pub fn merge_low_byte(old: u64, b: u8) -> u64 {
    (old & !0xff) | b as u64
}

/// A set of registers, as a bitmask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct RegSet(u8);

impl RegSet {
    pub fn contains(self, r: Reg) -> bool {
        self.0 & (1 << r.0) != 0
    }

    pub fn insert(&mut self, r: Reg) {
        self.0 |= 1 << r.0;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Reg> {
        Reg::all().filter(move |r| self.contains(*r))
    }
}

impl FromIterator<Reg> for RegSet {
    fn from_iter<T: IntoIterator<Item = Reg>>(iter: T) -> Self {
        let mut s = RegSet::default();
        for r in iter {
            s.insert(r);
        }
        s
    }
}

impl<const N: usize> From<[Reg; N]> for RegSet {
    fn from(regs: [Reg; N]) -> Self {
        regs.into_iter().collect()
    }
}

/// `[base]` or `[base + index]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MemOperand {
    pub base: Reg,
    pub index: Option<Reg>,
}

impl MemOperand {
    pub fn base(base: Reg) -> Self {
        Self { base, index: None }
    }

    pub fn indexed(base: Reg, index: Reg) -> Self {
        Self { base, index: Some(index) }
    }

    pub fn regs(&self) -> impl Iterator<Item = Reg> {
        std::iter::once(self.base).chain(self.index)
    }
}

impl fmt::Display for MemOperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "[{} + {}]", self.base, i),
            None => write!(f, "[{}]", self.base),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Instruction {
    /// Loads one byte into the low byte of `dst`.
    LoadByte {
        dst: Reg,
        mem: MemOperand,
    },
    /// Loads eight bytes (little-endian) into `dst`.
    LoadWord {
        dst: Reg,
        mem: MemOperand,
    },
    /// Stores all eight bytes of `src`.
    Store {
        src: Reg,
        mem: MemOperand,
    },
    ShlImm {
        dst: Reg,
        amount: u32,
    },
    ShrImm {
        dst: Reg,
        amount: u32,
    },
    AndImm {
        dst: Reg,
        imm: u64,
    },
    Add {
        dst: Reg,
        src: Reg,
    },
    MovImm {
        dst: Reg,
        imm: u64,
    },
    /// Jumps to `target` if `src` is zero.
    Jz {
        src: Reg,
        target: usize,
    },
    Jmp {
        target: usize,
    },
    Clflush {
        mem: MemOperand,
    },
    /// `dst` receives the latency of the load that follows.
    TimeRead {
        dst: Reg,
    },
    TxBegin,
    TxEnd,
    Raise,
    Halt,
}

impl Instruction {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::LoadByte { .. } => "LOAD_BYTE",
            Instruction::LoadWord { .. } => "LOAD_WORD",
            Instruction::Store { .. } => "STORE",
            Instruction::ShlImm { .. } => "SHL_IMM",
            Instruction::ShrImm { .. } => "SHR_IMM",
            Instruction::AndImm { .. } => "AND_IMM",
            Instruction::Add { .. } => "ADD",
            Instruction::MovImm { .. } => "MOV_IMM",
            Instruction::Jz { .. } => "JZ",
            Instruction::Jmp { .. } => "JMP",
            Instruction::Clflush { .. } => "CLFLUSH",
            Instruction::TimeRead { .. } => "TIME_READ",
            Instruction::TxBegin => "TX_BEGIN",
            Instruction::TxEnd => "TX_END",
            Instruction::Raise => "RAISE",
            Instruction::Halt => "HALT",
        }
    }

    pub fn is_load(&self) -> bool {
        matches!(self, Instruction::LoadByte { .. } | Instruction::LoadWord { .. })
    }

    pub fn branch_target(&self) -> Option<usize> {
        match self {
            Instruction::Jz { target, .. } | Instruction::Jmp { target } => Some(*target),
            _ => None,
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.mnemonic().to_ascii_lowercase();
        match self {
            Instruction::LoadByte { dst, mem } | Instruction::LoadWord { dst, mem } => {
                write!(f, "{m} {dst}, {mem}")
            }
            Instruction::Store { src, mem } => write!(f, "{m} {src}, {mem}"),
            Instruction::ShlImm { dst, amount } | Instruction::ShrImm { dst, amount } => {
                write!(f, "{m} {dst}, {amount}")
            }
            Instruction::AndImm { dst, imm } | Instruction::MovImm { dst, imm } => write!(f, "{m} {dst}, {imm:#x}"),
            Instruction::Add { dst, src } => write!(f, "{m} {dst}, {src}"),
            Instruction::Jz { src, target } => write!(f, "{m} {src}, @{target}"),
            Instruction::Jmp { target } => write!(f, "{m} @{target}"),
            Instruction::Clflush { mem } => write!(f, "{m} {mem}"),
            Instruction::TimeRead { dst } => write!(f, "{m} {dst}"),
            _ => f.write_str(&m),
        }
    }
}

/// Coarse µop class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UopKind {
    AddressGen,
    MemLoad,
    MemStore,
    Alu,
    Branch,
    Flush,
    Timer,
    TxMarker,
    FaultMarker,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AluOp {
    Shl(u32),
    Shr(u32),
    And(u64),
    Add(Reg),
    Mov(u64),
}

/// What a µop does. Address-generation results feed the memory µop that
/// follows them inside the same instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum UopOp {
    AddressGen(MemOperand),
    Load { dst: Reg, width: u8 },
    Store { src: Reg },
    Alu { dst: Reg, op: AluOp },
    Jz { src: Reg, target: usize },
    Jmp { target: usize },
    Halt,
    Flush,
    Timer { dst: Reg },
    TxBegin,
    TxEnd,
    Raise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Microop {
    pub kind: UopKind,
    pub op: UopOp,
    /// Program-order index of the parent instruction.
    pub inst_index: usize,
    /// Registers this µop reads.
    pub deps: RegSet,
}

fn uop(kind: UopKind, op: UopOp, inst_index: usize, deps: impl Into<RegSet>) -> Microop {
    Microop { kind, op, inst_index, deps: deps.into() }
}

fn check_shift(opcode: &'static str, amount: u32) -> Result<(), DecodeError> {
    if amount >= 64 {
        return Err(DecodeError { opcode, field: "amount", reason: format!("shift by {amount} >= 64") });
    }
    Ok(())
}

fn mem_uops(mem: MemOperand, index: usize, tail: Microop) -> Vec<Microop> {
    vec![uop(UopKind::AddressGen, UopOp::AddressGen(mem), index, mem.regs().collect::<RegSet>()), tail]
}

/// Splits an instruction at program index `index` into µops.
pub fn decode_at(instr: &Instruction, index: usize) -> Result<Vec<Microop>, DecodeError> {
    use Instruction as I;
    let uops = match *instr {
        I::LoadByte { dst, mem } => {
            mem_uops(mem, index, uop(UopKind::MemLoad, UopOp::Load { dst, width: 1 }, index, [dst]))
        }
        I::LoadWord { dst, mem } => {
            mem_uops(mem, index, uop(UopKind::MemLoad, UopOp::Load { dst, width: 8 }, index, []))
        }
        I::Store { src, mem } => mem_uops(mem, index, uop(UopKind::MemStore, UopOp::Store { src }, index, [src])),
        I::ShlImm { dst, amount } => {
            check_shift("SHL_IMM", amount)?;
            vec![uop(UopKind::Alu, UopOp::Alu { dst, op: AluOp::Shl(amount) }, index, [dst])]
        }
        I::ShrImm { dst, amount } => {
            check_shift("SHR_IMM", amount)?;
            vec![uop(UopKind::Alu, UopOp::Alu { dst, op: AluOp::Shr(amount) }, index, [dst])]
        }
        I::AndImm { dst, imm } => vec![uop(UopKind::Alu, UopOp::Alu { dst, op: AluOp::And(imm) }, index, [dst])],
        I::Add { dst, src } => {
            vec![uop(UopKind::Alu, UopOp::Alu { dst, op: AluOp::Add(src) }, index, [dst, src])]
        }
        I::MovImm { dst, imm } => vec![uop(UopKind::Alu, UopOp::Alu { dst, op: AluOp::Mov(imm) }, index, [])],
        I::Jz { src, target } => vec![uop(UopKind::Branch, UopOp::Jz { src, target }, index, [src])],
        I::Jmp { target } => vec![uop(UopKind::Branch, UopOp::Jmp { target }, index, [])],
        I::Clflush { mem } => mem_uops(mem, index, uop(UopKind::Flush, UopOp::Flush, index, [])),
        I::TimeRead { dst } => vec![uop(UopKind::Timer, UopOp::Timer { dst }, index, [])],
        I::TxBegin => vec![uop(UopKind::TxMarker, UopOp::TxBegin, index, [])],
        I::TxEnd => vec![uop(UopKind::TxMarker, UopOp::TxEnd, index, [])],
        I::Raise => vec![uop(UopKind::FaultMarker, UopOp::Raise, index, [])],
        I::Halt => vec![uop(UopKind::Branch, UopOp::Halt, index, [])],
    };
    Ok(uops)
}

pub fn decode(instr: &Instruction) -> Result<Vec<Microop>, DecodeError> {
    decode_at(instr, 0)
}
