use std::collections::BTreeMap;
use std::fmt;

use super::instr::{decode_at, Instruction, MemOperand, Microop, Reg};
use crate::error::ProgramError;

/// A transaction region: `begin` holds TX_BEGIN, `end` holds the matching TX_END.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxRegion {
    pub begin: usize,
    pub end: usize,
}

impl TxRegion {
    pub fn contains(&self, index: usize) -> bool {
        (self.begin..=self.end).contains(&index)
    }
}

/// A validated program. Execution starts at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    instructions: Vec<Instruction>,
    labels: BTreeMap<String, usize>,
    decoded: Vec<Vec<Microop>>,
    tx_regions: Vec<TxRegion>,
}

impl Program {
    pub fn new(instructions: Vec<Instruction>) -> Result<Self, ProgramError> {
        Self::with_labels(instructions, BTreeMap::new())
    }

    pub fn with_labels(instructions: Vec<Instruction>, labels: BTreeMap<String, usize>) -> Result<Self, ProgramError> {
        let decoded = instructions
            .iter()
            .enumerate()
            .map(|(index, i)| decode_at(i, index).map_err(|source| ProgramError::Decode { index, source }))
            .collect::<Result<Vec<_>, _>>()?;
        let len = instructions.len();
        for (index, instr) in instructions.iter().enumerate() {
            if let Some(target) = instr.branch_target() {
                if target >= len {
                    return Err(ProgramError::BadTarget { index, target });
                }
            }
            if let Instruction::TimeRead { .. } = instr {
                if !instructions.get(index + 1).is_some_and(Instruction::is_load) {
                    return Err(ProgramError::UnpairedTimer(index));
                }
            }
        }
        for (name, &index) in &labels {
            if index > len {
                return Err(ProgramError::UnknownLabel(name.clone()));
            }
        }
        let tx_regions = tx_regions(&instructions)?;
        check_tx_flow(&instructions, &tx_regions)?;
        Ok(Self { instructions, labels, decoded, tx_regions })
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Instruction> {
        self.instructions.get(index)
    }

    pub fn uops(&self, index: usize) -> &[Microop] {
        &self.decoded[index]
    }

    pub fn labels(&self) -> &BTreeMap<String, usize> {
        &self.labels
    }

    pub fn label(&self, name: &str) -> Option<usize> {
        self.labels.get(name).copied()
    }

    pub fn tx_regions(&self) -> &[TxRegion] {
        &self.tx_regions
    }

    /// The transaction region containing `index`, if any.
    pub fn enclosing_tx(&self, index: usize) -> Option<TxRegion> {
        self.tx_regions.iter().copied().find(|r| r.contains(index))
    }

    pub fn from_asm(src: &str) -> Result<Self, ProgramError> {
        super::asm::parse(src)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut by_index: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (name, &i) in &self.labels {
            by_index.entry(i).or_default().push(name);
        }
        for (i, instr) in self.instructions.iter().enumerate() {
            for name in by_index.get(&i).into_iter().flatten() {
                writeln!(f, "{name}:")?;
            }
            writeln!(f, "    {instr}")?;
        }
        Ok(())
    }
}

fn tx_regions(instructions: &[Instruction]) -> Result<Vec<TxRegion>, ProgramError> {
    let mut regions = Vec::new();
    let mut open: Option<usize> = None;
    for (i, instr) in instructions.iter().enumerate() {
        match instr {
            Instruction::TxBegin => {
                if open.is_some() {
                    return Err(ProgramError::NestedTx(i));
                }
                open = Some(i);
            }
            Instruction::TxEnd => match open.take() {
                Some(begin) => regions.push(TxRegion { begin, end: i }),
                None => return Err(ProgramError::UnbalancedTx(i)),
            },
            _ => {}
        }
    }
    match open {
        Some(begin) => Err(ProgramError::UnbalancedTx(begin)),
        None => Ok(regions),
    }
}

// Transaction regions are single-entry single-exit: nothing jumps in past
// TX_BEGIN, nothing inside jumps out or halts.
fn check_tx_flow(instructions: &[Instruction], regions: &[TxRegion]) -> Result<(), ProgramError> {
    let region_of = |i: usize| regions.iter().position(|r| r.contains(i));
    for (index, instr) in instructions.iter().enumerate() {
        let here = region_of(index);
        if here.is_some() && matches!(instr, Instruction::Halt) {
            return Err(ProgramError::TxEscape { index });
        }
        if let Some(target) = instr.branch_target() {
            let there = region_of(target);
            let enters_at_begin = there.is_some_and(|r| regions[r].begin == target);
            let ok = match (here, there) {
                (None, None) => true,
                (None, Some(_)) => enters_at_begin,
                (Some(a), Some(b)) => a == b && target != regions[a].begin,
                (Some(_), None) => false,
            };
            if !ok {
                return Err(ProgramError::TxEscape { index });
            }
        }
    }
    Ok(())
}

/// Builds programs with symbolic labels.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    instructions: Vec<Instruction>,
    labels: BTreeMap<String, usize>,
    fixups: Vec<(usize, String)>,
    duplicate: Option<String>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(&mut self, name: &str) -> &mut Self {
        if self.labels.insert(name.to_string(), self.instructions.len()).is_some() {
            self.duplicate.get_or_insert_with(|| name.to_string());
        }
        self
    }

    pub fn push(&mut self, i: Instruction) -> &mut Self {
        self.instructions.push(i);
        self
    }

    pub fn jz(&mut self, src: Reg, label: &str) -> &mut Self {
        self.fixups.push((self.instructions.len(), label.to_string()));
        self.push(Instruction::Jz { src, target: usize::MAX })
    }

    pub fn jmp(&mut self, label: &str) -> &mut Self {
        self.fixups.push((self.instructions.len(), label.to_string()));
        self.push(Instruction::Jmp { target: usize::MAX })
    }

    pub fn mov(&mut self, dst: Reg, imm: u64) -> &mut Self {
        self.push(Instruction::MovImm { dst, imm })
    }

    pub fn load_byte(&mut self, dst: Reg, mem: MemOperand) -> &mut Self {
        self.push(Instruction::LoadByte { dst, mem })
    }

    pub fn load_word(&mut self, dst: Reg, mem: MemOperand) -> &mut Self {
        self.push(Instruction::LoadWord { dst, mem })
    }

    pub fn build(&mut self) -> Result<Program, ProgramError> {
        if let Some(d) = self.duplicate.take() {
            return Err(ProgramError::DuplicateLabel(d));
        }
        let mut instructions = std::mem::take(&mut self.instructions);
        for (index, name) in self.fixups.drain(..) {
            let target = *self.labels.get(&name).ok_or(ProgramError::UnknownLabel(name))?;
            match &mut instructions[index] {
                Instruction::Jz { target: t, .. } | Instruction::Jmp { target: t } => *t = target,
                _ => unreachable!("fixup on non-branch"),
            }
        }
        Program::with_labels(instructions, std::mem::take(&mut self.labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unbalanced_and_nested_tx() {
        assert_eq!(
            Program::new(vec![Instruction::TxBegin, Instruction::Halt]).unwrap_err(),
            ProgramError::UnbalancedTx(0)
        );
        assert_eq!(Program::new(vec![Instruction::TxEnd]).unwrap_err(), ProgramError::UnbalancedTx(0));
        assert_eq!(
            Program::new(vec![Instruction::TxBegin, Instruction::TxBegin, Instruction::TxEnd, Instruction::TxEnd])
                .unwrap_err(),
            ProgramError::NestedTx(1)
        );
    }

    #[test]
    fn branch_targets_must_resolve() {
        assert!(matches!(
            Program::new(vec![Instruction::Jmp { target: 3 }]),
            Err(ProgramError::BadTarget { index: 0, target: 3 })
        ));
        let err = ProgramBuilder::new().jmp("nowhere").build().unwrap_err();
        assert_eq!(err, ProgramError::UnknownLabel("nowhere".into()));
    }

    #[test]
    fn timer_needs_a_load() {
        let p = Program::new(vec![Instruction::TimeRead { dst: Reg::R3 }, Instruction::Halt]);
        assert_eq!(p.unwrap_err(), ProgramError::UnpairedTimer(0));
    }

    #[test]
    fn no_jumping_out_of_a_transaction() {
        let p = ProgramBuilder::new()
            .push(Instruction::TxBegin)
            .jmp("out")
            .push(Instruction::TxEnd)
            .label("out")
            .push(Instruction::Halt)
            .build();
        assert!(matches!(p, Err(ProgramError::TxEscape { index: 1 })));
    }

    #[test]
    fn builder_resolves_backward_labels() {
        let p = ProgramBuilder::new()
            .mov(Reg::R0, 0)
            .label("retry")
            .load_byte(Reg::R0, MemOperand::base(Reg::R1))
            .jz(Reg::R0, "retry")
            .push(Instruction::Halt)
            .build()
            .unwrap();
        assert_eq!(p.get(2), Some(&Instruction::Jz { src: Reg::R0, target: 1 }));
        assert_eq!(p.label("retry"), Some(1));
    }
}
