//! Textual assembly: one instruction per line, `;` comments, `label:` definitions.
//!
//! ```text
//! ; r1 = kernel address, r2 = probe array
//! retry:
//!     load_byte r0, [r1]
//!     shl r0, 12
//!     jz r0, retry
//!     load_word r2, [r2 + r0]
//!     halt
//! ```

use super::instr::{Instruction, MemOperand, Reg};
use super::program::{Program, ProgramBuilder};
use crate::error::ProgramError;

fn err(line: usize, reason: impl Into<String>) -> ProgramError {
    ProgramError::Parse { line, reason: reason.into() }
}

fn parse_reg(tok: &str, line: usize) -> Result<Reg, ProgramError> {
    let t = tok.trim().to_ascii_lowercase();
    t.strip_prefix('r')
        .and_then(|n| n.parse::<u8>().ok())
        .and_then(Reg::new)
        .ok_or_else(|| err(line, format!("expected register r0..r7, found `{tok}`")))
}

fn parse_imm(tok: &str, line: usize) -> Result<u64, ProgramError> {
    let t = tok.trim().replace('_', "");
    let parsed = if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        t.parse::<u64>()
    };
    parsed.map_err(|_| err(line, format!("bad immediate `{tok}`")))
}

fn parse_mem(tok: &str, line: usize) -> Result<MemOperand, ProgramError> {
    let inner = tok
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| err(line, format!("expected memory operand `[rX]` or `[rX + rY]`, found `{tok}`")))?;
    match inner.split_once('+') {
        Some((b, i)) => Ok(MemOperand::indexed(parse_reg(b, line)?, parse_reg(i, line)?)),
        None => Ok(MemOperand::base(parse_reg(inner, line)?)),
    }
}

fn split_operands(rest: &str) -> Vec<&str> {
    if rest.trim().is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    }
}

fn is_label_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !s.starts_with(|c: char| c.is_ascii_digit())
}

pub fn parse(src: &str) -> Result<Program, ProgramError> {
    let mut b = ProgramBuilder::new();
    for (n, raw) in src.lines().enumerate() {
        let line = n + 1;
        let mut text = raw.split(';').next().unwrap_or("").trim();
        while let Some((head, tail)) = text.split_once(':') {
            let name = head.trim();
            if !is_label_name(name) {
                break;
            }
            b.label(name);
            text = tail.trim();
        }
        if text.is_empty() {
            continue;
        }
        let (mnemonic, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        let ops = split_operands(rest);
        let want = |count: usize| {
            if ops.len() == count {
                Ok(())
            } else {
                Err(err(line, format!("`{mnemonic}` takes {count} operand(s), found {}", ops.len())))
            }
        };
        match mnemonic.to_ascii_lowercase().as_str() {
            "load_byte" | "ldb" => {
                want(2)?;
                b.push(Instruction::LoadByte { dst: parse_reg(ops[0], line)?, mem: parse_mem(ops[1], line)? });
            }
            "load_word" | "ldw" => {
                want(2)?;
                b.push(Instruction::LoadWord { dst: parse_reg(ops[0], line)?, mem: parse_mem(ops[1], line)? });
            }
            "store" => {
                want(2)?;
                b.push(Instruction::Store { src: parse_reg(ops[0], line)?, mem: parse_mem(ops[1], line)? });
            }
            op @ ("shl" | "shl_imm" | "shr" | "shr_imm") => {
                want(2)?;
                let dst = parse_reg(ops[0], line)?;
                let amount =
                    u32::try_from(parse_imm(ops[1], line)?).map_err(|_| err(line, "shift amount too large"))?;
                b.push(if op.starts_with("shl") {
                    Instruction::ShlImm { dst, amount }
                } else {
                    Instruction::ShrImm { dst, amount }
                });
            }
            "and" | "and_imm" => {
                want(2)?;
                b.push(Instruction::AndImm { dst: parse_reg(ops[0], line)?, imm: parse_imm(ops[1], line)? });
            }
            "add" => {
                want(2)?;
                b.push(Instruction::Add { dst: parse_reg(ops[0], line)?, src: parse_reg(ops[1], line)? });
            }
            "mov" | "mov_imm" => {
                want(2)?;
                b.push(Instruction::MovImm { dst: parse_reg(ops[0], line)?, imm: parse_imm(ops[1], line)? });
            }
            "jz" => {
                want(2)?;
                let src = parse_reg(ops[0], line)?;
                if !is_label_name(ops[1]) {
                    return Err(err(line, format!("bad label `{}`", ops[1])));
                }
                b.jz(src, ops[1]);
            }
            "jmp" => {
                want(1)?;
                if !is_label_name(ops[0]) {
                    return Err(err(line, format!("bad label `{}`", ops[0])));
                }
                b.jmp(ops[0]);
            }
            "clflush" => {
                want(1)?;
                b.push(Instruction::Clflush { mem: parse_mem(ops[0], line)? });
            }
            "time_read" | "rdtsc" => {
                want(1)?;
                b.push(Instruction::TimeRead { dst: parse_reg(ops[0], line)? });
            }
            "tx_begin" | "xbegin" => {
                want(0)?;
                b.push(Instruction::TxBegin);
            }
            "tx_end" | "xend" => {
                want(0)?;
                b.push(Instruction::TxEnd);
            }
            "raise" => {
                want(0)?;
                b.push(Instruction::Raise);
            }
            "halt" => {
                want(0)?;
                b.push(Instruction::Halt);
            }
            other => return Err(err(line, format!("unknown mnemonic `{other}`"))),
        }
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_transient_sequence() {
        let p = parse(
            "; r1 = kernel address\n\
             retry: load_byte r0, [r1]\n\
             \tshl r0, 0xc\n\
             \tjz r0, retry   ; again on zero\n\
             \tload_word r2, [r2 + r0]\n\
             \thalt\n",
        )
        .unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p.label("retry"), Some(0));
        assert_eq!(p.get(1), Some(&Instruction::ShlImm { dst: Reg::R0, amount: 12 }));
        assert_eq!(p.get(2), Some(&Instruction::Jz { src: Reg::R0, target: 0 }));
        assert_eq!(p.get(3), Some(&Instruction::LoadWord { dst: Reg::R2, mem: MemOperand::indexed(Reg::R2, Reg::R0) }));
    }

    #[test]
    fn every_mnemonic_parses() {
        let src = "start:\n mov r1, 0x1000\n add r1, r2\n and r1, 255\n shr r1, 3\n store r1, [r2]\n\
                   tx_begin\n clflush [r1]\n time_read r3\n load_byte r4, [r1 + r2]\n tx_end\n\
                   jz r4, start\n jmp end\n raise\nend: halt\n";
        let p = parse(src).unwrap();
        assert_eq!(p.len(), 14);
        assert_eq!(p.label("end"), Some(13));
        assert_eq!(p.tx_regions().len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            parse("halt\nfrob r0").unwrap_err(),
            ProgramError::Parse { line: 2, reason: "unknown mnemonic `frob`".into() }
        );
        assert!(matches!(parse("mov r9, 1"), Err(ProgramError::Parse { line: 1, .. })));
        assert!(matches!(parse("load_byte r0, r1"), Err(ProgramError::Parse { line: 1, .. })));
        assert!(matches!(parse("add r0"), Err(ProgramError::Parse { line: 1, .. })));
        assert!(matches!(parse("shl r0, 64"), Err(ProgramError::Decode { index: 0, .. })));
        assert_eq!(parse("a:\na:\nhalt").unwrap_err(), ProgramError::DuplicateLabel("a".into()));
    }
}
