#![allow(dead_code)]

use meltsim::isa::{Instruction, MemOperand, Program, Reg};
use meltsim::ooo::WindowModel;
use meltsim::vmem::{PhysAddr, VirtAddr, PAGE_SIZE, SPLIT_BOUNDARY, TRAMPOLINE_BASE, USER_BASE};
use meltsim::{CheckMode, MachineConfig, MachineState};
use rand::Rng;

pub const SECRET_PA: u64 = 0x1000;

pub struct Case {
    pub machine: MachineState,
    pub window: WindowModel,
    pub program: Program,
}

fn reg(rng: &mut impl Rng) -> Reg {
    Reg::new(rng.gen_range(0..8)).unwrap()
}

fn mem(rng: &mut impl Rng) -> MemOperand {
    if rng.gen_bool(0.3) {
        MemOperand::indexed(reg(rng), reg(rng))
    } else {
        MemOperand::base(reg(rng))
    }
}

fn address(rng: &mut impl Rng, m: &MachineState) -> u64 {
    match rng.gen_range(0..8) {
        0 | 1 => USER_BASE + rng.gen_range(0..4) * PAGE_SIZE + rng.gen_range(0..64),
        2 => USER_BASE + PAGE_SIZE - rng.gen_range(1..8),
        3 | 4 => m.asp.direct_map_va(PhysAddr(SECRET_PA + rng.gen_range(0..64))).get(),
        5 => 0xdead_0000 + rng.gen_range(0..16),
        6 => TRAMPOLINE_BASE + rng.gen_range(0..32),
        _ => SPLIT_BOUNDARY + rng.gen_range(0..0x1000),
    }
}

fn plain(rng: &mut impl Rng, m: &MachineState) -> Instruction {
    match rng.gen_range(0..100) {
        0..=19 => {
            let imm = if rng.gen_bool(0.7) { address(rng, m) } else { rng.gen_range(0..300) };
            Instruction::MovImm { dst: reg(rng), imm }
        }
        20..=34 => Instruction::LoadByte { dst: reg(rng), mem: mem(rng) },
        35..=44 => Instruction::LoadWord { dst: reg(rng), mem: mem(rng) },
        45..=52 => Instruction::Store { src: reg(rng), mem: mem(rng) },
        53..=59 => Instruction::ShlImm { dst: reg(rng), amount: rng.gen_range(0..16) },
        60..=65 => Instruction::ShrImm { dst: reg(rng), amount: rng.gen_range(0..16) },
        66..=71 => Instruction::AndImm { dst: reg(rng), imm: rng.gen_range(0..0x1000) },
        72..=79 => Instruction::Add { dst: reg(rng), src: reg(rng) },
        80..=86 => Instruction::Clflush { mem: mem(rng) },
        87..=89 => Instruction::Raise,
        _ => Instruction::MovImm { dst: reg(rng), imm: 0 },
    }
}

/// A straight-line segment occupying `[start, start + len)` whose jumps stay
/// inside it or land on `start + len`.
fn segment(rng: &mut impl Rng, m: &MachineState, start: usize, len: usize) -> Vec<Instruction> {
    (0..len)
        .map(|i| {
            let at = start + i;
            let end = start + len;
            match rng.gen_range(0..10) {
                0 => Instruction::Jz { src: reg(rng), target: rng.gen_range(at + 1..=end) },
                1 if rng.gen_bool(0.3) => Instruction::Jmp { target: rng.gen_range(at + 1..=end) },
                _ => plain(rng, m),
            }
        })
        .collect()
}

pub fn machine_config(rng: &mut impl Rng) -> MachineConfig {
    let mut cfg = MachineConfig::default();
    cfg.vmem.phys_size = 2 << 20;
    cfg.vmem.kaiser = rng.gen_bool(0.15);
    cfg.vmem.hard_split = rng.gen_bool(0.15);
    cfg.vmem.seed = rng.next_u64();
    cfg.cpu.tsx = true;
    cfg.cpu.check = if rng.gen_bool(0.2) { CheckMode::SerializedCheck } else { CheckMode::Baseline };
    cfg.cache.seed = rng.next_u64();
    cfg
}

/// A random machine with planted kernel data and a random valid program, no TIME_READ.
pub fn random_case(rng: &mut impl Rng) -> Case {
    let cfg = machine_config(rng);
    let mut machine = MachineState::new(&cfg).unwrap();
    let mut secret = [0u8; 64];
    rng.fill_bytes(&mut secret);
    secret[rng.gen_range(0..64)] = 0;
    machine.plant_kernel(PhysAddr(SECRET_PA), &secret).unwrap();
    let window = WindowModel {
        budget: rng.gen_range(0..14),
        p_zero: [0.0, 0.2, 0.5, 1.0][rng.gen_range(0..4)],
        seed: rng.next_u64(),
    };
    loop {
        let pre = rng.gen_range(1..7);
        let tx = if rng.gen_bool(0.4) { rng.gen_range(1..8) } else { 0 };
        let post = rng.gen_range(0..7);
        // seed some registers with addresses so later loads resolve
        let mut prog: Vec<Instruction> = (0..rng.gen_range(0..5))
            .map(|_| Instruction::MovImm { dst: reg(rng), imm: address(rng, &machine) })
            .collect();
        let start = prog.len();
        prog.extend(segment(rng, &machine, start, pre));
        let pre = start + pre;
        if tx > 0 {
            prog.push(Instruction::TxBegin);
            prog.extend(segment(rng, &machine, pre + 1, tx));
            prog.push(Instruction::TxEnd);
        }
        let post_start = prog.len();
        prog.extend(segment(rng, &machine, post_start, post));
        prog.push(Instruction::Halt);
        if let Ok(program) = Program::new(prog) {
            return Case { machine, window, program };
        }
    }
}

/// A kernel VA through the direct map, for planted data at `pa`.
pub fn kva(m: &MachineState, pa: u64) -> VirtAddr {
    m.asp.direct_map_va(PhysAddr(pa))
}
