use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rob::{Commit, Rob, RobStatus};
use crate::error::{ExecError, ProgramError};
use crate::isa::{
    merge_low_byte, AluOp, ArchResult, Fault, FaultKind, Instruction, MemOperand, MemoryDelta, Program, Reg,
    RegisterFile, TxOutcome, TxRegion, UopOp, NUM_REGS,
};
use crate::machine::{CheckMode, MachineState, Span};
use crate::vmem::{PhysAddr, VirtAddr};

/// How much runs ahead of a faulting instruction before the fault retires.
///
/// `budget` is the number of younger µops dispatched while the fault is
/// pending. `p_zero` is the chance that a faulting load hands its consumers
/// a zero instead of the real data, standing in for the lost race against
/// the register being cleared.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowModel {
    pub budget: usize,
    pub p_zero: f64,
    pub seed: u64,
}

impl Default for WindowModel {
    fn default() -> Self {
        Self { budget: 8, p_zero: 0.2, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub arch: ArchResult,
    pub cycles: u64,
    /// Physical addresses read by loads whose results were later squashed.
    pub transient_loads: Vec<PhysAddr>,
    pub squashed_uops: usize,
    pub rob_high_water: usize,
}

impl ExecutionTrace {
    pub fn fault(&self) -> Option<Fault> {
        self.arch.fault
    }

    pub fn tx(&self) -> TxOutcome {
        self.arch.tx
    }
}

/// One core. Owns the source of race nondeterminism, so repeated runs on the
/// same engine see fresh draws while a cloned engine replays them.
#[derive(Clone, Debug)]
pub struct Engine {
    window: WindowModel,
    mode: CheckMode,
    rng: ChaCha8Rng,
}

impl Engine {
    /// Panics if `p_zero` is outside `[0, 1]`.
    pub fn new(window: WindowModel, mode: CheckMode) -> Self {
        assert!((0.0..=1.0).contains(&window.p_zero), "p_zero {} outside [0, 1]", window.p_zero);
        let rng = ChaCha8Rng::seed_from_u64(window.seed);
        Self { window, mode, rng }
    }

    /// An engine using the check mode the machine's CPU is configured with.
    pub fn for_machine(window: WindowModel, machine: &MachineState) -> Self {
        Self::new(window, machine.cpu.check)
    }

    pub fn window(&self) -> &WindowModel {
        &self.window
    }

    pub fn mode(&self) -> CheckMode {
        self.mode
    }

    pub fn run(&mut self, prog: &Program, machine: &mut MachineState) -> Result<ExecutionTrace, ExecError> {
        if !prog.tx_regions().is_empty() && !machine.cpu.tsx {
            return Err(ExecError::NoTransactions);
        }
        let mut core = Core::new(self, prog, machine);
        core.run()?;
        Ok(core.finish())
    }

    /// Runs a program whose fault-prone code sits inside a TX_BEGIN/TX_END region.
    pub fn run_transaction(&mut self, prog: &Program, machine: &mut MachineState) -> Result<ExecutionTrace, ExecError> {
        if prog.tx_regions().is_empty() {
            return Err(ProgramError::NoTransaction.into());
        }
        self.run(prog, machine)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Val {
    Ready(u64),
    /// Never produced: the producer faulted without data.
    Poison,
}

enum Step {
    Next,
    Redirect(usize),
    /// Serializing or terminating µop.
    Stop,
    /// Branch on an unavailable value; fetch cannot continue.
    Blocked,
    Fault(FaultKind),
}

enum GroupEnd {
    Continue(usize),
    Halt,
    Fault { index: usize, kind: FaultKind },
}

struct TxState {
    region: TxRegion,
    regs: RegisterFile,
    buffer: BTreeMap<PhysAddr, u8>,
}

struct Core<'a> {
    prog: &'a Program,
    m: &'a mut MachineState,
    window: usize,
    p_zero: f64,
    mode: CheckMode,
    rng: &'a mut ChaCha8Rng,
    rob: Rob,
    arch: RegisterFile,
    spec: [Val; NUM_REGS],
    agen: Val,
    timer: Option<(usize, Reg)>,
    transient: bool,
    cycles: u64,
    transient_loads: Vec<PhysAddr>,
    squashed: usize,
    delta: MemoryDelta,
    tx: Option<TxState>,
    outcome: TxOutcome,
    fault: Option<Fault>,
}

impl<'a> Core<'a> {
    fn new(engine: &'a mut Engine, prog: &'a Program, m: &'a mut MachineState) -> Self {
        let arch = m.regs;
        Self {
            prog,
            window: engine.window.budget,
            p_zero: engine.window.p_zero,
            mode: engine.mode,
            rng: &mut engine.rng,
            m,
            rob: Rob::default(),
            arch,
            spec: arch.as_array().map(Val::Ready),
            agen: Val::Poison,
            timer: None,
            transient: false,
            cycles: 0,
            transient_loads: Vec::new(),
            squashed: 0,
            delta: MemoryDelta::new(),
            tx: None,
            outcome: TxOutcome::None,
            fault: None,
        }
    }

    fn finish(self) -> ExecutionTrace {
        self.m.regs = self.arch;
        ExecutionTrace {
            arch: ArchResult { regs: self.arch, mem_delta: self.delta, fault: self.fault, tx: self.outcome },
            cycles: self.cycles,
            transient_loads: self.transient_loads,
            squashed_uops: self.squashed,
            rob_high_water: self.rob.high_water(),
        }
    }

    /// Instructions fetched together: TIME_READ is fused with its load.
    fn group(&self, pc: usize) -> std::ops::Range<usize> {
        match self.prog.get(pc) {
            Some(Instruction::TimeRead { .. }) => pc..pc + 2,
            _ => pc..pc + 1,
        }
    }

    fn run(&mut self) -> Result<(), ExecError> {
        let max_steps = self.m.cpu.max_steps;
        let mut steps = 0u64;
        let mut pc = 0;
        while pc < self.prog.len() {
            let group = self.group(pc);
            steps += group.len() as u64;
            if steps > max_steps {
                return Err(ExecError::StepLimit(max_steps));
            }
            match self.issue_group(group.clone()) {
                GroupEnd::Continue(next) => {
                    self.retire_all();
                    pc = next;
                }
                GroupEnd::Halt => {
                    self.retire_all();
                    break;
                }
                GroupEnd::Fault { index, kind } => {
                    self.run_transient(group.end);
                    self.squash();
                    match self.tx.take() {
                        Some(tx) => {
                            self.arch = tx.regs;
                            self.reset_spec();
                            self.outcome = TxOutcome::Aborted(kind);
                            self.cycles += self.m.cpu.abort_cost;
                            pc = tx.region.end + 1;
                        }
                        None => {
                            self.fault = Some(Fault { kind, index });
                            self.cycles += self.m.cpu.fault_cost;
                            break;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn issue_group(&mut self, group: std::ops::Range<usize>) -> GroupEnd {
        let mut next = group.end;
        for index in group {
            for uop in self.prog.uops(index) {
                let slot = self.rob.dispatch(*uop);
                match self.execute(slot) {
                    Step::Next => {}
                    Step::Redirect(t) => next = t,
                    Step::Stop => return GroupEnd::Halt,
                    Step::Blocked => unreachable!("no unavailable operands outside a transient window"),
                    Step::Fault(kind) => return GroupEnd::Fault { index, kind },
                }
            }
        }
        GroupEnd::Continue(next)
    }

    /// Keeps dispatching younger µops behind a pending fault until the
    /// window budget runs out or fetch cannot proceed.
    fn run_transient(&mut self, mut pc: usize) {
        self.transient = true;
        let mut left = self.window;
        'fetch: while left > 0 && pc < self.prog.len() {
            let group = self.group(pc);
            let mut next = group.end;
            for index in group {
                for uop in self.prog.uops(index) {
                    if left == 0 {
                        break 'fetch;
                    }
                    left -= 1;
                    let slot = self.rob.dispatch(*uop);
                    match self.execute(slot) {
                        Step::Next | Step::Fault(FaultKind::PageFault | FaultKind::ProtectionFault) => {}
                        Step::Redirect(t) => next = t,
                        Step::Stop | Step::Blocked | Step::Fault(FaultKind::Trap) => break 'fetch,
                    }
                }
            }
            pc = next;
        }
        self.transient = false;
    }

    fn reset_spec(&mut self) {
        self.spec = self.arch.as_array().map(Val::Ready);
        self.agen = Val::Poison;
        self.timer = None;
    }

    fn squash(&mut self) {
        self.squashed += self.rob.squash();
        self.reset_spec();
    }

    fn retire_all(&mut self) {
        while let Some(e) = self.rob.retire() {
            match e.commit {
                Commit::None => {}
                Commit::Reg(r, v) => self.arch.set(r, v),
                Commit::Store(spans, value) => self.commit_store(&spans, value),
                Commit::Flush(pa) => self.m.cache.flush(pa),
                Commit::TxBegin => {
                    let region = self.prog.enclosing_tx(e.uop.inst_index).expect("validated region");
                    self.tx = Some(TxState { region, regs: self.arch, buffer: BTreeMap::new() });
                }
                Commit::TxEnd => {
                    if let Some(tx) = self.tx.take() {
                        for (pa, b) in tx.buffer {
                            self.write_byte(pa, b);
                        }
                    }
                    self.outcome = TxOutcome::Committed;
                }
            }
        }
        self.timer = None;
    }

    fn write_byte(&mut self, pa: PhysAddr, b: u8) {
        self.m.mem.write_phys(pa, &[b]).expect("resolved address is in range");
        self.delta.insert(pa, b);
    }

    fn commit_store(&mut self, spans: &[Span], value: u64) {
        let bytes = value.to_le_bytes();
        let mut at = 0;
        for &(pa, n) in spans {
            for k in 0..n {
                let a = pa.offset(k as u64);
                match &mut self.tx {
                    Some(tx) => {
                        tx.buffer.insert(a, bytes[at]);
                    }
                    None => self.write_byte(a, bytes[at]),
                }
                at += 1;
            }
        }
    }

    fn read(&self, spans: &[Span]) -> u64 {
        let mut v = self.m.read_spans(spans).to_le_bytes();
        if let Some(tx) = &self.tx {
            let mut at = 0;
            for &(pa, n) in spans {
                for k in 0..n {
                    if let Some(b) = tx.buffer.get(&pa.offset(k as u64)) {
                        v[at] = *b;
                    }
                    at += 1;
                }
            }
        }
        u64::from_le_bytes(v)
    }

    fn access(&mut self, va: VirtAddr, spans: &[Span]) -> u64 {
        let page = va.page_number();
        let walk = if self.m.tlb.contains(&page) { 0 } else { self.m.cpu.walk_cost };
        let latency = spans.iter().map(|&(pa, _)| self.m.cache.access(pa)).max().unwrap_or(0);
        self.cycles += walk + latency;
        latency
    }

    fn mem_addr(&self, mem: &MemOperand) -> Val {
        let base = self.spec[mem.base.index()];
        match (base, mem.index.map(|i| self.spec[i.index()])) {
            (Val::Ready(b), None) => Val::Ready(b),
            (Val::Ready(b), Some(Val::Ready(i))) => Val::Ready(b.wrapping_add(i)),
            _ => Val::Poison,
        }
    }

    fn set_reg(&mut self, slot: usize, r: Reg, v: Val) {
        self.spec[r.index()] = v;
        let e = self.rob.get_mut(slot);
        match v {
            Val::Ready(x) => {
                e.value = Some(x);
                e.commit = Commit::Reg(r, x);
            }
            Val::Poison => e.status = RobStatus::Waiting,
        }
    }

    fn feed_timer(&mut self, latency: Val) {
        if let Some((slot, dst)) = self.timer.take() {
            self.set_reg(slot, dst, latency);
        }
    }

    fn zero_bias(&mut self) -> bool {
        if self.p_zero <= 0.0 {
            false
        } else if self.p_zero >= 1.0 {
            true
        } else {
            self.rng.gen_bool(self.p_zero)
        }
    }

    fn execute(&mut self, slot: usize) -> Step {
        let op = self.rob.get_mut(slot).uop.op;
        let executed = |core: &mut Self| {
            core.cycles += 1;
            core.rob.get_mut(slot).status = RobStatus::Executed;
        };
        match op {
            UopOp::AddressGen(mem) => {
                self.agen = self.mem_addr(&mem);
                if let Val::Ready(a) = self.agen {
                    executed(self);
                    self.rob.get_mut(slot).value = Some(a);
                }
                Step::Next
            }
            UopOp::Load { dst, width } => self.execute_load(slot, dst, width),
            UopOp::Store { src } => {
                let (Val::Ready(addr), Val::Ready(v)) = (self.agen, self.spec[src.index()]) else {
                    return Step::Next;
                };
                executed(self);
                match self.m.resolve(VirtAddr(addr), 8, true) {
                    Ok(spans) => {
                        self.rob.get_mut(slot).commit = Commit::Store(spans, v);
                        Step::Next
                    }
                    Err(f) => self.fault(slot, f.kind),
                }
            }
            UopOp::Alu { dst, op } => {
                let cur = self.spec[dst.index()];
                let result = match (op, cur) {
                    (AluOp::Mov(imm), _) => Val::Ready(imm),
                    (_, Val::Poison) => Val::Poison,
                    (AluOp::Shl(n), Val::Ready(x)) => Val::Ready(x << n),
                    (AluOp::Shr(n), Val::Ready(x)) => Val::Ready(x >> n),
                    (AluOp::And(m), Val::Ready(x)) => Val::Ready(x & m),
                    (AluOp::Add(src), Val::Ready(x)) => match self.spec[src.index()] {
                        Val::Ready(y) => Val::Ready(x.wrapping_add(y)),
                        Val::Poison => Val::Poison,
                    },
                };
                if result != Val::Poison {
                    executed(self);
                }
                self.set_reg(slot, dst, result);
                Step::Next
            }
            UopOp::Jz { src, target } => match self.spec[src.index()] {
                Val::Poison => Step::Blocked,
                Val::Ready(v) => {
                    executed(self);
                    if v == 0 {
                        Step::Redirect(target)
                    } else {
                        Step::Next
                    }
                }
            },
            UopOp::Jmp { target } => {
                executed(self);
                Step::Redirect(target)
            }
            UopOp::Halt => {
                executed(self);
                Step::Stop
            }
            UopOp::Flush => {
                let Val::Ready(addr) = self.agen else {
                    return Step::Next;
                };
                executed(self);
                match self.m.resolve(VirtAddr(addr), 1, false) {
                    Ok(spans) => {
                        self.rob.get_mut(slot).commit = Commit::Flush(spans[0].0);
                        Step::Next
                    }
                    Err(f) => self.fault(slot, f.kind),
                }
            }
            UopOp::Timer { dst } => {
                executed(self);
                self.timer = Some((slot, dst));
                Step::Next
            }
            UopOp::TxBegin | UopOp::TxEnd if self.transient => Step::Stop,
            UopOp::TxBegin => {
                executed(self);
                self.rob.get_mut(slot).commit = Commit::TxBegin;
                Step::Next
            }
            UopOp::TxEnd => {
                executed(self);
                self.rob.get_mut(slot).commit = Commit::TxEnd;
                Step::Next
            }
            UopOp::Raise => {
                self.cycles += 1;
                self.fault(slot, FaultKind::Trap)
            }
        }
    }

    fn fault(&mut self, slot: usize, kind: FaultKind) -> Step {
        let e = self.rob.get_mut(slot);
        e.status = RobStatus::Faulted;
        e.fault = Some(kind);
        e.commit = Commit::None;
        Step::Fault(kind)
    }

    fn loaded(&self, dst: Reg, width: u8, raw: u64) -> Val {
        if width == 1 {
            match self.spec[dst.index()] {
                Val::Ready(old) => Val::Ready(merge_low_byte(old, raw as u8)),
                Val::Poison => Val::Poison,
            }
        } else {
            Val::Ready(raw)
        }
    }

    fn execute_load(&mut self, slot: usize, dst: Reg, width: u8) -> Step {
        let Val::Ready(addr) = self.agen else {
            self.feed_timer(Val::Poison);
            self.set_reg(slot, dst, Val::Poison);
            return Step::Next;
        };
        self.cycles += 1;
        let va = VirtAddr(addr);
        match self.m.resolve(va, width as u64, false) {
            Ok(spans) => {
                let latency = self.access(va, &spans);
                self.m.tlb.insert(va.page_number());
                if self.transient {
                    self.transient_loads.push(spans[0].0);
                }
                let raw = self.read(&spans);
                self.feed_timer(Val::Ready(latency));
                let v = self.loaded(dst, width, raw);
                self.rob.get_mut(slot).status = RobStatus::Executed;
                self.set_reg(slot, dst, v);
                Step::Next
            }
            Err(f) => {
                // Baseline: the permission check races the data, which reaches
                // dependents unless the register is zeroed first.
                let data = match self.mode {
                    CheckMode::Baseline => f.spans,
                    CheckMode::SerializedCheck => None,
                };
                match data {
                    Some(spans) => {
                        let latency = self.access(va, &spans);
                        self.transient_loads.push(spans[0].0);
                        let raw = if self.zero_bias() { 0 } else { self.read(&spans) };
                        self.feed_timer(Val::Ready(latency));
                        let v = self.loaded(dst, width, raw);
                        self.spec[dst.index()] = v;
                        self.rob.get_mut(slot).value = match v {
                            Val::Ready(x) => Some(x),
                            Val::Poison => None,
                        };
                    }
                    None => {
                        self.feed_timer(Val::Poison);
                        self.spec[dst.index()] = Val::Poison;
                    }
                }
                self.fault(slot, f.kind)
            }
        }
    }
}
