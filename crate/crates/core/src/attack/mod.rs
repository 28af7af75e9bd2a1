//! The Meltdown attack, built only from the toy ISA.
//!
//! Everything the attacker learns comes from architectural results of
//! programs it runs: the fault (or abort) kind, and the latencies its own
//! `TIME_READ`s return. It never inspects the cache or physical memory.

mod codegen;
mod probe;

use std::collections::HashMap;

pub use codegen::{Encoding, TransientSpec};
pub use probe::{ProbeArray, PROBE_PAGES};

use crate::error::AttackError;
use crate::isa::{FaultKind, Program, Reg, TxOutcome};
use crate::machine::MachineState;
use crate::ooo::{Engine, ExecutionTrace, WindowModel};
use crate::vmem::{kaslr_slots, VirtAddr, DIRECT_MAP_FIXED_BASE};

/// Bytes tried at each KASLR candidate before giving up on it.
pub const KASLR_PROBE_OFFSETS: u64 = 16;
const CALIBRATION_ROUNDS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExceptionMode {
    /// Let the fault happen and pay for delivering it.
    Handling,
    /// Run the access inside a transaction so the fault only aborts it.
    Suppression,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub mode: ExceptionMode,
    /// 1 or 8.
    pub bits_per_tx: u32,
    pub retry: bool,
    /// Extra attempts when a round shows no (or an ambiguous) signal.
    pub max_retries: u32,
    pub window: WindowModel,
    /// Defaults to the start of the user region.
    pub probe_base: Option<VirtAddr>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            mode: ExceptionMode::Suppression,
            bits_per_tx: 1,
            retry: true,
            max_retries: 10,
            window: WindowModel::default(),
            probe_base: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Confidence {
    /// A probe line lit up.
    Hit,
    /// Never saw a hit on a present page; taken to be zero.
    InferredZero,
    /// Nothing usable, e.g. the address is not mapped at all.
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeakOutcome {
    pub value: u8,
    pub confidence: Confidence,
    /// The fault the attacker observed on the last attempt.
    pub fault: Option<FaultKind>,
}

impl LeakOutcome {
    /// The byte as reported in a dump: unknown bytes have no value.
    pub fn byte(&self) -> Option<u8> {
        (self.confidence != Confidence::Unknown).then_some(self.value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub start: VirtAddr,
    pub outcomes: Vec<LeakOutcome>,
    pub cycles: u64,
}

impl AttackResult {
    pub fn bytes(&self) -> Vec<Option<u8>> {
        self.outcomes.iter().map(LeakOutcome::byte).collect()
    }

    pub fn cycles_per_byte(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.cycles as f64 / self.outcomes.len() as f64
    }

    pub fn count(&self, c: Confidence) -> usize {
        self.outcomes.iter().filter(|o| o.confidence == c).count()
    }

    /// Positions whose reported byte differs from `oracle`. Unknown bytes count as errors.
    pub fn errors(&self, oracle: &[u8]) -> usize {
        assert_eq!(oracle.len(), self.outcomes.len(), "oracle length mismatch");
        self.outcomes.iter().zip(oracle).filter(|(o, b)| o.byte() != Some(**b)).count()
    }

    pub fn accuracy(&self, oracle: &[u8]) -> f64 {
        if oracle.is_empty() {
            return 1.0;
        }
        1.0 - self.errors(oracle) as f64 / oracle.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KaslrFound {
    pub base: VirtAddr,
    /// Candidate bases tried, the right one included.
    pub probes: u64,
}

/// What a single transient round revealed.
struct Round {
    hits: Vec<usize>,
    fault: Option<FaultKind>,
}

/// An attacker process on a machine.
pub struct Attacker<'m> {
    m: &'m mut MachineState,
    engine: Engine,
    cfg: AttackConfig,
    probe: ProbeArray,
    threshold: u64,
    cycles: u64,
    probe_hits: u64,
    flush_bytes: Program,
    flush_bit: Program,
    reload_pages: Vec<Program>,
    reload_bit: Program,
    transients: HashMap<(VirtAddr, Encoding), Program>,
}

impl<'m> Attacker<'m> {
    pub fn new(machine: &'m mut MachineState, cfg: AttackConfig) -> Result<Self, AttackError> {
        if cfg.bits_per_tx != 1 && cfg.bits_per_tx != 8 {
            return Err(AttackError::Config(format!("bits per transaction must be 1 or 8, got {}", cfg.bits_per_tx)));
        }
        if !(0.0..=1.0).contains(&cfg.window.p_zero) {
            return Err(AttackError::Config(format!("p_zero {} outside [0, 1]", cfg.window.p_zero)));
        }
        if cfg.mode == ExceptionMode::Suppression && !machine.cpu.tsx {
            return Err(AttackError::NoTransactions);
        }
        let base = cfg.probe_base.unwrap_or_else(|| machine.asp.user_base());
        let probe = ProbeArray::new(machine, base)?;
        let pages: Vec<VirtAddr> = (0..PROBE_PAGES).map(|v| probe.page(v)).collect();
        let engine = Engine::for_machine(cfg.window.clone(), machine);
        let mut a = Self {
            m: machine,
            engine,
            probe,
            threshold: 0,
            cycles: 0,
            probe_hits: 0,
            flush_bytes: codegen::flush(&pages).map_err(exec)?,
            flush_bit: codegen::flush(&[probe.bit_line()]).map_err(exec)?,
            reload_pages: pages.iter().map(|&va| codegen::reload(va)).collect::<Result<_, _>>().map_err(exec)?,
            reload_bit: codegen::reload(probe.bit_line()).map_err(exec)?,
            transients: HashMap::new(),
            cfg,
        };
        a.threshold = a.calibrate()?;
        Ok(a)
    }

    pub fn config(&self) -> &AttackConfig {
        &self.cfg
    }

    pub fn probe(&self) -> &ProbeArray {
        &self.probe
    }

    /// Latency below which a reload counts as a hit, measured at startup.
    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    /// Simulated cycles spent so far, calibration included.
    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    /// Reloads that came back under the threshold, over all leak attempts.
    pub fn probe_hits(&self) -> u64 {
        self.probe_hits
    }

    pub fn machine(&self) -> &MachineState {
        self.m
    }

    fn run(&mut self, prog: &Program) -> Result<ExecutionTrace, AttackError> {
        let t = self.engine.run(prog, self.m)?;
        self.cycles += t.cycles;
        Ok(t)
    }

    fn run_cached(&mut self, which: Cached) -> Result<ExecutionTrace, AttackError> {
        let prog = match which {
            Cached::FlushBytes => &self.flush_bytes,
            Cached::FlushBit => &self.flush_bit,
            Cached::ReloadPage(v) => &self.reload_pages[v],
            Cached::ReloadBit => &self.reload_bit,
        };
        let t = self.engine.run(prog, self.m)?;
        self.cycles += t.cycles;
        Ok(t)
    }

    fn time(&mut self, which: Cached) -> Result<u64, AttackError> {
        Ok(self.run_cached(which)?.arch.regs.get(Reg::R3))
    }

    /// Midpoint between the median timed miss and the median timed hit on a scratch line.
    fn calibrate(&mut self) -> Result<u64, AttackError> {
        let scratch = self.probe.scratch();
        let flush = codegen::flush(&[scratch]).map_err(exec)?;
        let reload = codegen::reload(scratch).map_err(exec)?;
        let mut misses = Vec::with_capacity(CALIBRATION_ROUNDS);
        let mut hits = Vec::with_capacity(CALIBRATION_ROUNDS);
        for _ in 0..CALIBRATION_ROUNDS {
            self.run(&flush)?;
            misses.push(self.run(&reload)?.arch.regs.get(Reg::R3));
            hits.push(self.run(&reload)?.arch.regs.get(Reg::R3));
        }
        misses.sort_unstable();
        hits.sort_unstable();
        let (miss, hit) = (misses[CALIBRATION_ROUNDS / 2], hits[CALIBRATION_ROUNDS / 2]);
        if miss <= hit {
            return Err(AttackError::Config(format!("cannot tell hits ({hit}) from misses ({miss}) apart")));
        }
        Ok((hit + miss).div_ceil(2))
    }

    fn prepare(&mut self, target: VirtAddr, encoding: Encoding) -> Result<(), AttackError> {
        if self.transients.contains_key(&(target, encoding)) {
            return Ok(());
        }
        let p = codegen::transient(&TransientSpec {
            target,
            probe: self.probe.base(),
            encoding,
            retry: self.cfg.retry,
            tx: self.cfg.mode == ExceptionMode::Suppression,
        })
        .map_err(exec)?;
        // only the current target's programs are worth keeping
        if self.transients.keys().any(|(t, _)| *t != target) {
            self.transients.clear();
        }
        self.transients.insert((target, encoding), p);
        Ok(())
    }

    /// Runs the transient part and reports the fault kind the attacker gets to see.
    fn fire(&mut self, target: VirtAddr, encoding: Encoding) -> Result<Option<FaultKind>, AttackError> {
        self.prepare(target, encoding)?;
        let t = self.engine.run(&self.transients[&(target, encoding)], self.m)?;
        self.cycles += t.cycles;
        Ok(match self.cfg.mode {
            ExceptionMode::Handling => t.fault().map(|f| f.kind),
            ExceptionMode::Suppression => {
                debug_assert!(t.fault().is_none(), "a suppressed fault was delivered");
                match t.tx() {
                    TxOutcome::Aborted(k) => Some(k),
                    _ => None,
                }
            }
        })
    }

    fn byte_round(&mut self, target: VirtAddr) -> Result<Round, AttackError> {
        self.run_cached(Cached::FlushBytes)?;
        let fault = self.fire(target, Encoding::Byte)?;
        let mut hits = Vec::new();
        for v in 0..PROBE_PAGES {
            if self.time(Cached::ReloadPage(v))? < self.threshold {
                hits.push(v);
            }
        }
        self.probe_hits += hits.len() as u64;
        Ok(Round { hits, fault })
    }

    fn bit_round(&mut self, target: VirtAddr, bit: u32) -> Result<Round, AttackError> {
        self.run_cached(Cached::FlushBit)?;
        let fault = self.fire(target, Encoding::Bit(bit))?;
        let hit = self.time(Cached::ReloadBit)? < self.threshold;
        self.probe_hits += hit as u64;
        Ok(Round { hits: if hit { vec![1] } else { vec![] }, fault })
    }

    fn attempts(&self) -> u32 {
        if self.cfg.retry {
            self.cfg.max_retries + 1
        } else {
            1
        }
    }

    /// Leaks one byte from any virtual address.
    pub fn leak_byte(&mut self, target: VirtAddr) -> Result<LeakOutcome, AttackError> {
        match self.cfg.bits_per_tx {
            8 => self.leak_byte_whole(target),
            _ => self.leak_byte_bitwise(target),
        }
    }

    fn leak_byte_whole(&mut self, target: VirtAddr) -> Result<LeakOutcome, AttackError> {
        let mut ambiguous = false;
        let mut fault = None;
        for _ in 0..self.attempts() {
            let r = self.byte_round(target)?;
            fault = r.fault;
            if fault == Some(FaultKind::PageFault) {
                return Ok(LeakOutcome { value: 0, confidence: Confidence::Unknown, fault });
            }
            match r.hits[..] {
                [v] => return Ok(LeakOutcome { value: v as u8, confidence: Confidence::Hit, fault }),
                [] => ambiguous = false,
                _ => ambiguous = true,
            }
        }
        let confidence = if ambiguous { Confidence::Unknown } else { Confidence::InferredZero };
        Ok(LeakOutcome { value: 0, confidence, fault })
    }

    fn leak_byte_bitwise(&mut self, target: VirtAddr) -> Result<LeakOutcome, AttackError> {
        let mut value = 0u8;
        let mut any_hit = false;
        let mut fault = None;
        for bit in 0..8 {
            for _ in 0..self.attempts() {
                let r = self.bit_round(target, bit)?;
                fault = r.fault;
                if fault == Some(FaultKind::PageFault) {
                    return Ok(LeakOutcome { value: 0, confidence: Confidence::Unknown, fault });
                }
                if !r.hits.is_empty() {
                    value |= 1 << bit;
                    any_hit = true;
                    break;
                }
            }
        }
        let confidence = if any_hit { Confidence::Hit } else { Confidence::InferredZero };
        Ok(LeakOutcome { value, confidence, fault })
    }

    /// Leaks `len` consecutive bytes starting at `start`.
    pub fn dump_range(&mut self, start: VirtAddr, len: u64) -> Result<AttackResult, AttackError> {
        let before = self.cycles;
        let mut outcomes = Vec::with_capacity(len as usize);
        for i in 0..len {
            outcomes.push(self.leak_byte(start.offset(i))?);
        }
        Ok(AttackResult { start, outcomes, cycles: self.cycles - before })
    }

    /// Walks the candidate direct-map bases until one leaks a byte.
    ///
    /// Wrong candidates are unmapped and fault as not-present on the first
    /// try; the right one faults on protection and lights up a probe line.
    pub fn find_direct_map(&mut self, phys_size: u64) -> Result<KaslrFound, AttackError> {
        let slots = kaslr_slots(crate::vmem::KASLR_ENTROPY_BITS, phys_size);
        let mut probes = 0;
        for k in 0..slots {
            probes += 1;
            let candidate = VirtAddr(DIRECT_MAP_FIXED_BASE + k * phys_size);
            for off in 0..KASLR_PROBE_OFFSETS {
                let o = self.leak_byte(candidate.offset(off))?;
                match o.confidence {
                    Confidence::Hit => return Ok(KaslrFound { base: candidate, probes }),
                    _ if o.fault == Some(FaultKind::PageFault) => break,
                    _ => {}
                }
            }
        }
        Err(AttackError::NotFound { probes })
    }

    /// Flushes the probe array, runs the trap-then-encode toy with `data`,
    /// and returns the reload latency of every probe page.
    pub fn toy_example(&mut self, data: u8) -> Result<[u64; PROBE_PAGES], AttackError> {
        let prog = codegen::toy(data, self.probe.base()).map_err(exec)?;
        self.run_cached(Cached::FlushBytes)?;
        let t = self.run(&prog)?;
        debug_assert_eq!(t.fault().map(|f| f.kind), Some(FaultKind::Trap));
        let mut lat = [0u64; PROBE_PAGES];
        for (v, l) in lat.iter_mut().enumerate() {
            *l = self.time(Cached::ReloadPage(v))?;
        }
        Ok(lat)
    }
}

#[derive(Clone, Copy)]
enum Cached {
    FlushBytes,
    FlushBit,
    ReloadPage(usize),
    ReloadBit,
}

fn exec(e: crate::error::ProgramError) -> AttackError {
    AttackError::Exec(e.into())
}
