//! The simulated machine: architectural registers and memory, plus the
//! microarchitectural state (cache, TLB) that lives beside them.

use std::collections::HashSet;

use crate::cache::{CacheConfig, CacheState};
use crate::error::VmemError;
use crate::isa::{FaultKind, RegisterFile};
use crate::vmem::{
    build_address_space, AddressSpace, PhysAddr, PhysicalMemory, Privilege, TranslateFault, VirtAddr, VmemConfig,
    PAGE_SIZE,
};

/// How loads treat a failed permission check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum CheckMode {
    /// Permission is checked at retirement; the data flows to dependents before that.
    #[default]
    Baseline,
    /// Permission is checked before the data is fetched.
    SerializedCheck,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpuConfig {
    pub check: CheckMode,
    /// Transactional memory available.
    pub tsx: bool,
    pub fault_cost: u64,
    pub abort_cost: u64,
    /// Extra cycles for a load whose page is not in the TLB.
    pub walk_cost: u64,
    pub max_steps: u64,
}

impl Default for CpuConfig {
    fn default() -> Self {
        Self {
            check: CheckMode::Baseline,
            tsx: true,
            fault_cost: 2000,
            abort_cost: 200,
            walk_cost: 30,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct MachineConfig {
    pub vmem: VmemConfig,
    pub cache: CacheConfig,
    pub cpu: CpuConfig,
}

#[derive(Clone, Debug)]
pub struct MachineState {
    pub regs: RegisterFile,
    pub mem: PhysicalMemory,
    pub asp: AddressSpace,
    pub cache: CacheState,
    pub tlb: HashSet<u64>,
    pub privilege: Privilege,
    pub cpu: CpuConfig,
}

/// A contiguous physical piece of a virtual access.
pub(crate) type Span = (PhysAddr, usize);

/// A failed access. `spans` is set when the bytes were physically reachable
/// anyway (a permission failure on a present page).
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct AccessFault {
    pub kind: FaultKind,
    pub spans: Option<Vec<Span>>,
}

impl MachineState {
    pub fn new(cfg: &MachineConfig) -> Result<Self, MachineError> {
        let asp = build_address_space(&cfg.vmem)?;
        let mut mem = PhysicalMemory::new(cfg.vmem.phys_size)?;
        asp.install_trampolines(&mut mem)?;
        let cache = CacheState::new(cfg.cache.clone())?;
        Ok(Self {
            regs: RegisterFile::default(),
            mem,
            asp,
            cache,
            tlb: HashSet::new(),
            privilege: Privilege::User,
            cpu: cfg.cpu.clone(),
        })
    }

    /// Plants bytes into kernel data memory, refusing the reserved user and trampoline frames.
    pub fn plant_kernel(&mut self, pa: PhysAddr, bytes: &[u8]) -> Result<(), VmemError> {
        let end = pa.get().checked_add(bytes.len() as u64);
        if end.is_none_or(|e| e > self.asp.kernel_data_limit().get()) {
            return Err(VmemError::Config(format!(
                "planted range {:#x}+{:#x} overlaps reserved frames at {:#x}",
                pa.get(),
                bytes.len(),
                self.asp.kernel_data_limit().get()
            )));
        }
        self.mem.plant(pa, bytes)
    }

    /// Splits a virtual access into physical spans, checking permissions for `privilege`.
    pub(crate) fn resolve(&self, va: VirtAddr, len: u64, write: bool) -> Result<Vec<Span>, AccessFault> {
        let mut spans = Vec::with_capacity(2);
        let mut fault: Option<FaultKind> = None;
        let mut reachable = true;
        let mut addr = va.get();
        let mut remaining = len;
        while remaining > 0 {
            let here = VirtAddr(addr);
            let n = (PAGE_SIZE - here.page_offset()).min(remaining);
            let t = self.asp.translate(here, self.privilege);
            let kind = match t.fault {
                Some(TranslateFault::NotPresent) => Some(FaultKind::PageFault),
                Some(TranslateFault::Protection) => Some(FaultKind::ProtectionFault),
                None if write && !t.writable => Some(FaultKind::ProtectionFault),
                None => None,
            };
            if let Some(k) = kind {
                // a missing page outranks a permission failure
                if fault != Some(FaultKind::PageFault) {
                    fault = Some(k);
                }
            }
            match t.paddr {
                Some(pa) if self.mem.size() >= pa.get() + n => spans.push((pa, n as usize)),
                _ => reachable = false,
            }
            addr = addr.wrapping_add(n);
            remaining -= n;
        }
        match fault {
            None if reachable => Ok(spans),
            None => Err(AccessFault { kind: FaultKind::PageFault, spans: None }),
            Some(kind) => Err(AccessFault { kind, spans: reachable.then_some(spans) }),
        }
    }

    pub(crate) fn read_spans(&self, spans: &[Span]) -> u64 {
        let mut buf = [0u8; 8];
        let mut at = 0;
        for &(pa, n) in spans {
            self.mem.read_into(pa, &mut buf[at..at + n]);
            at += n;
        }
        u64::from_le_bytes(buf)
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum MachineError {
    #[error(transparent)]
    Vmem(#[from] VmemError),
    #[error(transparent)]
    Cache(#[from] crate::error::CacheError),
}
