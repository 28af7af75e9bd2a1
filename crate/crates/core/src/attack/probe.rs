use crate::cache::LINE_SIZE;
use crate::error::AttackError;
use crate::machine::MachineState;
use crate::vmem::{Privilege, VirtAddr, PAGE_SIZE};

pub const PROBE_PAGES: usize = 256;

/// 256 page-strided slots in attacker memory, one per byte value.
///
/// Bit mode uses only page 0: line 0 stands for a zero bit, line 1 for a one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeArray {
    base: VirtAddr,
}

impl ProbeArray {
    /// Checks that every probe page, plus the scratch page after them, is user-accessible.
    pub fn new(machine: &MachineState, base: VirtAddr) -> Result<Self, AttackError> {
        if !base.is_page_aligned() {
            return Err(AttackError::Config(format!("probe base {:#x} is not page aligned", base.get())));
        }
        for page in 0..=PROBE_PAGES {
            let va = base.offset(page as u64 * PAGE_SIZE);
            if machine.asp.translate(va, Privilege::User).ok().is_none() {
                return Err(AttackError::ProbeNotUser { page, va: va.get() });
            }
        }
        Ok(Self { base })
    }

    pub fn base(&self) -> VirtAddr {
        self.base
    }

    pub fn page(&self, value: usize) -> VirtAddr {
        assert!(value < PROBE_PAGES);
        self.base.offset(value as u64 * PAGE_SIZE)
    }

    /// The line that signals a one bit.
    pub fn bit_line(&self) -> VirtAddr {
        self.base.offset(LINE_SIZE)
    }

    /// A page right after the probe slots, used for timing calibration.
    pub fn scratch(&self) -> VirtAddr {
        self.base.offset(PROBE_PAGES as u64 * PAGE_SIZE)
    }
}
