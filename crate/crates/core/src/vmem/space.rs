use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::addr::{PhysAddr, VirtAddr, PAGE_SIZE};
use super::phys::PhysicalMemory;
use crate::error::VmemError;

/// Direct-physical map base used when KASLR is off.
pub const DIRECT_MAP_FIXED_BASE: u64 = 0xffff_8800_0000_0000;
/// First virtual address of the attacker's user region.
pub const USER_BASE: u64 = 0x0000_0000_1000_0000;
/// Kernel-only pages that stay mapped in the user table under KAISER.
pub const TRAMPOLINE_BASE: u64 = 0xffff_ffff_ff00_0000;
pub const TRAMPOLINE_PAGES: u64 = 4;
pub const TRAMPOLINE_FILL: u8 = 0x90;
/// With the hard-split bit set, everything at or above this address is kernel.
pub const SPLIT_BOUNDARY: u64 = 0x8000_0000_0000_0000;
pub const KASLR_ENTROPY_BITS: u32 = 40;

/// Privilege level of an access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Privilege {
    User,
    Kernel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TranslateFault {
    NotPresent,
    Protection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PageTableEntry {
    pub frame: u64,
    pub present: bool,
    pub user_accessible: bool,
    pub writable: bool,
}

/// Result of a translation. Faults are values: a protection fault on a
/// present page still carries the physical address it resolved to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Translation {
    pub paddr: Option<PhysAddr>,
    pub fault: Option<TranslateFault>,
    pub writable: bool,
}

impl Translation {
    pub fn ok(&self) -> Option<PhysAddr> {
        match self.fault {
            None => self.paddr,
            Some(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VmemConfig {
    pub phys_size: u64,
    pub kaiser: bool,
    pub kaslr: bool,
    pub hard_split: bool,
    pub seed: u64,
    /// Pages mapped user-accessible at [`USER_BASE`]; must hold the probe array.
    pub user_pages: u64,
    pub kaslr_entropy_bits: u32,
}

impl Default for VmemConfig {
    fn default() -> Self {
        Self {
            phys_size: 16 << 20,
            kaiser: false,
            kaslr: false,
            hard_split: false,
            seed: 0,
            user_pages: 272,
            kaslr_entropy_bits: KASLR_ENTROPY_BITS,
        }
    }
}

/// Page tables for one attacker process plus the kernel half every process shares.
///
/// Explicit pages (the user region and the trampolines) live in a page map.
/// The direct-physical map is linear, so its entries are computed on lookup
/// instead of being stored one per frame.
#[derive(Clone, Debug)]
pub struct AddressSpace {
    pages: BTreeMap<u64, PageTableEntry>,
    direct_map_base: VirtAddr,
    phys_size: u64,
    kaiser: bool,
    hard_split: bool,
    kaslr_entropy_bits: u32,
    user_pages: u64,
    user_frame_base: u64,
    trampoline_frame_base: u64,
}

/// Number of candidate direct-map bases for a given entropy and memory size.
pub fn kaslr_slots(entropy_bits: u32, phys_size: u64) -> u64 {
    if entropy_bits == 0 {
        return 1;
    }
    let span = 1u128 << entropy_bits;
    span.div_ceil(phys_size as u128).max(1) as u64
}

pub fn build_address_space(cfg: &VmemConfig) -> Result<AddressSpace, VmemError> {
    if cfg.phys_size == 0 {
        return Err(VmemError::Config("vmem.phys_size must be non-zero".into()));
    }
    if !cfg.phys_size.is_multiple_of(PAGE_SIZE) {
        return Err(VmemError::Config(format!(
            "vmem.phys_size {:#x} is not a multiple of the page size",
            cfg.phys_size
        )));
    }
    if cfg.phys_size > 1 << 40 {
        return Err(VmemError::Config("vmem.phys_size larger than 1 TiB".into()));
    }
    if cfg.kaslr_entropy_bits > 44 {
        return Err(VmemError::Config("KASLR entropy above 44 bits would overlap the trampolines".into()));
    }
    let frames = cfg.phys_size / PAGE_SIZE;
    let reserved = cfg.user_pages + TRAMPOLINE_PAGES;
    if reserved >= frames {
        return Err(VmemError::Config(format!(
            "{frames} frames cannot hold {} user pages, {TRAMPOLINE_PAGES} trampolines and kernel data",
            cfg.user_pages
        )));
    }

    // User frames at the top of physical memory, trampolines right below.
    let user_frame_base = frames - cfg.user_pages;
    let trampoline_frame_base = user_frame_base - TRAMPOLINE_PAGES;

    let mut pages = BTreeMap::new();
    for i in 0..cfg.user_pages {
        pages.insert(
            USER_BASE / PAGE_SIZE + i,
            PageTableEntry { frame: user_frame_base + i, present: true, user_accessible: true, writable: true },
        );
    }
    for i in 0..TRAMPOLINE_PAGES {
        pages.insert(
            TRAMPOLINE_BASE / PAGE_SIZE + i,
            PageTableEntry { frame: trampoline_frame_base + i, present: true, user_accessible: false, writable: false },
        );
    }

    let (direct_map_base, entropy) = if cfg.kaslr {
        let slots = kaslr_slots(cfg.kaslr_entropy_bits, cfg.phys_size);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let k = rng.gen_range(0..slots);
        (DIRECT_MAP_FIXED_BASE + k * cfg.phys_size, cfg.kaslr_entropy_bits)
    } else {
        (DIRECT_MAP_FIXED_BASE, 0)
    };

    Ok(AddressSpace {
        pages,
        direct_map_base: VirtAddr(direct_map_base),
        phys_size: cfg.phys_size,
        kaiser: cfg.kaiser,
        hard_split: cfg.hard_split,
        kaslr_entropy_bits: entropy,
        user_pages: cfg.user_pages,
        user_frame_base,
        trampoline_frame_base,
    })
}

impl AddressSpace {
    pub fn direct_map_base(&self) -> VirtAddr {
        self.direct_map_base
    }

    pub fn kaiser(&self) -> bool {
        self.kaiser
    }

    pub fn hard_split(&self) -> bool {
        self.hard_split
    }

    pub fn kaslr_entropy_bits(&self) -> u32 {
        self.kaslr_entropy_bits
    }

    pub fn phys_size(&self) -> u64 {
        self.phys_size
    }

    pub fn split_boundary(&self) -> VirtAddr {
        VirtAddr(SPLIT_BOUNDARY)
    }

    pub fn user_base(&self) -> VirtAddr {
        VirtAddr(USER_BASE)
    }

    pub fn user_pages(&self) -> u64 {
        self.user_pages
    }

    /// Physical range `[start, end)` backing the user region.
    pub fn user_phys_range(&self) -> (PhysAddr, PhysAddr) {
        (PhysAddr(self.user_frame_base * PAGE_SIZE), PhysAddr(self.phys_size))
    }

    pub fn trampoline_phys_range(&self) -> (PhysAddr, PhysAddr) {
        (PhysAddr(self.trampoline_frame_base * PAGE_SIZE), PhysAddr(self.user_frame_base * PAGE_SIZE))
    }

    /// Physical memory below this address is kernel data, free for planting.
    pub fn kernel_data_limit(&self) -> PhysAddr {
        PhysAddr(self.trampoline_frame_base * PAGE_SIZE)
    }

    /// Kernel virtual address of `pa` through the direct-physical map.
    pub fn direct_map_va(&self, pa: PhysAddr) -> VirtAddr {
        self.direct_map_base.offset(pa.get())
    }

    fn direct_map_entry(&self, vpage: u64) -> Option<PageTableEntry> {
        let base = self.direct_map_base.page_number();
        let frames = self.phys_size / PAGE_SIZE;
        let idx = vpage.checked_sub(base)?;
        (idx < frames).then_some(PageTableEntry { frame: idx, present: true, user_accessible: false, writable: true })
    }

    /// Looks up the entry the hardware would see while running at `privilege`.
    /// Under KAISER the user-mode table only holds user pages and trampolines.
    pub fn lookup(&self, vpage: u64, privilege: Privilege) -> Option<PageTableEntry> {
        if let Some(pte) = self.pages.get(&vpage) {
            return Some(*pte);
        }
        if self.kaiser && privilege == Privilege::User {
            return None;
        }
        self.direct_map_entry(vpage)
    }

    pub fn translate(&self, va: VirtAddr, privilege: Privilege) -> Translation {
        if self.hard_split && privilege == Privilege::User && va.get() >= SPLIT_BOUNDARY {
            return Translation { paddr: None, fault: Some(TranslateFault::Protection), writable: false };
        }
        match self.lookup(va.page_number(), privilege) {
            Some(pte) if pte.present => {
                let paddr = PhysAddr(pte.frame * PAGE_SIZE + va.page_offset());
                let fault =
                    (privilege == Privilege::User && !pte.user_accessible).then_some(TranslateFault::Protection);
                Translation { paddr: Some(paddr), fault, writable: pte.writable }
            }
            _ => Translation { paddr: None, fault: Some(TranslateFault::NotPresent), writable: false },
        }
    }

    /// The decision the page table alone would make, ignoring the hard-split shortcut.
    pub fn translate_by_table(&self, va: VirtAddr, privilege: Privilege) -> Translation {
        let mut plain = self.clone();
        plain.hard_split = false;
        plain.translate(va, privilege)
    }

    /// Virtual pages of the trampoline set.
    pub fn trampoline_pages(&self) -> impl Iterator<Item = VirtAddr> {
        (0..TRAMPOLINE_PAGES).map(|i| VirtAddr(TRAMPOLINE_BASE + i * PAGE_SIZE))
    }

    /// Kernel pages visible in the user-mode table.
    pub fn user_visible_kernel_pages(&self) -> Vec<VirtAddr> {
        self.pages
            .iter()
            .filter(|(_, pte)| !pte.user_accessible && pte.present)
            .map(|(vp, _)| VirtAddr(vp * PAGE_SIZE))
            .collect()
    }

    /// Fills trampoline frames with their fixed filler.
    pub fn install_trampolines(&self, mem: &mut PhysicalMemory) -> Result<(), VmemError> {
        let (start, end) = self.trampoline_phys_range();
        let filler = vec![TRAMPOLINE_FILL; (end.get() - start.get()) as usize];
        mem.write_phys(start, &filler)
    }
}
