//! Physical memory, page tables and the kernel's direct-physical map.

mod addr;
mod phys;
mod space;

pub use addr::{PhysAddr, VirtAddr, PAGE_SHIFT, PAGE_SIZE};
pub use phys::PhysicalMemory;
pub use space::{
    build_address_space, kaslr_slots, AddressSpace, PageTableEntry, Privilege, TranslateFault, Translation, VmemConfig,
    DIRECT_MAP_FIXED_BASE, KASLR_ENTROPY_BITS, SPLIT_BOUNDARY, TRAMPOLINE_BASE, TRAMPOLINE_FILL, TRAMPOLINE_PAGES,
    USER_BASE,
};
