use std::fmt;

pub const PAGE_SIZE: u64 = 4096;
pub const PAGE_SHIFT: u32 = 12;

macro_rules! address_type {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl $name {
            pub const fn new(addr: u64) -> Self {
                Self(addr)
            }

            pub const fn get(self) -> u64 {
                self.0
            }

            pub const fn page_number(self) -> u64 {
                self.0 >> PAGE_SHIFT
            }

            pub const fn page_offset(self) -> u64 {
                self.0 & (PAGE_SIZE - 1)
            }

            pub const fn page_base(self) -> Self {
                Self(self.0 & !(PAGE_SIZE - 1))
            }

            pub const fn is_page_aligned(self) -> bool {
                self.page_offset() == 0
            }

            pub const fn offset(self, by: u64) -> Self {
                Self(self.0.wrapping_add(by))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:#x})", stringify!($name), self.0)
            }
        }

        impl fmt::LowerHex for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::LowerHex::fmt(&self.0, f)
            }
        }

        impl From<u64> for $name {
            fn from(v: u64) -> Self {
                Self(v)
            }
        }
    };
}

address_type!(PhysAddr, "A physical byte address.");
address_type!(VirtAddr, "A virtual byte address.");
