//! A deterministic out-of-order core with a permission-checking MMU and a
//! timing-accurate cache, and the Meltdown attack run against it.

pub mod attack;
pub mod cache;
pub mod error;
pub mod harness;
pub mod isa;
pub mod machine;
pub mod ooo;
pub mod vmem;

pub use error::{AttackError, CacheError, DecodeError, ExecError, HarnessError, ProgramError, VmemError};
pub use machine::{CheckMode, CpuConfig, MachineConfig, MachineState};
