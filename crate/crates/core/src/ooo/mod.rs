//! Out-of-order execution engine with in-order retirement.
//!
//! Instructions are decoded into µops and dispatched into a reorder buffer.
//! A µop that faults is only acted on when it reaches the head of the buffer;
//! until then younger µops keep executing on whatever values they can get.
//! Their register and memory results are squashed at retirement, but every
//! cache line they touched stays cached.

mod engine;
mod rob;

pub use engine::{Engine, ExecutionTrace, WindowModel};
pub use rob::{Rob, RobEntry, RobStatus};
