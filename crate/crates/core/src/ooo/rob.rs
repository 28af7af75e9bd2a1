use std::collections::VecDeque;

use crate::isa::{FaultKind, Microop, Reg};
use crate::machine::Span;
use crate::vmem::PhysAddr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RobStatus {
    /// Dispatched; operands not (or never) available.
    Waiting,
    Executed,
    Faulted,
}

/// Side effect applied when an entry retires.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Commit {
    None,
    Reg(Reg, u64),
    Store(Vec<Span>, u64),
    Flush(PhysAddr),
    TxBegin,
    TxEnd,
}

#[derive(Clone, Debug)]
pub struct RobEntry {
    pub uop: Microop,
    pub status: RobStatus,
    pub value: Option<u64>,
    pub fault: Option<FaultKind>,
    /// Dispatch sequence number; retirement follows it strictly.
    pub seq: u64,
    pub(crate) commit: Commit,
}

/// Reorder buffer: entries enter in program order and leave from the head.
#[derive(Debug, Default)]
pub struct Rob {
    entries: VecDeque<RobEntry>,
    next_seq: u64,
    retired_seq: Option<u64>,
    high_water: usize,
}

impl Rob {
    pub fn dispatch(&mut self, uop: Microop) -> usize {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push_back(RobEntry {
            uop,
            status: RobStatus::Waiting,
            value: None,
            fault: None,
            seq,
            commit: Commit::None,
        });
        self.high_water = self.high_water.max(self.entries.len());
        self.entries.len() - 1
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut RobEntry {
        &mut self.entries[slot]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head(&self) -> Option<&RobEntry> {
        self.entries.front()
    }

    /// Retires the head entry. It must have executed without a fault.
    pub(crate) fn retire(&mut self) -> Option<RobEntry> {
        let head = self.entries.front()?;
        assert_eq!(head.status, RobStatus::Executed, "retiring an entry that has not executed cleanly");
        let e = self.entries.pop_front()?;
        if let Some(prev) = self.retired_seq {
            assert!(e.seq > prev, "out-of-order retirement");
        }
        self.retired_seq = Some(e.seq);
        Some(e)
    }

    /// Discards every entry; returns how many were dropped.
    pub fn squash(&mut self) -> usize {
        let n = self.entries.len();
        self.entries.clear();
        n
    }

    pub fn high_water(&self) -> usize {
        self.high_water
    }
}
