use std::collections::BTreeMap;

use super::addr::{PhysAddr, PAGE_SIZE};
use crate::error::VmemError;

/// Byte-addressable physical memory.
///
/// Frames are allocated lazily, so an 8 GB machine only costs what is
/// actually written. Unwritten bytes read as zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhysicalMemory {
    size: u64,
    frames: BTreeMap<u64, Box<[u8]>>,
    planted: Vec<(PhysAddr, usize)>,
}

impl PhysicalMemory {
    pub fn new(size: u64) -> Result<Self, VmemError> {
        if size == 0 || !size.is_multiple_of(PAGE_SIZE) {
            return Err(VmemError::Config(format!(
                "physical memory size {size:#x} must be a non-zero multiple of {PAGE_SIZE}"
            )));
        }
        Ok(Self { size, frames: BTreeMap::new(), planted: Vec::new() })
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    fn check(&self, pa: PhysAddr, len: usize) -> Result<(), VmemError> {
        let end = pa.get().checked_add(len as u64);
        match end {
            Some(end) if end <= self.size => Ok(()),
            _ => Err(VmemError::OutOfBounds { addr: pa.get(), len, size: self.size }),
        }
    }

    pub fn read_phys(&self, pa: PhysAddr, len: usize) -> Result<Vec<u8>, VmemError> {
        self.check(pa, len)?;
        let mut out = vec![0u8; len];
        self.read_into(pa, &mut out);
        Ok(out)
    }

    pub(crate) fn read_into(&self, pa: PhysAddr, out: &mut [u8]) {
        let mut addr = pa.get();
        let mut done = 0;
        while done < out.len() {
            let frame = addr / PAGE_SIZE;
            let off = (addr % PAGE_SIZE) as usize;
            let n = (PAGE_SIZE as usize - off).min(out.len() - done);
            match self.frames.get(&frame) {
                Some(data) => out[done..done + n].copy_from_slice(&data[off..off + n]),
                None => out[done..done + n].fill(0),
            }
            done += n;
            addr += n as u64;
        }
    }

    pub fn read_byte(&self, pa: PhysAddr) -> Result<u8, VmemError> {
        self.check(pa, 1)?;
        let frame = pa.get() / PAGE_SIZE;
        Ok(self.frames.get(&frame).map_or(0, |d| d[pa.page_offset() as usize]))
    }

    pub fn write_phys(&mut self, pa: PhysAddr, bytes: &[u8]) -> Result<(), VmemError> {
        self.check(pa, bytes.len())?;
        let mut addr = pa.get();
        let mut done = 0;
        while done < bytes.len() {
            let frame = addr / PAGE_SIZE;
            let off = (addr % PAGE_SIZE) as usize;
            let n = (PAGE_SIZE as usize - off).min(bytes.len() - done);
            let data = self.frames.entry(frame).or_insert_with(|| vec![0u8; PAGE_SIZE as usize].into_boxed_slice());
            data[off..off + n].copy_from_slice(&bytes[done..done + n]);
            done += n;
            addr += n as u64;
        }
        Ok(())
    }

    /// Writes `bytes` and remembers the range as ground truth for tests and reports.
    pub fn plant(&mut self, pa: PhysAddr, bytes: &[u8]) -> Result<(), VmemError> {
        self.write_phys(pa, bytes)?;
        self.planted.push((pa, bytes.len()));
        Ok(())
    }

    pub fn planted(&self) -> &[(PhysAddr, usize)] {
        &self.planted
    }

    /// Number of frames that have backing storage.
    pub fn resident_frames(&self) -> usize {
        self.frames.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_single_byte() {
        let mut mem = PhysicalMemory::new(16 * PAGE_SIZE).unwrap();
        mem.write_phys(PhysAddr(0x1000), &[0x54]).unwrap();
        assert_eq!(mem.read_phys(PhysAddr(0x1000), 1).unwrap(), vec![0x54]);
    }

    #[test]
    fn read_past_end_is_bounds_error() {
        let mem = PhysicalMemory::new(2 * PAGE_SIZE).unwrap();
        assert!(matches!(mem.read_phys(PhysAddr(2 * PAGE_SIZE - 1), 2), Err(VmemError::OutOfBounds { .. })));
        assert!(mem.read_phys(PhysAddr(u64::MAX), 1).is_err());
        assert!(mem.read_byte(PhysAddr(2 * PAGE_SIZE)).is_err());
    }

    #[test]
    fn zero_size_rejected() {
        assert!(matches!(PhysicalMemory::new(0), Err(VmemError::Config(_))));
        assert!(PhysicalMemory::new(100).is_err());
    }

    #[test]
    fn writes_span_frames_and_stay_sparse() {
        let mut mem = PhysicalMemory::new(8 << 30).unwrap();
        let data: Vec<u8> = (0..6000u32).map(|i| (i % 251) as u8).collect();
        mem.write_phys(PhysAddr(3 << 30), &data).unwrap();
        assert_eq!(mem.read_phys(PhysAddr(3 << 30), data.len()).unwrap(), data);
        assert_eq!(mem.resident_frames(), 2);
        assert_eq!(mem.read_byte(PhysAddr(5 << 30)).unwrap(), 0);
    }
}
