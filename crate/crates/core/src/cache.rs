//! Line-granular data cache: the timing substrate for Flush+Reload.
//!
//! Membership of a physical line in the cached set is the only thing that
//! decides hit vs. miss latency. Accessing a line never pulls in any other
//! line, so there is no prefetching across lines, let alone pages.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CacheError;
use crate::vmem::{PhysAddr, PAGE_SIZE};

pub const LINE_SIZE: u64 = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct CacheConfig {
    pub hit_latency: u64,
    pub miss_latency: u64,
    /// Latencies strictly below this count as hits.
    pub threshold: u64,
    /// Probability that a reported latency flips to the other class.
    pub noise: f64,
    /// `None` means unbounded; otherwise LRU eviction at this many lines.
    pub capacity: Option<usize>,
    pub seed: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { hit_latency: 50, miss_latency: 300, threshold: 150, noise: 0.0, capacity: None, seed: 0 }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        if self.hit_latency >= self.threshold {
            return Err(CacheError::Config {
                key: "cache.threshold",
                reason: format!("hit latency {} must be below threshold {}", self.hit_latency, self.threshold),
            });
        }
        if self.threshold > self.miss_latency {
            return Err(CacheError::Config {
                key: "cache.threshold",
                reason: format!("threshold {} exceeds miss latency {}", self.threshold, self.miss_latency),
            });
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(CacheError::Config { key: "cache.noise", reason: format!("{} not in [0, 1]", self.noise) });
        }
        if self.capacity == Some(0) {
            return Err(CacheError::Config { key: "cache.capacity", reason: "must be positive".into() });
        }
        debug_assert_eq!(PAGE_SIZE % LINE_SIZE, 0);
        Ok(())
    }

    pub fn is_hit(&self, latency: u64) -> bool {
        latency < self.threshold
    }
}

#[derive(Clone, Debug)]
pub struct CacheState {
    config: CacheConfig,
    // line number -> last-use tick (ticks only matter with a capacity)
    lines: HashMap<u64, u64>,
    tick: u64,
    rng: ChaCha8Rng,
}

impl CacheState {
    pub fn new(config: CacheConfig) -> Result<Self, CacheError> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { config, lines: HashMap::new(), tick: 0, rng })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    fn line_of(pa: PhysAddr) -> u64 {
        pa.get() / LINE_SIZE
    }

    /// Loads the line of `pa`, returning the observed latency.
    pub fn access(&mut self, pa: PhysAddr) -> u64 {
        let line = Self::line_of(pa);
        self.tick += 1;
        let hit = self.lines.insert(line, self.tick).is_some();
        if let Some(cap) = self.config.capacity {
            if self.lines.len() > cap {
                let victim = self.lines.iter().filter(|(l, _)| **l != line).min_by_key(|(_, t)| **t).map(|(l, _)| *l);
                if let Some(v) = victim {
                    self.lines.remove(&v);
                }
            }
        }
        let flip = self.config.noise > 0.0 && self.rng.gen_bool(self.config.noise);
        match (hit, flip) {
            (true, false) | (false, true) => self.config.hit_latency,
            _ => self.config.miss_latency,
        }
    }

    pub fn flush(&mut self, pa: PhysAddr) {
        self.lines.remove(&Self::line_of(pa));
    }

    /// White-box hook for tests and the harness; the attack never uses it.
    pub fn is_cached(&self, pa: PhysAddr) -> bool {
        self.lines.contains_key(&Self::line_of(pa))
    }

    /// Latency `access` would report right now, without touching any state.
    pub fn peek_latency(&self, pa: PhysAddr) -> u64 {
        if self.is_cached(pa) {
            self.config.hit_latency
        } else {
            self.config.miss_latency
        }
    }

    pub fn cached_lines(&self) -> usize {
        self.lines.len()
    }

    /// Sorted cached line numbers, for comparing states.
    pub fn snapshot(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.lines.keys().copied().collect();
        v.sort_unstable();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cache() -> CacheState {
        CacheState::new(CacheConfig::default()).unwrap()
    }

    #[test]
    fn miss_then_hit() {
        let mut c = cache();
        let cfg = c.config().clone();
        assert_eq!(c.access(PhysAddr(0x4000)), cfg.miss_latency);
        assert_eq!(c.access(PhysAddr(0x4000)), cfg.hit_latency);
        assert_eq!(c.access(PhysAddr(0x4020)), cfg.hit_latency, "same line");
    }

    #[test]
    fn default_latencies() {
        let mut c = cache();
        c.access(PhysAddr(0x4000));
        assert!(c.is_cached(PhysAddr(0x4000)));
        assert_eq!(c.config().hit_latency, 50);
        assert_eq!(c.access(PhysAddr(0x4000)), 50);
    }

    #[test]
    fn no_prefetch_into_next_page() {
        let mut c = cache();
        c.access(PhysAddr(0x4000));
        assert!(!c.is_cached(PhysAddr(0x5000)));
        assert!(!c.is_cached(PhysAddr(0x4040)));
    }

    #[test]
    fn flush_semantics() {
        let mut c = cache();
        c.access(PhysAddr(0x4000));
        c.access(PhysAddr(0x8000));
        c.flush(PhysAddr(0x4000));
        assert!(!c.is_cached(PhysAddr(0x4000)));
        assert!(c.is_cached(PhysAddr(0x8000)));
        c.flush(PhysAddr(0x1_0000));
        assert_eq!(c.cached_lines(), 1);
    }

    #[test]
    fn config_ordering_enforced() {
        let bad = CacheConfig { threshold: 40, ..CacheConfig::default() };
        assert!(CacheState::new(bad).is_err());
        let bad = CacheConfig { threshold: 400, ..CacheConfig::default() };
        assert!(CacheState::new(bad).is_err());
        let bad = CacheConfig { noise: 1.5, ..CacheConfig::default() };
        assert!(CacheState::new(bad).is_err());
    }

    #[test]
    fn lru_capacity_evicts_oldest() {
        let mut c = CacheState::new(CacheConfig { capacity: Some(2), ..CacheConfig::default() }).unwrap();
        c.access(PhysAddr(0));
        c.access(PhysAddr(64));
        c.access(PhysAddr(0));
        c.access(PhysAddr(128));
        assert!(c.is_cached(PhysAddr(0)));
        assert!(!c.is_cached(PhysAddr(64)));
        assert!(c.is_cached(PhysAddr(128)));
    }

    #[test]
    fn probe_pages_are_disjoint() {
        let mut c = cache();
        for p in 0..256u64 {
            c.access(PhysAddr(0x10_0000 + p * PAGE_SIZE));
            for q in 0..256u64 {
                let cached = c.is_cached(PhysAddr(0x10_0000 + q * PAGE_SIZE));
                assert_eq!(cached, q <= p);
            }
        }
    }

    #[derive(Clone, Debug)]
    enum Op {
        Access(u64),
        Flush(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![(0u64..32).prop_map(Op::Access), (0u64..32).prop_map(Op::Flush)]
    }

    proptest! {
        #[test]
        fn reload_latency_reflects_prior_membership(ops in proptest::collection::vec(op(), 0..200)) {
            let mut c = cache();
            let threshold = c.config().threshold;
            for op in ops {
                match op {
                    Op::Access(l) => {
                        let pa = PhysAddr(l * LINE_SIZE);
                        let was = c.is_cached(pa);
                        let lat = c.access(pa);
                        prop_assert_eq!(lat < threshold, was);
                        prop_assert!(c.is_cached(pa));
                    }
                    Op::Flush(l) => {
                        let pa = PhysAddr(l * LINE_SIZE);
                        c.flush(pa);
                        prop_assert!(!c.is_cached(pa));
                        prop_assert!(c.access(pa) >= threshold);
                        c.flush(pa);
                    }
                }
            }
        }
    }
}
