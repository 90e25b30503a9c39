//! Two-level inclusive cache (L1D + unified L2) with LRU replacement and an
//! optional next-line L1 prefetcher.
//!
//! Lines carry data so that values seen by the simulated CPU are whatever
//! the backing path actually delivered. Miss handling (MSHRs, timing of
//! fills) belongs to the caller; this module only answers "where is the
//! line" and keeps the statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memsim::Picos;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("access [{addr:#x}, +{size}) straddles a {line}-byte line")]
    StraddlingAccess { addr: u64, size: u64, line: u64 },
    #[error("{0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub l1_size: u64,
    pub l1_assoc: u64,
    pub l2_size: u64,
    pub l2_assoc: u64,
    pub line: u64,
    pub prefetch_next_line: bool,
    pub l1_hit: Picos,
    pub l2_hit: Picos,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            l1_size: 32 << 10,
            l1_assoc: 4,
            l2_size: 1 << 20,
            l2_assoc: 16,
            line: 64,
            prefetch_next_line: true,
            l1_hit: 2_000,
            l2_hit: 10_000,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), CacheError> {
        if !self.line.is_power_of_two() {
            return Err(CacheError::BadConfig(format!(
                "cache.line {} is not a power of two",
                self.line
            )));
        }
        for (name, size, assoc) in [
            ("l1", self.l1_size, self.l1_assoc),
            ("l2", self.l2_size, self.l2_assoc),
        ] {
            if assoc == 0 || size == 0 || size % (assoc * self.line) != 0 {
                return Err(CacheError::BadConfig(format!(
                    "cache.{name}_size {size} is not divisible by {name}_assoc * line"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub l1_requests: u64,
    pub l1_misses: u64,
    pub l2_requests: u64,
    pub l2_misses: u64,
    pub prefetch_issued: u64,
    pub prefetch_useful: u64,
}

#[derive(Debug, Clone)]
struct CacheLevel {
    sets: u64,
    assoc: usize,
    line: usize,
    tags: Vec<Option<u64>>,
    stamp: Vec<u64>,
    prefetched: Vec<bool>,
    data: Vec<u8>,
    clock: u64,
}

impl CacheLevel {
    fn new(size: u64, assoc: u64, line: u64) -> Self {
        let ways = (size / line) as usize;
        Self {
            sets: size / (assoc * line),
            assoc: assoc as usize,
            line: line as usize,
            tags: vec![None; ways],
            stamp: vec![0; ways],
            prefetched: vec![false; ways],
            data: vec![0; size as usize],
            clock: 0,
        }
    }

    fn set_range(&self, line_no: u64) -> std::ops::Range<usize> {
        let s = (line_no % self.sets) as usize * self.assoc;
        s..s + self.assoc
    }

    fn find(&self, line_no: u64) -> Option<usize> {
        self.set_range(line_no)
            .find(|&w| self.tags[w] == Some(line_no))
    }

    fn touch(&mut self, way: usize) {
        self.clock += 1;
        self.stamp[way] = self.clock;
    }

    /// Installs a line, returning the evicted line number if any.
    fn install(&mut self, line_no: u64, bytes: &[u8], prefetched: bool) -> Option<u64> {
        let (way, evicted) = match self.find(line_no) {
            Some(w) => (w, None),
            None => {
                let range = self.set_range(line_no);
                let way = range
                    .clone()
                    .find(|&w| self.tags[w].is_none())
                    .unwrap_or_else(|| range.min_by_key(|&w| self.stamp[w]).expect("assoc >= 1"));
                (way, self.tags[way])
            }
        };
        self.tags[way] = Some(line_no);
        self.prefetched[way] = prefetched;
        self.data[way * self.line..(way + 1) * self.line].copy_from_slice(bytes);
        self.touch(way);
        evicted
    }

    fn invalidate(&mut self, line_no: u64) {
        if let Some(w) = self.find(line_no) {
            self.tags[w] = None;
            self.prefetched[w] = false;
        }
    }

    fn bytes(&self, way: usize) -> &[u8] {
        &self.data[way * self.line..(way + 1) * self.line]
    }

    fn clear(&mut self) {
        self.tags.fill(None);
        self.prefetched.fill(false);
    }

    fn valid_lines(&self) -> impl Iterator<Item = u64> + '_ {
        self.tags.iter().flatten().copied()
    }
}

/// Outcome of a demand access that missed L1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum L2Outcome {
    Hit,
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefetchOutcome {
    /// Target already present in L1 or in flight; nothing issued.
    Skipped,
    /// Served by L2 and copied into L1.
    FromL2,
    /// Missed L2; the caller must fetch and [`CacheHierarchy::fill`] it.
    NeedsFetch,
}

#[derive(Debug, Clone)]
pub struct CacheHierarchy {
    cfg: CacheConfig,
    l1: CacheLevel,
    l2: CacheLevel,
    stats: CacheStats,
}

impl CacheHierarchy {
    pub fn new(cfg: CacheConfig) -> Result<Self, CacheError> {
        cfg.validate()?;
        Ok(Self {
            l1: CacheLevel::new(cfg.l1_size, cfg.l1_assoc, cfg.line),
            l2: CacheLevel::new(cfg.l2_size, cfg.l2_assoc, cfg.line),
            cfg,
            stats: CacheStats::default(),
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr / self.cfg.line
    }

    pub fn check_access(&self, addr: u64, size: u64) -> Result<u64, CacheError> {
        let line = self.line_of(addr);
        if size == 0 || size > self.cfg.line || self.line_of(addr + size - 1) != line {
            return Err(CacheError::StraddlingAccess {
                addr,
                size,
                line: self.cfg.line,
            });
        }
        Ok(line)
    }

    pub fn in_l1(&self, line_no: u64) -> bool {
        self.l1.find(line_no).is_some()
    }

    pub fn in_l2(&self, line_no: u64) -> bool {
        self.l2.find(line_no).is_some()
    }

    /// Counts a demand request and probes L1. On a hit the line's LRU
    /// position is refreshed.
    pub fn demand_l1(&mut self, addr: u64, size: u64) -> Result<bool, CacheError> {
        let line = self.check_access(addr, size)?;
        self.stats.l1_requests += 1;
        match self.l1.find(line) {
            Some(w) => {
                self.l1.touch(w);
                if std::mem::take(&mut self.l1.prefetched[w]) {
                    self.stats.prefetch_useful += 1;
                }
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Records that a demand access merged into a prefetch already in flight.
    pub fn note_prefetch_useful(&mut self) {
        self.stats.prefetch_useful += 1;
    }

    /// Handles an L1 demand miss: counts it and probes L2. An L2 hit is
    /// copied into L1 immediately.
    pub fn demand_l2(&mut self, line_no: u64) -> L2Outcome {
        self.stats.l1_misses += 1;
        self.stats.l2_requests += 1;
        match self.l2.find(line_no) {
            Some(w) => {
                self.l2.touch(w);
                let bytes = self.l2.bytes(w).to_vec();
                self.l1.install(line_no, &bytes, false);
                L2Outcome::Hit
            }
            None => {
                self.stats.l2_misses += 1;
                L2Outcome::Miss
            }
        }
    }

    /// Next-line prefetch of `line_no` triggered by an L1 demand miss.
    /// `in_flight` tells whether a fetch for the line is already outstanding.
    pub fn prefetch(&mut self, line_no: u64, in_flight: bool) -> PrefetchOutcome {
        if in_flight || self.l1.find(line_no).is_some() {
            return PrefetchOutcome::Skipped;
        }
        self.stats.prefetch_issued += 1;
        self.stats.l2_requests += 1;
        match self.l2.find(line_no) {
            Some(w) => {
                self.l2.touch(w);
                let bytes = self.l2.bytes(w).to_vec();
                self.l1.install(line_no, &bytes, true);
                PrefetchOutcome::FromL2
            }
            None => {
                self.stats.l2_misses += 1;
                PrefetchOutcome::NeedsFetch
            }
        }
    }

    /// Installs a line returned by the backing path into both levels.
    pub fn fill(&mut self, line_no: u64, bytes: &[u8], prefetched: bool) {
        if let Some(victim) = self.l2.install(line_no, bytes, false) {
            self.l1.invalidate(victim);
        }
        self.l1.install(line_no, bytes, prefetched);
    }

    /// Reads bytes of a line that is resident in L1.
    pub fn read_l1(&self, addr: u64, size: u64) -> Option<&[u8]> {
        let line = self.line_of(addr);
        let w = self.l1.find(line)?;
        let off = (addr % self.cfg.line) as usize;
        Some(&self.l1.bytes(w)[off..off + size as usize])
    }

    /// Invalidates every line; optionally zeroes the statistics.
    pub fn flush(&mut self, zero_stats: bool) {
        self.l1.clear();
        self.l2.clear();
        if zero_stats {
            self.stats = CacheStats::default();
        }
    }

    pub fn reset_stats(&mut self) {
        self.stats = CacheStats::default();
    }

    /// True when every line valid in L1 is also valid in L2.
    pub fn audit_inclusion(&self) -> bool {
        self.l1.valid_lines().all(|l| self.l2.find(l).is_some())
    }

    /// Blocking access against a backing fetch function that returns the
    /// line's ready time and bytes. Prefetches are installed immediately.
    /// Returns the completion time and the requested bytes.
    pub fn access(
        &mut self,
        addr: u64,
        size: u64,
        now: Picos,
        mut fetch: impl FnMut(u64, Picos) -> (Picos, Vec<u8>),
    ) -> Result<(Picos, Vec<u8>), CacheError> {
        let line = self.check_access(addr, size)?;
        let done = if self.demand_l1(addr, size)? {
            now + self.cfg.l1_hit
        } else {
            let done = match self.demand_l2(line) {
                L2Outcome::Hit => now + self.cfg.l2_hit,
                L2Outcome::Miss => {
                    let (ready, bytes) = fetch(line * self.cfg.line, now);
                    self.fill(line, &bytes, false);
                    ready
                }
            };
            if self.cfg.prefetch_next_line
                && self.prefetch(line + 1, false) == PrefetchOutcome::NeedsFetch
            {
                let (_, bytes) = fetch((line + 1) * self.cfg.line, now);
                self.fill(line + 1, &bytes, true);
            }
            done
        };
        let bytes = self.read_l1(addr, size).expect("line resident after access").to_vec();
        Ok((done, bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dram(addr: u64, now: Picos) -> (Picos, Vec<u8>) {
        (now + 55_000, vec![(addr / 64) as u8; 64])
    }

    fn cache(prefetch: bool) -> CacheHierarchy {
        CacheHierarchy::new(CacheConfig {
            prefetch_next_line: prefetch,
            ..CacheConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn second_access_hits_l1() {
        let mut c = cache(false);
        let (t, b) = c.access(128, 4, 0, dram).unwrap();
        assert_eq!(t, 55_000);
        assert_eq!(b, vec![2; 4]);
        let (t, _) = c.access(132, 4, 100, dram).unwrap();
        assert_eq!(t, 100 + 2_000);
        assert_eq!(c.stats().l1_misses, 1);
    }

    #[test]
    fn straddling_rejected() {
        let mut c = cache(false);
        assert!(matches!(
            c.access(62, 4, 0, dram),
            Err(CacheError::StraddlingAccess { .. })
        ));
    }

    #[test]
    fn sequential_scan_mostly_hits() {
        let mut c = cache(false);
        for a in (0..64 * 1024).step_by(4) {
            c.access(a, 4, 0, dram).unwrap();
        }
        let s = c.stats();
        assert_eq!(s.l1_requests, 16 * 1024);
        assert!((s.l1_requests - s.l1_misses) * 16 >= s.l1_requests * 15);
    }

    #[test]
    fn stride_scan_beyond_l2_misses_everything() {
        let mut c = cache(false);
        let bytes = 2u64 << 20;
        for a in (0..bytes).step_by(64) {
            c.access(a, 4, 0, dram).unwrap();
        }
        assert_eq!(c.stats().l2_misses, bytes / 64);
        assert_eq!(c.stats().l1_misses, bytes / 64);
        assert!(c.audit_inclusion());
    }

    #[test]
    fn compulsory_misses_match_line_count() {
        for b in [1u64, 63, 64, 65, 1000, 4096] {
            let mut c = cache(false);
            for a in 0..b {
                c.access(a, 1, 0, dram).unwrap();
            }
            assert_eq!(c.stats().l2_misses, b.div_ceil(64), "B = {b}");
        }
    }

    #[test]
    fn prefetch_halves_demand_misses_and_keeps_accounting() {
        let scan = |prefetch| {
            let mut c = cache(prefetch);
            for a in (0..256 * 64).step_by(8) {
                c.access(a, 8, 0, dram).unwrap();
            }
            *c.stats()
        };
        let off = scan(false);
        let on = scan(true);
        assert!(on.l1_misses <= off.l1_misses);
        assert_eq!(on.l1_misses, 128);
        assert_eq!(on.prefetch_issued, 128);
        assert_eq!(on.prefetch_useful, 128);
        for s in [off, on] {
            assert_eq!(s.l2_requests, s.l1_misses + s.prefetch_issued);
            assert!(s.l1_misses <= s.l1_requests && s.l2_misses <= s.l2_requests);
        }
    }

    #[test]
    fn flush_semantics() {
        let mut c = cache(false);
        c.access(0, 4, 0, dram).unwrap();
        c.flush(false);
        c.flush(false);
        assert_eq!(c.stats().l1_requests, 1);
        c.access(0, 4, 0, dram).unwrap();
        assert_eq!(c.stats().l1_misses, 2);
        c.flush(true);
        assert_eq!(*c.stats(), CacheStats::default());
    }

    #[test]
    fn l2_eviction_back_invalidates_l1() {
        let mut c = CacheHierarchy::new(CacheConfig {
            l1_size: 256,
            l1_assoc: 4,
            l2_size: 256,
            l2_assoc: 1,
            prefetch_next_line: false,
            ..CacheConfig::default()
        })
        .unwrap();
        c.access(0, 4, 0, dram).unwrap();
        // same L2 set (4 sets, direct mapped)
        c.access(256, 4, 0, dram).unwrap();
        assert!(!c.in_l1(0));
        assert!(c.audit_inclusion());
    }

    #[test]
    fn bad_config_rejected() {
        assert!(CacheHierarchy::new(CacheConfig {
            l1_size: 1000,
            ..CacheConfig::default()
        })
        .is_err());
    }
}
