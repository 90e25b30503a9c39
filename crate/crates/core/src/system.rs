//! The simulated platform: an in-order-issue CPU with a bounded number of
//! outstanding misses, the cache hierarchy, main memory and the engine, all
//! sharing one event timeline.
//!
//! Physical addresses below [`EPHEMERAL_BASE`] go to DRAM. Addresses at or
//! above it fall in the ephemeral region and are trapped by the engine.
//!
//! Loads are issued one per `cpu.cycles_per_load` cycles. A load that misses
//! allocates an MSHR and the CPU keeps issuing; it only stalls when every
//! MSHR is busy. The value of each load is whatever the cache line held when
//! it was filled, so wrong data from a backing path shows up in answers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheConfig, CacheError, CacheHierarchy, CacheStats, L2Outcome, PrefetchOutcome};
use crate::engine::{
    CpuReadResponse, CpuReadTransaction, EngineConfig, EngineError, EngineEvent, EngineParams,
    EngineStats, RelationalEngine,
};
use crate::geometry::BusConfig;
use crate::memsim::{BackingStore, Kernel, MainMemory, MemEvent, MemoryStats, Picos, PortId, SimError, TimingParams};

/// Start of the ephemeral address window in the CPU's physical address space.
pub const EPHEMERAL_BASE: u64 = 1 << 40;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("simulation stalled with {0} misses outstanding and no events left")]
    Deadlock(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpuParams {
    /// Issue cost of one load plus its share of loop overhead, in CPU cycles.
    pub cycles_per_load: u64,
    /// Outstanding L1 misses the core tracks (also bounds prefetches).
    pub mshrs: usize,
}

impl Default for CpuParams {
    fn default() -> Self {
        Self {
            cycles_per_load: 3,
            mshrs: 16,
        }
    }
}

/// Every tunable of one simulation instance.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub timing: TimingParams,
    pub cache: CacheConfig,
    pub engine: EngineParams,
    pub cpu: CpuParams,
    pub bus: BusConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SystemError> {
        self.timing.validate().map_err(SystemError::Config)?;
        self.cache.validate()?;
        if !self.bus.bus_width.is_power_of_two() {
            return Err(SystemError::Config(format!(
                "bus.bus_width {} is not a power of two",
                self.bus.bus_width
            )));
        }
        if self.engine.cache_line != self.cache.line {
            return Err(SystemError::Config(format!(
                "engine.cache_line {} differs from cache.line {}",
                self.engine.cache_line, self.cache.line
            )));
        }
        if !self.cache.line.is_multiple_of(self.bus.bus_width) {
            return Err(SystemError::Config(
                "cache.line must be a multiple of bus.bus_width".into(),
            ));
        }
        if self.cpu.mshrs == 0 || self.cpu.cycles_per_load == 0 {
            return Err(SystemError::Config(
                "cpu.mshrs and cpu.cycles_per_load must be at least 1".into(),
            ));
        }
        if self.engine.max_cpu_outstanding < self.cpu.mshrs {
            return Err(SystemError::Config(format!(
                "engine.max_cpu_outstanding {} is below cpu.mshrs {}",
                self.engine.max_cpu_outstanding, self.cpu.mshrs
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub enum Event {
    Mem(MemEvent),
    Engine(EngineEvent),
}

impl From<MemEvent> for Event {
    fn from(e: MemEvent) -> Self {
        Event::Mem(e)
    }
}

impl From<EngineEvent> for Event {
    fn from(e: EngineEvent) -> Self {
        Event::Engine(e)
    }
}

#[derive(Debug, Clone, Copy)]
struct Waiter {
    slot: usize,
    offset: usize,
    len: usize,
}

#[derive(Debug, Default)]
struct Mshr {
    waiters: Vec<Waiter>,
    prefetch: bool,
    demanded: bool,
}

#[derive(Debug)]
struct LineFill {
    line: u64,
    bytes: Vec<u8>,
}

pub struct System {
    cfg: SimConfig,
    kernel: Kernel<Event>,
    memory: MainMemory,
    engine: RelationalEngine,
    cache: CacheHierarchy,
    cpu_now: Picos,
    data_ready: Picos,
    mshrs: HashMap<u64, Mshr>,
    dram_fills: HashMap<u64, LineFill>,
    engine_fills: HashMap<u64, u64>,
    next_txn: u64,
    values: Vec<u8>,
    raw_responses: Vec<CpuReadResponse>,
}

impl System {
    pub fn new(cfg: SimConfig, store_capacity: u64) -> Result<Self, SystemError> {
        cfg.validate()?;
        Ok(Self {
            kernel: Kernel::new(),
            memory: MainMemory::new(BackingStore::new(store_capacity), cfg.timing, cfg.bus),
            engine: RelationalEngine::new(cfg.timing, cfg.bus),
            cache: CacheHierarchy::new(cfg.cache.clone())?,
            cfg,
            cpu_now: 0,
            data_ready: 0,
            mshrs: HashMap::new(),
            dram_fills: HashMap::new(),
            engine_fills: HashMap::new(),
            next_txn: 0,
            values: Vec::new(),
            raw_responses: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn now(&self) -> Picos {
        self.cpu_now
    }

    pub fn kernel(&self) -> &Kernel<Event> {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut Kernel<Event> {
        &mut self.kernel
    }

    pub fn memory(&self) -> &MainMemory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut MainMemory {
        &mut self.memory
    }

    pub fn store_mut(&mut self) -> &mut BackingStore {
        self.memory.store_mut()
    }

    pub fn engine(&self) -> &RelationalEngine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut RelationalEngine {
        &mut self.engine
    }

    pub fn cache(&self) -> &CacheHierarchy {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut CacheHierarchy {
        &mut self.cache
    }

    pub fn cache_stats(&self) -> CacheStats {
        *self.cache.stats()
    }

    pub fn memory_stats(&self) -> &MemoryStats {
        self.memory.stats()
    }

    pub fn engine_stats(&self) -> EngineStats {
        *self.engine.stats()
    }

    /// Configures the engine with the run's engine parameters.
    pub fn configure_engine(
        &mut self,
        geometry: crate::geometry::TableGeometry,
        table_base: u64,
    ) -> Result<(), SystemError> {
        self.engine.configure(EngineConfig {
            geometry,
            table_base,
            params: self.cfg.engine.clone(),
        })?;
        Ok(())
    }

    /// Values returned by loads issued through [`System::read`].
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn clear_values(&mut self) {
        self.values.clear();
    }

    fn dispatch(&mut self, event: Event) -> Result<(), SystemError> {
        match event {
            Event::Mem(e) => {
                let beat = self.memory.on_event(e, &mut self.kernel);
                if beat.port == PortId::ENGINE {
                    self.engine.on_beat(beat, &mut self.kernel)?;
                } else {
                    let fill = self
                        .dram_fills
                        .get_mut(&beat.req_id)
                        .expect("CPU beat for an unknown fill");
                    fill.bytes.extend_from_slice(&beat.payload);
                    if beat.last {
                        let fill = self.dram_fills.remove(&beat.req_id).expect("present");
                        self.complete_fill(fill.line, &fill.bytes, beat.arrival);
                    }
                }
            }
            Event::Engine(e) => {
                self.engine.on_event(e, &mut self.kernel, &mut self.memory)?;
                let responses: Vec<_> = self.engine.take_responses().collect();
                for r in responses {
                    match self.engine_fills.remove(&r.txn_id) {
                        Some(line) => self.complete_fill(line, &r.payload, r.completion_time),
                        None => self.raw_responses.push(r),
                    }
                }
            }
        }
        Ok(())
    }

    fn complete_fill(&mut self, line: u64, bytes: &[u8], at: Picos) {
        let mshr = self.mshrs.remove(&line).expect("fill without an MSHR");
        self.cache.fill(line, bytes, mshr.prefetch && !mshr.demanded);
        for w in &mshr.waiters {
            self.values[w.slot..w.slot + w.len].copy_from_slice(&bytes[w.offset..w.offset + w.len]);
        }
        if !mshr.waiters.is_empty() {
            self.data_ready = self.data_ready.max(at + self.cfg.cache.l1_hit);
        }
    }

    fn step(&mut self) -> Result<bool, SystemError> {
        match self.kernel.pop() {
            Some((_, e)) => {
                self.dispatch(e)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Fires every event up to `t` and moves the clock there.
    pub fn advance_to(&mut self, t: Picos) -> Result<(), SystemError> {
        while let Some((_, e)) = self.kernel.pop_until(t) {
            self.dispatch(e)?;
        }
        self.kernel.advance_clock(t);
        Ok(())
    }

    /// Runs until no events remain and returns the final time.
    pub fn run_until_idle(&mut self) -> Result<Picos, SystemError> {
        while self.step()? {}
        self.cpu_now = self.cpu_now.max(self.kernel.now());
        Ok(self.kernel.now())
    }

    fn line_fetchable(&self, line: u64) -> bool {
        let addr = line * self.cfg.cache.line;
        if addr >= EPHEMERAL_BASE {
            addr - EPHEMERAL_BASE < self.engine.region_bytes()
        } else {
            addr + self.cfg.cache.line <= self.memory.store().capacity()
        }
    }

    fn fetch_line(&mut self, line: u64) -> Result<(), SystemError> {
        let addr = line * self.cfg.cache.line;
        if addr >= EPHEMERAL_BASE {
            let txn_id = self.next_txn;
            self.next_txn += 1;
            self.engine.cpu_read(
                CpuReadTransaction {
                    addr: addr - EPHEMERAL_BASE,
                    txn_id,
                    issue_time: self.kernel.now(),
                },
                &mut self.kernel,
            )?;
            self.engine_fills.insert(txn_id, line);
        } else {
            let beats = self.cfg.cache.line / self.cfg.bus.bus_width;
            let id = self.memory.submit(PortId::CPU, addr, beats, &mut self.kernel)?;
            self.dram_fills.insert(
                id,
                LineFill {
                    line,
                    bytes: Vec::with_capacity(self.cfg.cache.line as usize),
                },
            );
        }
        Ok(())
    }

    fn wait_for_free_mshr(&mut self) -> Result<(), SystemError> {
        while self.mshrs.len() >= self.cfg.cpu.mshrs {
            if !self.step()? {
                return Err(SystemError::Deadlock(self.mshrs.len()));
            }
        }
        self.cpu_now = self.cpu_now.max(self.kernel.now());
        Ok(())
    }

    /// Issues a CPU load of `size` bytes at `addr`, splitting it at line
    /// boundaries. Returns the offset of its bytes in [`System::values`];
    /// they are valid after [`System::finish`].
    pub fn read(&mut self, addr: u64, size: u64) -> Result<usize, SystemError> {
        self.cpu_now += self.cfg.cpu.cycles_per_load * self.cfg.timing.ps_cycle;
        let slot = self.values.len();
        self.values.resize(slot + size as usize, 0);
        let line = self.cfg.cache.line;
        let mut a = addr;
        let end = addr + size;
        while a < end {
            let part = (end - a).min(line - a % line);
            self.load_part(a, part, slot + (a - addr) as usize)?;
            a += part;
        }
        Ok(slot)
    }

    fn load_part(&mut self, addr: u64, len: u64, slot: usize) -> Result<(), SystemError> {
        self.advance_to(self.cpu_now)?;
        let line = self.cache.check_access(addr, len)?;
        let offset = (addr % self.cfg.cache.line) as usize;
        let waiter = Waiter {
            slot,
            offset,
            len: len as usize,
        };

        if self.cache.demand_l1(addr, len)? {
            self.copy_from_l1(addr, len, slot);
            self.data_ready = self.data_ready.max(self.cpu_now + self.cfg.cache.l1_hit);
            return Ok(());
        }
        if let Some(m) = self.mshrs.get_mut(&line) {
            if m.prefetch && !m.demanded {
                self.cache.note_prefetch_useful();
            }
            m.demanded = true;
            m.waiters.push(waiter);
            return Ok(());
        }

        match self.cache.demand_l2(line) {
            L2Outcome::Hit => {
                self.copy_from_l1(addr, len, slot);
                self.data_ready = self.data_ready.max(self.cpu_now + self.cfg.cache.l2_hit);
            }
            L2Outcome::Miss => {
                self.wait_for_free_mshr()?;
                self.advance_to(self.cpu_now)?;
                // the stall may have let an in-flight fill or prefetch land
                if self.cache.in_l1(line) {
                    self.copy_from_l1(addr, len, slot);
                    self.data_ready = self.data_ready.max(self.cpu_now + self.cfg.cache.l1_hit);
                } else if let Some(m) = self.mshrs.get_mut(&line) {
                    m.demanded = true;
                    m.waiters.push(waiter);
                } else {
                    self.mshrs.insert(
                        line,
                        Mshr {
                            waiters: vec![waiter],
                            prefetch: false,
                            demanded: true,
                        },
                    );
                    self.fetch_line(line)?;
                }
            }
        }

        if self.cfg.cache.prefetch_next_line {
            let next = line + 1;
            if self.line_fetchable(next) {
                let in_flight = self.mshrs.contains_key(&next);
                if self.cache.prefetch(next, in_flight) == PrefetchOutcome::NeedsFetch
                    && self.mshrs.len() < self.cfg.cpu.mshrs
                {
                    self.mshrs.insert(
                        next,
                        Mshr {
                            prefetch: true,
                            ..Mshr::default()
                        },
                    );
                    self.fetch_line(next)?;
                }
            }
        }
        Ok(())
    }

    fn copy_from_l1(&mut self, addr: u64, len: u64, slot: usize) {
        let bytes = self.cache.read_l1(addr, len).expect("line resident in L1");
        self.values[slot..slot + len as usize].copy_from_slice(bytes);
    }

    /// Waits for every outstanding load and returns the time at which the
    /// last loaded value became available to the core.
    pub fn finish(&mut self) -> Result<Picos, SystemError> {
        while self.mshrs.values().any(|m| !m.waiters.is_empty()) {
            if !self.step()? {
                return Err(SystemError::Deadlock(self.mshrs.len()));
            }
        }
        self.cpu_now = self.cpu_now.max(self.data_ready);
        Ok(self.cpu_now)
    }

    /// Sends a raw read transaction straight to the engine's trapper,
    /// bypassing the caches. `addr` is relative to the ephemeral region.
    pub fn engine_read(&mut self, addr: u64, txn_id: u64, at: Picos) -> Result<(), SystemError> {
        self.advance_to(at.max(self.kernel.now()))?;
        self.engine.cpu_read(
            CpuReadTransaction {
                addr,
                txn_id,
                issue_time: self.kernel.now(),
            },
            &mut self.kernel,
        )?;
        Ok(())
    }

    /// Fires events one at a time until a raw engine response is available.
    pub fn step_until_raw_response(&mut self) -> Result<bool, SystemError> {
        while self.raw_responses.is_empty() {
            if !self.step()? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn take_raw_responses(&mut self) -> Vec<CpuReadResponse> {
        std::mem::take(&mut self.raw_responses)
    }

    /// Runs the whole descriptor stream so the reorganization buffer is hot,
    /// then leaves the clock at the end of that warm-up.
    pub fn warm_engine(&mut self) -> Result<Picos, SystemError> {
        self.advance_to(self.cpu_now)?;
        self.engine.start_streaming(&mut self.kernel)?;
        self.run_until_idle()
    }

    /// Invalidates the caches and zeroes their statistics.
    pub fn flush_caches(&mut self) {
        self.cache.flush(true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TableGeometry;

    fn system(cfg: SimConfig) -> System {
        let mut s = System::new(cfg, 1 << 16).unwrap();
        let bytes: Vec<u8> = (0..1u32 << 16).map(|i| (i * 7 % 251) as u8).collect();
        s.store_mut().write(0, &bytes).unwrap();
        s
    }

    #[test]
    fn direct_read_returns_store_bytes() {
        let mut s = system(SimConfig::default());
        let a = s.read(100, 4).unwrap();
        let b = s.read(62, 4).unwrap(); // split across lines
        s.finish().unwrap();
        let store = s.memory().store().read(0, 200).unwrap().to_vec();
        assert_eq!(&s.values()[a..a + 4], &store[100..104]);
        assert_eq!(&s.values()[b..b + 4], &store[62..66]);
        assert!(s.cache().audit_inclusion());
    }

    #[test]
    fn single_miss_latency() {
        let mut cfg = SimConfig::default();
        cfg.cache.prefetch_next_line = false;
        let mut s = system(cfg);
        s.read(0, 4).unwrap();
        let end = s.finish().unwrap();
        // issue (3 cycles) + 40 ns + 3 beats + L1 hit
        assert_eq!(end, 3 * 667 + 55_000 + 2_000);
    }

    #[test]
    fn ephemeral_read_goes_through_engine() {
        let mut s = system(SimConfig::default());
        let g = TableGeometry::new(64, 64, 4, 8);
        s.configure_engine(g, 0).unwrap();
        let mut slots = vec![];
        for i in 0..64 {
            slots.push(s.read(EPHEMERAL_BASE + i * 4, 4).unwrap());
        }
        s.finish().unwrap();
        let table = s.memory().store().read(0, 64 * 64).unwrap().to_vec();
        let expected = crate::geometry::oracle_gather(&g, &table).unwrap();
        for (i, slot) in slots.iter().enumerate() {
            assert_eq!(&s.values()[*slot..slot + 4], &expected[i * 4..i * 4 + 4]);
        }
        assert_eq!(s.cache_stats().l2_misses, 4);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::default();
        cfg.engine.cache_line = 128;
        assert!(System::new(cfg, 1024).is_err());
    }
}
