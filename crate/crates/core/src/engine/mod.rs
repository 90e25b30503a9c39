//! The relational memory engine: configuration port, trapper, monitor
//! bypass, requestor, fetch units and reorganization buffer.
//!
//! The engine is a passive state machine. It schedules [`EngineEvent`]s and
//! memory requests on the caller's kernel and is advanced by feeding those
//! events (and the memory beats addressed to [`PortId::ENGINE`]) back into
//! [`RelationalEngine::on_event`] and [`RelationalEngine::on_beat`].
//! Completed CPU reads are collected with [`RelationalEngine::take_responses`].

mod buffer;
mod fetch;

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use buffer::{ReorgBuffer, SpmWrite};
pub use fetch::{fetch_strategies, Baseline, FetchStrategy, MemoryParallel, Packed, Packer};

use crate::geometry::{
    descriptor_stream, BusConfig, DescriptorStream, GeometryError, RequestDescriptor,
    TableGeometry,
};
use crate::memsim::{Kernel, MainMemory, MemEvent, MemoryResponseBeat, Picos, PortId, SimError, TimingParams};
use crate::registry::UnknownName;

/// Register offsets of the configuration port.
pub mod regs {
    pub const ROW_SIZE: u32 = 0x00;
    pub const ROW_COUNT: u32 = 0x04;
    pub const COLUMN_WIDTH: u32 = 0x08;
    pub const ROW_OFFSET: u32 = 0x0c;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("engine is not configured")]
    NotConfigured,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    UnknownVariant(#[from] UnknownName),
    #[error("column group of {need} bytes exceeds the {capacity}-byte reorganization buffer")]
    ColumnExceedsBuffer { need: u64, capacity: u64 },
    #[error("cache line of {line} bytes must be a power-of-two multiple of the {bus}-byte bus")]
    BadCacheLine { line: u64, bus: u64 },
    #[error("engine has outstanding work and cannot be reconfigured or reset")]
    ReconfigureWhilePending,
    #[error("address {addr:#x} is outside the {region}-byte ephemeral region")]
    AddressOutOfEphemeralRange { addr: u64, region: u64 },
    #[error("address {addr:#x} is not aligned to a {line}-byte cache line")]
    UnalignedAddress { addr: u64, line: u64 },
    #[error("{limit} CPU transactions already pending")]
    TooManyOutstanding { limit: usize },
    #[error("transaction id {0} is already pending")]
    DuplicateTransaction(u64),
    #[error("unknown configuration register offset {0:#x}")]
    UnknownRegister(u32),
    #[error("chunk {chunk} of line {line} committed twice")]
    DoubleCommit { line: u64, chunk: u64 },
    #[error("write [{addr}, +{len}) splits a chunk")]
    PartialChunk { addr: u64, len: u64 },
    #[error("write [{addr}, +{len}) is outside the {capacity}-byte packed column")]
    WriteOutOfBuffer { addr: u64, len: u64, capacity: u64 },
    #[error(transparent)]
    Memory(#[from] SimError),
}

/// Engine knobs that are independent of the table being projected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineParams {
    /// Name of the fetch strategy (`bsl`, `pck`, `mlp`).
    pub variant: String,
    pub fetch_unit_count: usize,
    pub reorg_capacity: u64,
    pub cache_line: u64,
    pub max_cpu_outstanding: usize,
    /// Engine cycles for the parallel metadata and data lookup.
    pub lookup_cycles: u64,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            variant: "mlp".into(),
            fetch_unit_count: 1,
            reorg_capacity: 2 << 20,
            cache_line: 64,
            max_cpu_outstanding: 16,
            lookup_cycles: 2,
        }
    }
}

/// A complete engine configuration: the knobs plus the table to project.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub geometry: TableGeometry,
    pub table_base: u64,
    pub params: EngineParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpuReadTransaction {
    pub addr: u64,
    pub txn_id: u64,
    pub issue_time: Picos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpuReadResponse {
    pub txn_id: u64,
    pub payload: Vec<u8>,
    pub completion_time: Picos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineEvent {
    Lookup { txn_id: u64 },
    Respond { txn_id: u64 },
    Dispatch,
    Extracted { unit: usize },
    Commit { unit: usize, write: SpmWrite, release: bool },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub hits: u64,
    pub misses: u64,
    pub responses: u64,
    pub dispatches: u64,
    pub requestor_stalls: u64,
    pub spm_writes: u64,
    pub mem_requests: u64,
    pub mem_bytes_requested: u64,
    pub max_unit_outstanding: usize,
    pub max_cpu_pending: usize,
}

#[derive(Debug)]
struct InFlight {
    desc: RequestDescriptor,
    mem_id: u64,
    data: Vec<u8>,
    received: bool,
}

#[derive(Debug)]
struct FetchUnit {
    inflight: VecDeque<InFlight>,
    mem_outstanding: usize,
    extracting: bool,
    packer: Packer,
}

impl FetchUnit {
    fn new(line: u64) -> Self {
        Self {
            inflight: VecDeque::new(),
            mem_outstanding: 0,
            extracting: false,
            packer: Packer::new(line),
        }
    }

    fn can_accept(&self, strategy: &dyn FetchStrategy) -> bool {
        self.inflight.len() < strategy.max_outstanding()
    }

    fn idle(&self) -> bool {
        self.inflight.is_empty() && !self.extracting
    }
}

#[derive(Debug)]
struct Requestor {
    stream: DescriptorStream,
    started: bool,
    tick_pending: bool,
    next_tick_at: Picos,
}

impl Requestor {
    fn exhausted(&self) -> bool {
        self.stream.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingTxn {
    line: u64,
}

#[derive(Debug)]
struct Active {
    config: EngineConfig,
    strategy: Arc<dyn FetchStrategy>,
    buffer: ReorgBuffer,
    requestor: Requestor,
    units: Vec<FetchUnit>,
    pending: HashMap<u64, PendingTxn>,
    waiting: HashMap<u64, VecDeque<u64>>,
    mem_owner: HashMap<u64, usize>,
}

impl Active {
    fn quiescent(&self) -> bool {
        self.pending.is_empty()
            && self.mem_owner.is_empty()
            && self.units.iter().all(FetchUnit::idle)
    }
}

#[derive(Debug)]
pub struct RelationalEngine {
    timing: TimingParams,
    bus: BusConfig,
    registers: [u32; 4],
    active: Option<Active>,
    stats: EngineStats,
    responses: VecDeque<CpuReadResponse>,
}

impl RelationalEngine {
    pub fn new(timing: TimingParams, bus: BusConfig) -> Self {
        Self {
            timing,
            bus,
            registers: [0; 4],
            active: None,
            stats: EngineStats::default(),
            responses: VecDeque::new(),
        }
    }

    pub fn stats(&self) -> &EngineStats {
        &self.stats
    }

    pub fn config(&self) -> Option<&EngineConfig> {
        self.active.as_ref().map(|a| &a.config)
    }

    pub fn variant(&self) -> Option<&'static str> {
        self.active.as_ref().map(|a| a.strategy.name())
    }

    pub fn buffer(&self) -> Option<&ReorgBuffer> {
        self.active.as_ref().map(|a| &a.buffer)
    }

    /// Bytes of the ephemeral address region (packed column rounded up to a line).
    pub fn region_bytes(&self) -> u64 {
        self.active.as_ref().map_or(0, |a| a.buffer.region_bytes())
    }

    pub fn pending_transactions(&self) -> usize {
        self.active.as_ref().map_or(0, |a| a.pending.len())
    }

    pub fn is_quiescent(&self) -> bool {
        self.active.as_ref().is_none_or(Active::quiescent)
    }

    pub fn write_register(&mut self, offset: u32, value: u32) -> Result<(), EngineError> {
        let idx = match offset {
            regs::ROW_SIZE => 0,
            regs::ROW_COUNT => 1,
            regs::COLUMN_WIDTH => 2,
            regs::ROW_OFFSET => 3,
            other => return Err(EngineError::UnknownRegister(other)),
        };
        self.registers[idx] = value;
        Ok(())
    }

    /// Geometry currently held in the configuration registers.
    pub fn register_geometry(&self) -> TableGeometry {
        let [r, n, c, o] = self.registers.map(u64::from);
        TableGeometry::new(r, n, c, o)
    }

    /// Configures from the register file, as a driver would after writing
    /// the four geometry registers.
    pub fn configure_from_registers(
        &mut self,
        table_base: u64,
        params: EngineParams,
    ) -> Result<(), EngineError> {
        self.configure(EngineConfig {
            geometry: self.register_geometry(),
            table_base,
            params,
        })
    }

    pub fn configure(&mut self, cfg: EngineConfig) -> Result<(), EngineError> {
        if !self.is_quiescent() {
            return Err(EngineError::ReconfigureWhilePending);
        }
        let geometry = crate::geometry::validate_geometry(cfg.geometry, self.bus)?;
        let strategy = fetch_strategies().resolve(&cfg.params.variant)?;
        let line = cfg.params.cache_line;
        let bw = self.bus.bus_width;
        if !line.is_power_of_two() || line < bw {
            return Err(EngineError::BadCacheLine { line, bus: bw });
        }
        if geometry.column_bytes() > cfg.params.reorg_capacity {
            return Err(EngineError::ColumnExceedsBuffer {
                need: geometry.column_bytes(),
                capacity: cfg.params.reorg_capacity,
            });
        }
        let units = cfg.params.fetch_unit_count.max(1);
        self.registers = [
            geometry.row_size as u32,
            geometry.row_count as u32,
            geometry.column_width as u32,
            geometry.column_offset as u32,
        ];
        self.active = Some(Active {
            buffer: ReorgBuffer::new(geometry.column_width, geometry.column_bytes(), line),
            requestor: Requestor {
                stream: descriptor_stream(geometry, self.bus)?,
                started: false,
                tick_pending: false,
                next_tick_at: 0,
            },
            units: (0..units).map(|_| FetchUnit::new(line)).collect(),
            pending: HashMap::new(),
            waiting: HashMap::new(),
            mem_owner: HashMap::new(),
            strategy,
            config: EngineConfig { geometry, ..cfg },
        });
        Ok(())
    }

    /// Returns the engine to the configured-but-cold state.
    pub fn reset_cold(&mut self) -> Result<(), EngineError> {
        let Some(a) = self.active.as_mut() else {
            return Ok(());
        };
        if !a.quiescent() {
            return Err(EngineError::ReconfigureWhilePending);
        }
        a.buffer.reset();
        a.requestor = Requestor {
            stream: descriptor_stream(a.config.geometry, self.bus)?,
            started: false,
            tick_pending: false,
            next_tick_at: 0,
        };
        let line = a.config.params.cache_line;
        a.units = (0..a.units.len()).map(|_| FetchUnit::new(line)).collect();
        a.waiting.clear();
        Ok(())
    }

    pub fn take_responses(&mut self) -> impl Iterator<Item = CpuReadResponse> + '_ {
        self.responses.drain(..)
    }

    /// Flips bits of one reorganization-buffer byte.
    pub fn corrupt_buffer(&mut self, offset: u64, mask: u8) {
        if let Some(a) = self.active.as_mut() {
            a.buffer.corrupt(offset, mask);
        }
    }

    /// Starts the descriptor stream without a CPU access (used to warm the buffer).
    pub fn start_streaming<E>(&mut self, kernel: &mut Kernel<E>) -> Result<(), EngineError>
    where
        E: From<EngineEvent>,
    {
        let a = self.active.as_mut().ok_or(EngineError::NotConfigured)?;
        Self::activate(a, kernel);
        Ok(())
    }

    fn activate<E: From<EngineEvent>>(a: &mut Active, kernel: &mut Kernel<E>) {
        if !a.requestor.started {
            a.requestor.started = true;
            a.requestor.tick_pending = true;
            a.requestor.next_tick_at = kernel.now();
            kernel.schedule_in(0, EngineEvent::Dispatch.into());
        }
    }

    /// Trapper entry point for a CPU read of one ephemeral cache line.
    pub fn cpu_read<E>(
        &mut self,
        txn: CpuReadTransaction,
        kernel: &mut Kernel<E>,
    ) -> Result<(), EngineError>
    where
        E: From<EngineEvent>,
    {
        let limit;
        {
            let a = self.active.as_mut().ok_or(EngineError::NotConfigured)?;
            let line = a.config.params.cache_line;
            let region = a.buffer.region_bytes();
            if txn.addr >= region {
                return Err(EngineError::AddressOutOfEphemeralRange {
                    addr: txn.addr,
                    region,
                });
            }
            if !txn.addr.is_multiple_of(line) {
                return Err(EngineError::UnalignedAddress {
                    addr: txn.addr,
                    line,
                });
            }
            limit = a.config.params.max_cpu_outstanding;
            if a.pending.len() >= limit {
                return Err(EngineError::TooManyOutstanding { limit });
            }
            if a.pending.contains_key(&txn.txn_id) {
                return Err(EngineError::DuplicateTransaction(txn.txn_id));
            }
            let lookup = self.timing.cdc_penalty + a.config.params.lookup_cycles * self.timing.pl_cycle;
            kernel
                .schedule(
                    txn.issue_time.max(kernel.now()) + lookup,
                    EngineEvent::Lookup { txn_id: txn.txn_id }.into(),
                )
                .map_err(EngineError::Memory)?;
            a.pending.insert(txn.txn_id, PendingTxn { line: txn.addr / line });
            self.stats.max_cpu_pending = self.stats.max_cpu_pending.max(a.pending.len());
        }
        debug_assert!(self.pending_transactions() <= limit);
        Ok(())
    }

    /// Feeds a memory beat addressed to the engine port.
    pub fn on_beat<E>(
        &mut self,
        beat: MemoryResponseBeat,
        kernel: &mut Kernel<E>,
    ) -> Result<(), EngineError>
    where
        E: From<EngineEvent>,
    {
        let a = self.active.as_mut().ok_or(EngineError::NotConfigured)?;
        let unit_idx = *a
            .mem_owner
            .get(&beat.req_id)
            .expect("engine beat for an unknown request");
        let unit = &mut a.units[unit_idx];
        let entry = unit
            .inflight
            .iter_mut()
            .find(|f| f.mem_id == beat.req_id)
            .expect("beat for a descriptor the unit does not hold");
        entry.data.extend_from_slice(&beat.payload);
        if beat.last {
            entry.received = true;
            unit.mem_outstanding -= 1;
            a.mem_owner.remove(&beat.req_id);
            Self::try_extract(unit, unit_idx, self.timing.pl_cycle, kernel);
        }
        Ok(())
    }

    fn try_extract<E: From<EngineEvent>>(
        unit: &mut FetchUnit,
        idx: usize,
        pl_cycle: Picos,
        kernel: &mut Kernel<E>,
    ) {
        if unit.extracting {
            return;
        }
        if unit.inflight.front().is_some_and(|f| f.received) {
            unit.extracting = true;
            kernel.schedule_in(pl_cycle, EngineEvent::Extracted { unit: idx }.into());
        }
    }

    pub fn on_event<E>(
        &mut self,
        event: EngineEvent,
        kernel: &mut Kernel<E>,
        memory: &mut MainMemory,
    ) -> Result<(), EngineError>
    where
        E: From<EngineEvent> + From<MemEvent>,
    {
        let timing = self.timing;
        let bus = self.bus;
        let a = self.active.as_mut().ok_or(EngineError::NotConfigured)?;
        let stats = &mut self.stats;
        match event {
            EngineEvent::Lookup { txn_id } => {
                let line = a.pending[&txn_id].line;
                if a.buffer.is_complete(line) {
                    stats.hits += 1;
                    kernel.schedule_in(timing.cdc_penalty, EngineEvent::Respond { txn_id }.into());
                } else {
                    stats.misses += 1;
                    a.waiting.entry(line).or_default().push_back(txn_id);
                    Self::activate(a, kernel);
                }
            }
            EngineEvent::Respond { txn_id } => {
                let txn = a.pending.remove(&txn_id).expect("response for unknown txn");
                assert!(
                    a.buffer.is_complete(txn.line),
                    "response for incomplete line {}",
                    txn.line
                );
                stats.responses += 1;
                self.responses.push_back(CpuReadResponse {
                    txn_id,
                    payload: a.buffer.line_bytes(txn.line).to_vec(),
                    completion_time: kernel.now(),
                });
            }
            EngineEvent::Dispatch => {
                a.requestor.tick_pending = false;
                if a.requestor.exhausted() {
                    return Ok(());
                }
                let strategy = a.strategy.clone();
                let Some(u) = a.units.iter().position(|u| u.can_accept(strategy.as_ref())) else {
                    stats.requestor_stalls += 1;
                    return Ok(());
                };
                let desc = a.requestor.stream.next().expect("stream not exhausted");
                let addr = a.config.table_base + desc.read_addr;
                let mem_id = memory.submit(PortId::ENGINE, addr, desc.burst_len, kernel)?;
                stats.dispatches += 1;
                stats.mem_requests += 1;
                stats.mem_bytes_requested += desc.fetched_bytes(&bus);
                a.mem_owner.insert(mem_id, u);
                let unit = &mut a.units[u];
                unit.inflight.push_back(InFlight {
                    desc,
                    mem_id,
                    data: Vec::with_capacity((desc.burst_len * bus.bus_width) as usize),
                    received: false,
                });
                unit.mem_outstanding += 1;
                assert!(unit.mem_outstanding <= strategy.max_outstanding());
                stats.max_unit_outstanding = stats.max_unit_outstanding.max(unit.mem_outstanding);
                if a.requestor.exhausted() {
                    for idx in 0..a.units.len() {
                        Self::drain_if_done(a, idx, timing.pl_cycle, kernel);
                    }
                } else {
                    a.requestor.tick_pending = true;
                    a.requestor.next_tick_at = kernel.now() + timing.pl_cycle;
                    kernel.schedule_in(timing.pl_cycle, EngineEvent::Dispatch.into());
                }
            }
            EngineEvent::Extracted { unit: idx } => {
                let strategy = a.strategy.clone();
                let width = a.config.geometry.column_width as usize;
                let unit = &mut a.units[idx];
                unit.extracting = false;
                let front = unit.inflight.front().expect("extracted without a descriptor");
                let trim = front.desc.lead_trim as usize;
                let chunk = front.data[trim..trim + width].to_vec();
                let write_addr = front.desc.write_addr;
                if strategy.blocks_on_write() {
                    for write in strategy.on_chunk(&mut unit.packer, write_addr, &chunk) {
                        kernel.schedule_in(
                            timing.pl_cycle,
                            EngineEvent::Commit { unit: idx, write, release: true }.into(),
                        );
                    }
                } else {
                    unit.inflight.pop_front();
                    for write in strategy.on_chunk(&mut unit.packer, write_addr, &chunk) {
                        kernel.schedule_in(
                            timing.pl_cycle,
                            EngineEvent::Commit { unit: idx, write, release: false }.into(),
                        );
                    }
                    Self::try_extract(&mut a.units[idx], idx, timing.pl_cycle, kernel);
                    Self::drain_if_done(a, idx, timing.pl_cycle, kernel);
                    Self::poke_requestor(a, kernel);
                }
            }
            EngineEvent::Commit { unit: idx, write, release } => {
                let completed = a.buffer.commit(&write, kernel.now())?;
                stats.spm_writes += 1;
                for line in completed {
                    if let Some(q) = a.waiting.remove(&line) {
                        for txn_id in q {
                            kernel.schedule_in(
                                timing.cdc_penalty,
                                EngineEvent::Respond { txn_id }.into(),
                            );
                        }
                    }
                }
                if release {
                    a.units[idx].inflight.pop_front();
                    Self::try_extract(&mut a.units[idx], idx, timing.pl_cycle, kernel);
                    Self::drain_if_done(a, idx, timing.pl_cycle, kernel);
                    Self::poke_requestor(a, kernel);
                }
            }
        }
        Ok(())
    }

    fn poke_requestor<E: From<EngineEvent>>(a: &mut Active, kernel: &mut Kernel<E>) {
        let r = &mut a.requestor;
        if r.started && !r.tick_pending && !r.exhausted() {
            r.tick_pending = true;
            let at = r.next_tick_at.max(kernel.now());
            kernel
                .schedule(at, EngineEvent::Dispatch.into())
                .expect("tick is never in the past");
        }
    }

    fn drain_if_done<E: From<EngineEvent>>(
        a: &mut Active,
        idx: usize,
        pl_cycle: Picos,
        kernel: &mut Kernel<E>,
    ) {
        if !a.requestor.exhausted() || !a.units[idx].idle() {
            return;
        }
        let strategy = a.strategy.clone();
        if let Some(write) = strategy.on_drain(&mut a.units[idx].packer) {
            kernel.schedule_in(
                pl_cycle,
                EngineEvent::Commit { unit: idx, write, release: false }.into(),
            );
        }
    }
}
