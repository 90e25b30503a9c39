use std::collections::{BTreeMap, HashMap, VecDeque};

use super::{BackingStore, Kernel, Picos, SimError, TimingParams};
use crate::geometry::BusConfig;

/// Identifies which agent issued a memory request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortId(pub u8);

impl PortId {
    pub const CPU: PortId = PortId(0);
    pub const ENGINE: PortId = PortId(1);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryRequest {
    pub req_id: u64,
    pub port: PortId,
    pub addr: u64,
    pub burst_len: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryResponseBeat {
    pub req_id: u64,
    pub port: PortId,
    pub beat_index: u64,
    pub last: bool,
    pub payload: Vec<u8>,
    pub arrival: Picos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemEvent {
    Beat { req_id: u64, beat_index: u64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PortStats {
    pub requests: u64,
    pub beats: u64,
    pub bytes_requested: u64,
    pub bytes_delivered: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryStats {
    pub ports: BTreeMap<PortId, PortStats>,
    pub max_in_flight: usize,
}

impl MemoryStats {
    pub fn port(&self, port: PortId) -> PortStats {
        self.ports.get(&port).copied().unwrap_or_default()
    }

    pub fn total_bytes_requested(&self) -> u64 {
        self.ports.values().map(|p| p.bytes_requested).sum()
    }
}

#[derive(Debug)]
struct InFlight {
    req: MemoryRequest,
    delivered: u64,
}

/// Flat-latency DRAM behind a port with a bounded number of outstanding
/// requests. No banks or row buffers.
#[derive(Debug)]
pub struct MainMemory {
    store: BackingStore,
    timing: TimingParams,
    bus: BusConfig,
    next_id: u64,
    in_flight: HashMap<u64, InFlight>,
    queue: VecDeque<MemoryRequest>,
    bus_free_at: Picos,
    stats: MemoryStats,
}

impl MainMemory {
    pub fn new(store: BackingStore, timing: TimingParams, bus: BusConfig) -> Self {
        Self {
            store,
            timing,
            bus,
            next_id: 0,
            in_flight: HashMap::new(),
            queue: VecDeque::new(),
            bus_free_at: 0,
            stats: MemoryStats::default(),
        }
    }

    pub fn store(&self) -> &BackingStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut BackingStore {
        &mut self.store
    }

    pub fn store_write(&mut self, addr: u64, bytes: &[u8]) -> Result<(), SimError> {
        self.store.write(addr, bytes)
    }

    pub fn store_read(&self, addr: u64, len: u64) -> Result<&[u8], SimError> {
        self.store.read(addr, len)
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn bus(&self) -> &BusConfig {
        &self.bus
    }

    pub fn stats(&self) -> &MemoryStats {
        &self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn is_quiescent(&self) -> bool {
        self.in_flight.is_empty() && self.queue.is_empty()
    }

    /// Queues a burst read and returns its request id. The request is
    /// issued immediately if the port has a free slot.
    pub fn submit<E: From<MemEvent>>(
        &mut self,
        port: PortId,
        addr: u64,
        burst_len: u64,
        kernel: &mut Kernel<E>,
    ) -> Result<u64, SimError> {
        let bw = self.bus.bus_width;
        if burst_len == 0 {
            return Err(SimError::EmptyBurst);
        }
        if !addr.is_multiple_of(bw) {
            return Err(SimError::AddressUnaligned { addr, bus_width: bw });
        }
        let len = burst_len * bw;
        if addr.checked_add(len).is_none_or(|end| end > self.store.capacity()) {
            return Err(SimError::OutOfBackingStore {
                addr,
                len,
                capacity: self.store.capacity(),
            });
        }
        let req_id = self.next_id;
        self.next_id += 1;
        let ps = self.stats.ports.entry(port).or_default();
        ps.requests += 1;
        ps.bytes_requested += len;
        self.queue.push_back(MemoryRequest {
            req_id,
            port,
            addr,
            burst_len,
        });
        self.pump(kernel);
        Ok(req_id)
    }

    fn pump<E: From<MemEvent>>(&mut self, kernel: &mut Kernel<E>) {
        let t = self.timing;
        while self.in_flight.len() < t.max_outstanding {
            let Some(req) = self.queue.pop_front() else {
                break;
            };
            let now = kernel.now();
            let issue = if t.serialize_data_bus {
                now.max(self.bus_free_at.saturating_sub(t.dram_first_beat))
            } else {
                now
            };
            for k in 0..req.burst_len {
                kernel.schedule_in(
                    issue - now + t.dram_first_beat + k * t.dram_per_beat,
                    MemEvent::Beat {
                        req_id: req.req_id,
                        beat_index: k,
                    }
                    .into(),
                );
            }
            self.bus_free_at = issue + t.dram_first_beat + req.burst_len * t.dram_per_beat;
            self.in_flight.insert(req.req_id, InFlight { req, delivered: 0 });
            self.stats.max_in_flight = self.stats.max_in_flight.max(self.in_flight.len());
            assert!(self.in_flight.len() <= t.max_outstanding);
        }
    }

    /// Handles a memory event and returns the beat it delivers.
    pub fn on_event<E: From<MemEvent>>(
        &mut self,
        event: MemEvent,
        kernel: &mut Kernel<E>,
    ) -> MemoryResponseBeat {
        let MemEvent::Beat { req_id, beat_index } = event;
        let bw = self.bus.bus_width;
        let entry = self
            .in_flight
            .get_mut(&req_id)
            .expect("beat for a request that is not in flight");
        assert_eq!(entry.delivered, beat_index, "beats must arrive in order");
        entry.delivered += 1;
        let req = entry.req;
        let last = entry.delivered == req.burst_len;
        let payload = self
            .store
            .read(req.addr + beat_index * bw, bw)
            .expect("range checked at submit")
            .to_vec();
        let ps = self.stats.ports.entry(req.port).or_default();
        ps.beats += 1;
        ps.bytes_delivered += bw;
        if last {
            self.in_flight.remove(&req_id);
            self.pump(kernel);
        }
        MemoryResponseBeat {
            req_id,
            port: req.port,
            beat_index,
            last,
            payload,
            arrival: kernel.now(),
        }
    }
}
