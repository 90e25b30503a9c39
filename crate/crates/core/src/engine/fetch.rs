//! Fetch-unit strategies. Each engine revision differs only in how many
//! descriptors a unit keeps in flight and how its writer reaches the data
//! scratch-pad.

use std::fmt::Debug;
use std::sync::Arc;

use super::buffer::SpmWrite;
use crate::registry::{Named, Registry};

pub trait FetchStrategy: Named + Debug + Send + Sync {
    /// Descriptors one fetch unit may hold between dispatch and write.
    fn max_outstanding(&self) -> usize;

    /// Whether the unit stays busy until its scratch-pad write retires.
    fn blocks_on_write(&self) -> bool;

    /// Routes an extracted chunk to the writer and returns the scratch-pad
    /// writes it triggers.
    fn on_chunk(&self, packer: &mut Packer, write_addr: u64, bytes: &[u8]) -> Vec<SpmWrite>;

    /// Called once the unit has nothing left to do for the current stream.
    fn on_drain(&self, packer: &mut Packer) -> Option<SpmWrite> {
        packer.flush()
    }
}

/// Baseline: one descriptor at a time, one scratch-pad write per chunk.
#[derive(Debug, Default)]
pub struct Baseline;

impl Named for Baseline {
    fn name(&self) -> &'static str {
        "bsl"
    }
}

impl FetchStrategy for Baseline {
    fn max_outstanding(&self) -> usize {
        1
    }

    fn blocks_on_write(&self) -> bool {
        true
    }

    fn on_chunk(&self, _packer: &mut Packer, write_addr: u64, bytes: &[u8]) -> Vec<SpmWrite> {
        vec![SpmWrite {
            addr: write_addr,
            bytes: bytes.to_vec(),
        }]
    }
}

/// Packer: chunks accumulate in a line-sized register that is written out
/// once full.
#[derive(Debug, Default)]
pub struct Packed;

impl Named for Packed {
    fn name(&self) -> &'static str {
        "pck"
    }
}

impl FetchStrategy for Packed {
    fn max_outstanding(&self) -> usize {
        1
    }

    fn blocks_on_write(&self) -> bool {
        false
    }

    fn on_chunk(&self, packer: &mut Packer, write_addr: u64, bytes: &[u8]) -> Vec<SpmWrite> {
        packer.push(write_addr, bytes)
    }
}

/// Packer plus up to 16 independent outstanding memory reads per unit.
#[derive(Debug)]
pub struct MemoryParallel {
    pub outstanding: usize,
}

impl Default for MemoryParallel {
    fn default() -> Self {
        Self { outstanding: 16 }
    }
}

impl Named for MemoryParallel {
    fn name(&self) -> &'static str {
        "mlp"
    }
}

impl FetchStrategy for MemoryParallel {
    fn max_outstanding(&self) -> usize {
        self.outstanding
    }

    fn blocks_on_write(&self) -> bool {
        false
    }

    fn on_chunk(&self, packer: &mut Packer, write_addr: u64, bytes: &[u8]) -> Vec<SpmWrite> {
        packer.push(write_addr, bytes)
    }
}

/// The built-in engine revisions, in progression order.
pub fn fetch_strategies() -> Registry<dyn FetchStrategy> {
    let mut r: Registry<dyn FetchStrategy> = Registry::new("engine variant");
    r.register(Arc::new(Baseline))
        .register(Arc::new(Packed))
        .register(Arc::new(MemoryParallel::default()));
    r
}

/// Line-sized staging register. Holds a contiguous run of packed bytes
/// that never crosses a cache-line boundary.
#[derive(Debug, Clone)]
pub struct Packer {
    line: u64,
    start: u64,
    bytes: Vec<u8>,
}

impl Packer {
    pub fn new(line: u64) -> Self {
        Self {
            line,
            start: 0,
            bytes: Vec::with_capacity(line as usize),
        }
    }

    pub fn fill(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Appends a chunk. Emits a write whenever the register reaches the end
    /// of its line, or when the chunk is not contiguous with what is held.
    pub fn push(&mut self, mut addr: u64, mut data: &[u8]) -> Vec<SpmWrite> {
        let mut out = Vec::new();
        while !data.is_empty() {
            if !self.bytes.is_empty() && self.start + self.bytes.len() as u64 != addr {
                out.extend(self.flush());
            }
            if self.bytes.is_empty() {
                self.start = addr;
            }
            let line_end = (addr / self.line + 1) * self.line;
            let take = data.len().min((line_end - addr) as usize);
            self.bytes.extend_from_slice(&data[..take]);
            addr += take as u64;
            data = &data[take..];
            if addr == line_end {
                out.extend(self.flush());
            }
        }
        out
    }

    pub fn flush(&mut self) -> Option<SpmWrite> {
        if self.bytes.is_empty() {
            return None;
        }
        let bytes = std::mem::replace(&mut self.bytes, Vec::with_capacity(self.line as usize));
        Some(SpmWrite {
            addr: self.start,
            bytes,
        })
    }
}
