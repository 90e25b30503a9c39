//! Event kernel, backing store, and the main-memory timing model.

mod kernel;
mod memory;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kernel::Kernel;
pub use memory::{MainMemory, MemEvent, MemoryRequest, MemoryResponseBeat, MemoryStats, PortId};
pub use store::BackingStore;

/// Simulated time in picoseconds.
pub type Picos = u64;

pub const NS: Picos = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("cannot schedule at {at} ps, clock is already at {now} ps")]
    ScheduleInPast { at: Picos, now: Picos },
    #[error("address {addr:#x} is not aligned to the {bus_width}-byte bus")]
    AddressUnaligned { addr: u64, bus_width: u64 },
    #[error("access [{addr:#x}, +{len}) is outside the {capacity}-byte backing store")]
    OutOfBackingStore { addr: u64, len: u64, capacity: u64 },
    #[error("burst length must be at least one beat")]
    EmptyBurst,
    #[error("backing store full: {requested} bytes requested, {free} free")]
    BackingStoreFull { requested: u64, free: u64 },
}

/// Timing knobs of the memory system and the two clock domains.
///
/// The DRAM numbers are generic DDR4-class placeholders, not measurements;
/// every one of them can be overridden from the config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    /// Request issue to first data beat.
    pub dram_first_beat: Picos,
    /// Spacing of subsequent beats in a burst; also the time one beat
    /// occupies the data bus.
    pub dram_per_beat: Picos,
    /// Cost of one crossing between the CPU and engine clock domains.
    /// Free calibration knob: the hardware this models publishes no figure.
    pub cdc_penalty: Picos,
    /// Requests the memory port keeps in flight; the rest wait in FIFO order.
    pub max_outstanding: usize,
    /// Engine clock period (100 MHz).
    pub pl_cycle: Picos,
    /// CPU clock period (~1.5 GHz).
    pub ps_cycle: Picos,
    /// Delay request issue so bursts never overlap on the shared data bus.
    pub serialize_data_bus: bool,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            dram_first_beat: 40 * NS,
            dram_per_beat: 5 * NS,
            cdc_penalty: 100 * NS,
            max_outstanding: 16,
            pl_cycle: 10 * NS,
            ps_cycle: 667,
            serialize_data_bus: true,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("dram_first_beat", self.dram_first_beat),
            ("dram_per_beat", self.dram_per_beat),
            ("cdc_penalty", self.cdc_penalty),
            ("max_outstanding", self.max_outstanding as u64),
            ("pl_cycle", self.pl_cycle),
            ("ps_cycle", self.ps_cycle),
        ] {
            if v == 0 {
                return Err(format!("timing.{name} must be at least 1"));
            }
        }
        Ok(())
    }
}
