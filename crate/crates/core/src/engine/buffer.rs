//! Reorganization buffer: the data scratch-pad holding packed column bytes
//! and the metadata scratch-pad tracking which chunks of each cache line
//! have arrived.

use super::EngineError;
use crate::memsim::Picos;

/// One write request from a fetch unit's writer into the data scratch-pad.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpmWrite {
    pub addr: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
struct LineMeta {
    expected: u32,
    arrived: u32,
    bits: Vec<u64>,
    completed_at: Option<Picos>,
}

impl LineMeta {
    fn test(&self, bit: usize) -> bool {
        self.bits[bit / 64] & (1 << (bit % 64)) != 0
    }

    fn set(&mut self, bit: usize) {
        self.bits[bit / 64] |= 1 << (bit % 64);
    }

    fn complete(&self) -> bool {
        self.arrived == self.expected
    }
}

#[derive(Debug, Clone)]
pub struct ReorgBuffer {
    chunk: u64,
    total: u64,
    line: u64,
    data: Vec<u8>,
    meta: Vec<LineMeta>,
    writes: u64,
}

impl ReorgBuffer {
    /// Buffer for `total` packed bytes built from `chunk`-byte chunks.
    pub fn new(chunk: u64, total: u64, line: u64) -> Self {
        let lines = total.div_ceil(line);
        let meta = (0..lines)
            .map(|l| {
                let (first, last) = Self::chunk_span(chunk, total, line, l);
                let expected = (last - first + 1) as u32;
                LineMeta {
                    expected,
                    arrived: 0,
                    bits: vec![0; (expected as usize).div_ceil(64)],
                    completed_at: None,
                }
            })
            .collect();
        Self {
            chunk,
            total,
            line,
            data: vec![0; (lines * line) as usize],
            meta,
            writes: 0,
        }
    }

    /// First and last chunk index intersecting line `l`.
    fn chunk_span(chunk: u64, total: u64, line: u64, l: u64) -> (u64, u64) {
        let lo = l * line;
        let hi = ((l + 1) * line).min(total);
        (lo / chunk, (hi - 1) / chunk)
    }

    pub fn lines(&self) -> u64 {
        self.meta.len() as u64
    }

    pub fn line_size(&self) -> u64 {
        self.line
    }

    /// Size of the ephemeral region: packed bytes rounded up to a whole line.
    pub fn region_bytes(&self) -> u64 {
        self.data.len() as u64
    }

    pub fn packed_bytes(&self) -> u64 {
        self.total
    }

    pub fn expected_chunks(&self, line: u64) -> u32 {
        self.meta[line as usize].expected
    }

    pub fn is_complete(&self, line: u64) -> bool {
        self.meta[line as usize].complete()
    }

    pub fn all_complete(&self) -> bool {
        self.meta.iter().all(LineMeta::complete)
    }

    pub fn completed_at(&self, line: u64) -> Option<Picos> {
        self.meta[line as usize].completed_at
    }

    pub fn line_bytes(&self, line: u64) -> &[u8] {
        let start = (line * self.line) as usize;
        &self.data[start..start + self.line as usize]
    }

    pub fn data(&self) -> &[u8] {
        &self.data[..self.total as usize]
    }

    /// Number of write requests accepted so far.
    pub fn writes(&self) -> u64 {
        self.writes
    }

    /// Commits a window of packed bytes. The window must consist of whole
    /// chunk-within-line pieces. Returns the lines this write completed.
    pub fn commit(&mut self, write: &SpmWrite, now: Picos) -> Result<Vec<u64>, EngineError> {
        let start = write.addr;
        let end = start + write.bytes.len() as u64;
        if write.bytes.is_empty() || end > self.total {
            return Err(EngineError::WriteOutOfBuffer {
                addr: start,
                len: write.bytes.len() as u64,
                capacity: self.total,
            });
        }
        let first_line = start / self.line;
        let last_line = (end - 1) / self.line;

        let mut pieces = Vec::new();
        for l in first_line..=last_line {
            let lo = start.max(l * self.line);
            let hi = end.min((l + 1) * self.line);
            let (first_chunk, _) = Self::chunk_span(self.chunk, self.total, self.line, l);
            for c in lo / self.chunk..=(hi - 1) / self.chunk {
                let piece_lo = (c * self.chunk).max(l * self.line);
                let piece_hi = ((c + 1) * self.chunk).min((l + 1) * self.line).min(self.total);
                if piece_lo < lo || piece_hi > hi {
                    return Err(EngineError::PartialChunk {
                        addr: start,
                        len: write.bytes.len() as u64,
                    });
                }
                let bit = (c - first_chunk) as usize;
                if self.meta[l as usize].test(bit) {
                    return Err(EngineError::DoubleCommit { line: l, chunk: c });
                }
                pieces.push((l, bit));
            }
        }

        self.data[start as usize..end as usize].copy_from_slice(&write.bytes);
        self.writes += 1;
        let mut completed = Vec::new();
        for (l, bit) in pieces {
            let m = &mut self.meta[l as usize];
            m.set(bit);
            m.arrived += 1;
            if m.complete() {
                m.completed_at = Some(now);
                completed.push(l);
            }
        }
        Ok(completed)
    }

    /// Clears every line back to incomplete and zeroes the data.
    pub fn reset(&mut self) {
        self.data.fill(0);
        for m in &mut self.meta {
            m.arrived = 0;
            m.bits.fill(0);
            m.completed_at = None;
        }
        self.writes = 0;
    }

    /// Flips bits of one data byte. Used by fault-injection tests.
    pub fn corrupt(&mut self, offset: u64, mask: u8) {
        self.data[offset as usize] ^= mask;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(addr: u64, len: usize) -> SpmWrite {
        SpmWrite {
            addr,
            bytes: vec![0xAB; len],
        }
    }

    #[test]
    fn sixteen_chunks_complete_a_line() {
        let mut b = ReorgBuffer::new(4, 4 * 64, 64);
        assert_eq!(b.lines(), 4);
        assert_eq!(b.expected_chunks(0), 16);
        for i in 0..15 {
            assert!(b.commit(&write(i * 4, 4), 0).unwrap().is_empty());
        }
        assert!(!b.is_complete(0));
        assert_eq!(b.commit(&write(60, 4), 7).unwrap(), vec![0]);
        assert_eq!(b.completed_at(0), Some(7));
    }

    #[test]
    fn straddling_chunk_sets_both_lines() {
        // C = 6: chunk 10 covers [60, 66)
        let mut b = ReorgBuffer::new(6, 6 * 32, 64);
        assert_eq!(b.expected_chunks(0), 11);
        assert_eq!(b.expected_chunks(1), 12);
        b.commit(&write(60, 6), 0).unwrap();
        assert_eq!(b.meta[0].arrived, 1);
        assert_eq!(b.meta[1].arrived, 1);
    }

    #[test]
    fn packed_write_covering_whole_line() {
        let mut b = ReorgBuffer::new(4, 128, 64);
        assert_eq!(b.commit(&write(0, 64), 0).unwrap(), vec![0]);
        assert_eq!(b.writes(), 1);
    }

    #[test]
    fn double_commit_rejected() {
        let mut b = ReorgBuffer::new(4, 128, 64);
        b.commit(&write(0, 4), 0).unwrap();
        assert_eq!(
            b.commit(&write(0, 4), 0),
            Err(EngineError::DoubleCommit { line: 0, chunk: 0 })
        );
        // a wider write overlapping a committed chunk is rejected without side effects
        assert!(b.commit(&write(0, 8), 0).is_err());
        assert_eq!(b.meta[0].arrived, 1);
    }

    #[test]
    fn partial_chunks_rejected() {
        let mut b = ReorgBuffer::new(4, 128, 64);
        assert!(matches!(
            b.commit(&write(2, 4), 0),
            Err(EngineError::PartialChunk { .. })
        ));
        assert!(matches!(
            b.commit(&write(124, 8), 0),
            Err(EngineError::WriteOutOfBuffer { .. })
        ));
    }

    #[test]
    fn ragged_tail_line_counts_real_chunks_only() {
        // 10 chunks of 4 bytes = 40 bytes in a 64-byte line
        let mut b = ReorgBuffer::new(4, 40, 64);
        assert_eq!(b.lines(), 1);
        assert_eq!(b.expected_chunks(0), 10);
        for i in 0..10 {
            b.commit(&write(i * 4, 4), 0).unwrap();
        }
        assert!(b.is_complete(0));
        assert_eq!(&b.line_bytes(0)[40..], &[0u8; 24]);
    }

    #[test]
    fn reset_clears_everything() {
        let mut b = ReorgBuffer::new(4, 64, 64);
        b.commit(&write(0, 64), 0).unwrap();
        b.reset();
        assert!(!b.is_complete(0));
        assert_eq!(b.line_bytes(0), &[0u8; 64]);
        b.commit(&write(0, 64), 0).unwrap();
    }
}
