//! Table geometry and request-descriptor generation.
//!
//! A table is `row_count` rows of `row_size` bytes laid out back to back.
//! The projected column group is the contiguous byte range
//! `[column_offset, column_offset + column_width)` of every row. For each
//! row the requestor emits one [`RequestDescriptor`] telling a fetch unit
//! which bus-aligned beats to read, how many leading bytes to drop, and
//! where the packed chunk goes in the reorganization buffer.
//!
//! All addresses here are table-relative: byte 0 is the first byte of the
//! table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted row size unless a caller asks for a different limit.
pub const DEFAULT_MAX_ROW_SIZE: u64 = 4096;

/// Default bus width in bytes.
pub const DEFAULT_BUS_WIDTH: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("{field} must be at least 1")]
    ZeroDimension { field: &'static str },
    #[error("column group [{offset}, {end}) does not fit in a {row_size}-byte row", end = offset + width)]
    ColumnOutOfRow {
        offset: u64,
        width: u64,
        row_size: u64,
    },
    #[error("row size {row_size} exceeds the limit of {limit} bytes")]
    RowTooLarge { row_size: u64, limit: u64 },
    #[error("bus width {0} is not a power of two")]
    BusWidthNotPowerOfTwo(u64),
    #[error("row index {index} out of bounds for {row_count} rows")]
    RowIndexOutOfBounds { index: u64, row_count: u64 },
    #[error("base holds {have} bytes but the table needs {need}")]
    BaseTooShort { have: usize, need: u64 },
}

/// The four configuration-port parameters describing a table and the
/// projected column group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableGeometry {
    pub row_size: u64,
    pub row_count: u64,
    pub column_width: u64,
    pub column_offset: u64,
}

impl TableGeometry {
    pub const fn new(row_size: u64, row_count: u64, column_width: u64, column_offset: u64) -> Self {
        Self {
            row_size,
            row_count,
            column_width,
            column_offset,
        }
    }

    /// Total bytes of the packed column group (`C * N`).
    pub fn column_bytes(&self) -> u64 {
        self.column_width * self.row_count
    }

    /// Total bytes of the row-major table (`R * N`).
    pub fn table_bytes(&self) -> u64 {
        self.row_size * self.row_count
    }

    /// Absolute table-relative position where the useful bytes of row `i` start.
    pub fn useful_position(&self, i: u64) -> Result<u64, GeometryError> {
        self.check_row(i)?;
        Ok(self.row_size * i + self.column_offset)
    }

    fn check_row(&self, i: u64) -> Result<(), GeometryError> {
        if i >= self.row_count {
            return Err(GeometryError::RowIndexOutOfBounds {
                index: i,
                row_count: self.row_count,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BusConfig {
    pub bus_width: u64,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            bus_width: DEFAULT_BUS_WIDTH,
        }
    }
}

impl BusConfig {
    pub fn new(bus_width: u64) -> Self {
        Self { bus_width }
    }

    /// Start of the bus beat containing `addr`.
    pub fn align_down(&self, addr: u64) -> u64 {
        addr / self.bus_width * self.bus_width
    }
}

/// One row's worth of work for a fetch unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RequestDescriptor {
    pub row_index: u64,
    /// Bus-aligned table-relative read address.
    pub read_addr: u64,
    /// Number of bus beats to read.
    pub burst_len: u64,
    /// Destination offset in the reorganization buffer.
    pub write_addr: u64,
    /// Leading bytes of the first beat that precede the column.
    pub lead_trim: u64,
    /// `(P_i + C) mod B_w`: where the useful bytes end inside the last beat
    /// (0 means they end exactly on a beat boundary).
    pub end_offset: u64,
}

impl RequestDescriptor {
    /// Bytes the fetch unit receives for this descriptor.
    pub fn fetched_bytes(&self, bus: &BusConfig) -> u64 {
        self.burst_len * bus.bus_width
    }

    /// Bytes to discard at the tail of the burst.
    pub fn trailing_trim(&self, bus: &BusConfig) -> u64 {
        (bus.bus_width - self.end_offset) % bus.bus_width
    }
}

/// Checks a geometry against the default row-size limit.
pub fn validate_geometry(g: TableGeometry, b: BusConfig) -> Result<TableGeometry, GeometryError> {
    validate_geometry_with_limit(g, b, DEFAULT_MAX_ROW_SIZE)
}

pub fn validate_geometry_with_limit(
    g: TableGeometry,
    b: BusConfig,
    max_row_size: u64,
) -> Result<TableGeometry, GeometryError> {
    if b.bus_width == 0 || !b.bus_width.is_power_of_two() {
        return Err(GeometryError::BusWidthNotPowerOfTwo(b.bus_width));
    }
    for (field, value) in [
        ("row_size", g.row_size),
        ("row_count", g.row_count),
        ("column_width", g.column_width),
    ] {
        if value == 0 {
            return Err(GeometryError::ZeroDimension { field });
        }
    }
    if g.row_size > max_row_size {
        return Err(GeometryError::RowTooLarge {
            row_size: g.row_size,
            limit: max_row_size,
        });
    }
    if g.column_offset + g.column_width > g.row_size {
        return Err(GeometryError::ColumnOutOfRow {
            offset: g.column_offset,
            width: g.column_width,
            row_size: g.row_size,
        });
    }
    Ok(g)
}

/// Builds the descriptor for row `i`.
pub fn make_descriptor(
    g: &TableGeometry,
    b: &BusConfig,
    i: u64,
) -> Result<RequestDescriptor, GeometryError> {
    let p = g.useful_position(i)?;
    let bw = b.bus_width;
    let c = g.column_width;
    Ok(RequestDescriptor {
        row_index: i,
        read_addr: (p / bw) * bw,
        burst_len: ((p % bw) + c).div_ceil(bw),
        write_addr: c * i,
        lead_trim: p % bw,
        end_offset: (p + c) % bw,
    })
}

/// Iterator over the descriptors of every row, in row order.
#[derive(Debug, Clone)]
pub struct DescriptorStream {
    geometry: TableGeometry,
    bus: BusConfig,
    next: u64,
}

impl DescriptorStream {
    pub fn position(&self) -> u64 {
        self.next
    }
}

impl Iterator for DescriptorStream {
    type Item = RequestDescriptor;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.geometry.row_count {
            return None;
        }
        let d = make_descriptor(&self.geometry, &self.bus, self.next).ok()?;
        self.next += 1;
        Some(d)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.geometry.row_count - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for DescriptorStream {}

pub fn descriptor_stream(
    g: TableGeometry,
    b: BusConfig,
) -> Result<DescriptorStream, GeometryError> {
    let geometry = validate_geometry(g, b)?;
    Ok(DescriptorStream {
        geometry,
        bus: b,
        next: 0,
    })
}

/// Ground-truth projection: concatenates the column bytes of every row by
/// scanning `base` directly.
pub fn oracle_gather(g: &TableGeometry, base: &[u8]) -> Result<Vec<u8>, GeometryError> {
    let need = g.table_bytes();
    if (base.len() as u64) < need {
        return Err(GeometryError::BaseTooShort {
            have: base.len(),
            need,
        });
    }
    let (r, o, c) = (
        g.row_size as usize,
        g.column_offset as usize,
        g.column_width as usize,
    );
    let mut out = Vec::with_capacity(c * g.row_count as usize);
    for row in base.chunks_exact(r).take(g.row_count as usize) {
        out.extend_from_slice(&row[o..o + c]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const B16: BusConfig = BusConfig { bus_width: 16 };

    #[test]
    fn validation_cases() {
        assert!(validate_geometry(TableGeometry::new(64, 4, 4, 0), B16).is_ok());
        assert!(matches!(
            validate_geometry(TableGeometry::new(64, 4, 4, 61), B16),
            Err(GeometryError::ColumnOutOfRow { .. })
        ));
        assert_eq!(
            validate_geometry(TableGeometry::new(64, 0, 4, 0), B16),
            Err(GeometryError::ZeroDimension { field: "row_count" })
        );
        assert!(matches!(
            validate_geometry(TableGeometry::new(64, 4, 4, 0), BusConfig::new(12)),
            Err(GeometryError::BusWidthNotPowerOfTwo(12))
        ));
        assert!(matches!(
            validate_geometry(TableGeometry::new(8192, 1, 4, 0), B16),
            Err(GeometryError::RowTooLarge { .. })
        ));
        // rows beyond 64 bytes are fine
        assert!(validate_geometry(TableGeometry::new(128, 4, 4, 100), B16).is_ok());
    }

    #[test]
    fn useful_position_examples() {
        assert_eq!(TableGeometry::new(64, 4, 4, 0).useful_position(0), Ok(0));
        assert_eq!(TableGeometry::new(64, 4, 4, 13).useful_position(1), Ok(77));
        assert_eq!(TableGeometry::new(100, 4, 4, 20).useful_position(3), Ok(320));
        assert!(matches!(
            TableGeometry::new(64, 4, 4, 0).useful_position(4),
            Err(GeometryError::RowIndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn descriptor_examples() {
        let g = TableGeometry::new(64, 4, 4, 0);
        assert_eq!(
            make_descriptor(&g, &B16, 0).unwrap(),
            RequestDescriptor {
                row_index: 0,
                read_addr: 0,
                burst_len: 1,
                write_addr: 0,
                lead_trim: 0,
                end_offset: 4
            }
        );
        let g = TableGeometry::new(64, 4, 4, 13);
        assert_eq!(
            make_descriptor(&g, &B16, 1).unwrap(),
            RequestDescriptor {
                row_index: 1,
                read_addr: 64,
                burst_len: 2,
                write_addr: 4,
                lead_trim: 13,
                end_offset: 1
            }
        );
        assert_eq!(make_descriptor(&g, &B16, 1).unwrap().trailing_trim(&B16), 15);
    }

    #[test]
    fn offset_spikes_use_two_beats() {
        let spikes = [13, 14, 15, 29, 30, 31, 45, 46, 47];
        for o in 0..=60 {
            let g = TableGeometry::new(64, 8, 4, o);
            let expected = if spikes.contains(&o) { 2 } else { 1 };
            for d in descriptor_stream(g, B16).unwrap() {
                assert_eq!(d.burst_len, expected, "offset {o} row {}", d.row_index);
            }
        }
    }

    #[test]
    fn stream_examples() {
        let w: Vec<u64> = descriptor_stream(TableGeometry::new(64, 3, 4, 0), B16)
            .unwrap()
            .map(|d| d.write_addr)
            .collect();
        assert_eq!(w, vec![0, 4, 8]);

        let whole: Vec<_> = descriptor_stream(TableGeometry::new(16, 1, 16, 0), B16)
            .unwrap()
            .collect();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].burst_len, 1);
        assert_eq!(whole[0].lead_trim, 0);

        let s = descriptor_stream(TableGeometry::new(64, 32768, 4, 0), B16).unwrap();
        assert_eq!(s.len(), 32768);
        assert_eq!(s.map(|d| d.burst_len).sum::<u64>(), 32768);
    }

    #[test]
    fn gather_examples() {
        let base: Vec<u8> = (0..16).collect();
        assert_eq!(
            oracle_gather(&TableGeometry::new(8, 2, 2, 3), &base).unwrap(),
            vec![3, 4, 11, 12]
        );
        assert_eq!(
            oracle_gather(&TableGeometry::new(8, 2, 8, 0), &base).unwrap(),
            base
        );
        assert_eq!(
            oracle_gather(&TableGeometry::new(16, 1, 5, 7), &base).unwrap(),
            base[7..12].to_vec()
        );
        assert!(matches!(
            oracle_gather(&TableGeometry::new(8, 3, 2, 0), &base),
            Err(GeometryError::BaseTooShort { have: 16, need: 24 })
        ));
    }

    fn geometry_strategy() -> impl Strategy<Value = (TableGeometry, BusConfig)> {
        (1u64..=256, 1u64..=64, 0u32..=6).prop_flat_map(|(r, n, bw_log)| {
            (1u64..=r).prop_flat_map(move |c| {
                (0u64..=r - c).prop_map(move |o| {
                    (TableGeometry::new(r, n, c, o), BusConfig::new(1 << bw_log))
                })
            })
        })
    }

    proptest! {
        #[test]
        fn descriptor_window_matches_useful_bytes((g, b) in geometry_strategy()) {
            let bw = b.bus_width;
            for d in descriptor_stream(g, b).unwrap() {
                let p = g.useful_position(d.row_index).unwrap();
                prop_assert_eq!(d.read_addr % bw, 0);
                prop_assert!(d.lead_trim < bw && d.end_offset < bw);
                prop_assert_eq!(d.read_addr + d.lead_trim, p);
                prop_assert_eq!(d.write_addr, g.column_width * d.row_index);
                prop_assert_eq!(d.end_offset, (d.lead_trim + g.column_width) % bw);
                prop_assert!(d.burst_len >= 1);
                prop_assert!(d.burst_len <= (bw - 1 + g.column_width).div_ceil(bw));
                // brute-force count of beats overlapped by [p, p + C)
                let beats = (p..p + g.column_width)
                    .map(|a| a / bw)
                    .collect::<std::collections::BTreeSet<_>>()
                    .len() as u64;
                prop_assert_eq!(d.burst_len, beats);
                // the useful window ends inside the burst
                prop_assert_eq!(
                    d.read_addr + d.burst_len * bw - d.trailing_trim(&b),
                    p + g.column_width
                );
            }
        }
    }
}
