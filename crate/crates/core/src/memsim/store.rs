use super::SimError;

/// Zero-initialized byte-addressable backing store with a bump allocator
/// for carving out table regions.
#[derive(Debug, Clone)]
pub struct BackingStore {
    bytes: Vec<u8>,
    next_free: u64,
}

impl BackingStore {
    pub fn new(capacity: u64) -> Self {
        Self {
            bytes: vec![0; capacity as usize],
            next_free: 0,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.bytes.len() as u64
    }

    fn range(&self, addr: u64, len: u64) -> Result<std::ops::Range<usize>, SimError> {
        let end = addr.checked_add(len).ok_or(SimError::OutOfBackingStore {
            addr,
            len,
            capacity: self.capacity(),
        })?;
        if end > self.capacity() {
            return Err(SimError::OutOfBackingStore {
                addr,
                len,
                capacity: self.capacity(),
            });
        }
        Ok(addr as usize..end as usize)
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Result<(), SimError> {
        let r = self.range(addr, data.len() as u64)?;
        self.bytes[r].copy_from_slice(data);
        Ok(())
    }

    pub fn read(&self, addr: u64, len: u64) -> Result<&[u8], SimError> {
        let r = self.range(addr, len)?;
        Ok(&self.bytes[r])
    }

    /// Reserves `len` bytes aligned to `align` and returns the start address.
    pub fn alloc(&mut self, len: u64, align: u64) -> Result<u64, SimError> {
        let align = align.max(1);
        let start = self.next_free.div_ceil(align) * align;
        let end = start + len;
        if end > self.capacity() {
            return Err(SimError::BackingStoreFull {
                requested: len,
                free: self.capacity().saturating_sub(start),
            });
        }
        self.next_free = end;
        Ok(start)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}
