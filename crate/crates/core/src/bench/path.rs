//! Access paths: where a query's loads land.

use std::fmt::Debug;
use std::sync::Arc;

use super::BenchError;
use crate::registry::{Named, Registry};
use crate::system::{System, EPHEMERAL_BASE};
use crate::tables::{materialize_columnar, register_var, RowTable};

/// Address map of the scanned field group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub base: u64,
    pub stride: u64,
    /// Row offset of the first byte stored at `base`.
    pub origin: u64,
}

impl Layout {
    /// Address of the field at row offset `field_offset` of row `row`.
    pub fn addr(&self, row: u64, field_offset: u64) -> u64 {
        self.base + row * self.stride + field_offset - self.origin
    }
}

pub trait AccessPath: Named + Debug + Send + Sync {
    fn uses_engine(&self) -> bool {
        false
    }

    /// Sets up the layout for the adjacent `fields` before timing starts.
    fn prepare(
        &self,
        sys: &mut System,
        table: &RowTable,
        fields: &[&str],
    ) -> Result<Layout, BenchError>;
}

/// Loads straight from the row-major table.
#[derive(Debug, Default)]
pub struct RowDirect;

impl Named for RowDirect {
    fn name(&self) -> &'static str {
        "row"
    }
}

impl AccessPath for RowDirect {
    fn prepare(
        &self,
        _sys: &mut System,
        table: &RowTable,
        fields: &[&str],
    ) -> Result<Layout, BenchError> {
        table.schema.group(fields)?;
        Ok(Layout {
            base: table.base,
            stride: table.schema.row_size(),
            origin: 0,
        })
    }
}

/// Loads from a packed copy of the field group written ahead of time.
#[derive(Debug, Default)]
pub struct Columnar;

impl Named for Columnar {
    fn name(&self) -> &'static str {
        "columnar"
    }
}

impl AccessPath for Columnar {
    fn prepare(
        &self,
        sys: &mut System,
        table: &RowTable,
        fields: &[&str],
    ) -> Result<Layout, BenchError> {
        let copy = materialize_columnar(sys.store_mut(), table, fields)?;
        Ok(Layout {
            base: copy.base,
            stride: copy.group.width,
            origin: copy.group.offset,
        })
    }
}

/// Loads from the engine's ephemeral region.
#[derive(Debug, Default)]
pub struct Ephemeral;

impl Named for Ephemeral {
    fn name(&self) -> &'static str {
        "rme"
    }
}

impl AccessPath for Ephemeral {
    fn uses_engine(&self) -> bool {
        true
    }

    fn prepare(
        &self,
        sys: &mut System,
        table: &RowTable,
        fields: &[&str],
    ) -> Result<Layout, BenchError> {
        let params = sys.config().engine.clone();
        let var = register_var(sys.engine_mut(), &params, table, fields)?;
        Ok(Layout {
            base: EPHEMERAL_BASE,
            stride: var.element_width(),
            origin: var.group.offset,
        })
    }
}

pub fn access_paths() -> Registry<dyn AccessPath> {
    let mut r: Registry<dyn AccessPath> = Registry::new("access path");
    r.register(Arc::new(RowDirect))
        .register(Arc::new(Columnar))
        .register(Arc::new(Ephemeral));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_addresses() {
        let row = Layout { base: 4096, stride: 64, origin: 0 };
        assert_eq!(row.addr(2, 8), 4096 + 128 + 8);
        let packed = Layout { base: 0, stride: 8, origin: 4 };
        assert_eq!(packed.addr(3, 8), 28);
    }

    #[test]
    fn registry_names() {
        assert_eq!(access_paths().names(), vec!["row", "columnar", "rme"]);
        assert!(access_paths().get("RME").unwrap().uses_engine());
    }
}
