//! Row-major tables, deterministic data generation, the materialized
//! columnar baseline and ephemeral-variable registration.

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{EngineConfig, EngineError, EngineParams, RelationalEngine};
use crate::geometry::{TableGeometry, DEFAULT_MAX_ROW_SIZE};
use crate::memsim::{BackingStore, SimError};
use crate::system::{System, SystemError, EPHEMERAL_BASE};

/// Distinct values of the grouping column in benchmark schemas.
pub const DEFAULT_GROUP_COUNT: u64 = 16;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("unknown field '{0}'")]
    UnknownField(String),
    #[error("fields {0:?} are not adjacent in schema order")]
    NonContiguousFields(Vec<String>),
    #[error("duplicate field name '{0}'")]
    DuplicateField(String),
    #[error("field '{0}' has zero width")]
    ZeroWidth(String),
    #[error("row size {0} exceeds the {DEFAULT_MAX_ROW_SIZE}-byte limit")]
    RowTooLarge(u64),
    #[error("a table needs at least one row and one field")]
    Empty,
    #[error("element index {index} out of bounds for {len} elements")]
    IndexOutOfBounds { index: u64, len: u64 },
    #[error("backing store full: {0}")]
    BackingStoreFull(SimError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("malformed table dump: {0}")]
    BadDump(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Integer,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub name: String,
    pub width: u64,
    pub kind: FieldKind,
    /// Integer values are drawn from `[0, domain)`; `None` uses the full width.
    pub domain: Option<u64>,
}

impl Field {
    pub fn integer(name: &str, width: u64) -> Self {
        Self {
            name: name.into(),
            width,
            kind: FieldKind::Integer,
            domain: None,
        }
    }

    pub fn text(name: &str, width: u64) -> Self {
        Self {
            name: name.into(),
            width,
            kind: FieldKind::Text,
            domain: None,
        }
    }

    pub fn with_domain(mut self, domain: u64) -> Self {
        self.domain = Some(domain);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    fields: Vec<Field>,
    offsets: Vec<u64>,
    row_size: u64,
}

/// Contiguous run of fields resolved against a schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldGroup {
    pub first: usize,
    pub last: usize,
    pub offset: u64,
    pub width: u64,
}

impl Schema {
    pub fn new(fields: Vec<Field>) -> Result<Self, TableError> {
        if fields.is_empty() {
            return Err(TableError::Empty);
        }
        let mut offsets = Vec::with_capacity(fields.len());
        let mut off = 0;
        for (i, f) in fields.iter().enumerate() {
            if f.width == 0 {
                return Err(TableError::ZeroWidth(f.name.clone()));
            }
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(TableError::DuplicateField(f.name.clone()));
            }
            offsets.push(off);
            off += f.width;
        }
        if off > DEFAULT_MAX_ROW_SIZE {
            return Err(TableError::RowTooLarge(off));
        }
        Ok(Self {
            fields,
            offsets,
            row_size: off,
        })
    }

    /// A 104-byte row mixing a key, four text fields and five numeric fields.
    pub fn sample_row() -> Self {
        Self::new(vec![
            Field::integer("key", 8),
            Field::text("text_fld1", 8),
            Field::text("text_fld2", 12),
            Field::text("text_fld3", 20),
            Field::text("text_fld4", 16),
            Field::integer("num_fld1", 8),
            Field::integer("num_fld2", 8),
            Field::integer("num_fld3", 8),
            Field::integer("num_fld4", 8),
            Field::integer("num_fld5", 8),
        ])
        .expect("static schema is valid")
    }

    /// Benchmark relation `S(A1, ..., An)` with identical column widths.
    /// `A2` is the grouping column and takes [`DEFAULT_GROUP_COUNT`] values.
    pub fn uniform(column_width: u64, columns: usize) -> Result<Self, TableError> {
        let fields = (1..=columns)
            .map(|i| {
                let f = Field::integer(&format!("A{i}"), column_width);
                if i == 2 {
                    f.with_domain(DEFAULT_GROUP_COUNT)
                } else {
                    f
                }
            })
            .collect();
        Self::new(fields)
    }

    pub fn row_size(&self) -> u64 {
        self.row_size
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn index_of(&self, name: &str) -> Result<usize, TableError> {
        self.fields
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| TableError::UnknownField(name.into()))
    }

    pub fn offset(&self, idx: usize) -> u64 {
        self.offsets[idx]
    }

    pub fn field(&self, idx: usize) -> &Field {
        &self.fields[idx]
    }

    /// Resolves a list of field names that must be adjacent and in schema order.
    pub fn group(&self, names: &[&str]) -> Result<FieldGroup, TableError> {
        let Some(first_name) = names.first() else {
            return Err(TableError::Empty);
        };
        let first = self.index_of(first_name)?;
        for (k, name) in names.iter().enumerate() {
            let idx = self.index_of(name)?;
            if idx != first + k {
                return Err(TableError::NonContiguousFields(
                    names.iter().map(|s| s.to_string()).collect(),
                ));
            }
        }
        let last = first + names.len() - 1;
        Ok(self.span(first, last))
    }

    /// The group covering fields `first..=last`.
    pub fn span(&self, first: usize, last: usize) -> FieldGroup {
        let offset = self.offsets[first];
        let width = self.offsets[last] + self.fields[last].width - offset;
        FieldGroup {
            first,
            last,
            offset,
            width,
        }
    }
}

/// Little-endian integer value of a field (low eight bytes for wider fields).
pub fn decode_int(bytes: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    let n = bytes.len().min(8);
    buf[..n].copy_from_slice(&bytes[..n]);
    u64::from_le_bytes(buf)
}

/// First eight bytes of the SHA-256 of `bytes`, as an integer.
pub fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Deterministic row-major image of `n` rows of `schema`.
pub fn generate_rows(schema: &Schema, n: u64, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity((schema.row_size() * n) as usize);
    for _ in 0..n {
        for f in schema.fields() {
            match f.kind {
                FieldKind::Integer => {
                    let int_bytes = f.width.min(8) as usize;
                    let v: u64 = match f.domain {
                        Some(d) => rng.gen_range(0..d.max(1)),
                        None if int_bytes == 8 => rng.gen(),
                        None => rng.gen_range(0..1u64 << (8 * int_bytes)),
                    };
                    out.extend_from_slice(&v.to_le_bytes()[..int_bytes]);
                    out.resize(out.len() + (f.width as usize - int_bytes), 0);
                }
                FieldKind::Text => {
                    for _ in 0..f.width {
                        out.push(rng.gen_range(b' '..=b'~'));
                    }
                }
            }
        }
    }
    out
}

/// A table resident in the simulated backing store.
#[derive(Debug, Clone)]
pub struct RowTable {
    pub schema: Schema,
    pub row_count: u64,
    pub base: u64,
    pub seed: u64,
}

impl RowTable {
    pub fn bytes(&self) -> u64 {
        self.schema.row_size() * self.row_count
    }

    pub fn geometry(&self, group: FieldGroup) -> TableGeometry {
        TableGeometry::new(self.schema.row_size(), self.row_count, group.width, group.offset)
    }

    /// Address of field `idx` of row `row`.
    pub fn field_addr(&self, row: u64, idx: usize) -> u64 {
        self.base + row * self.schema.row_size() + self.schema.offset(idx)
    }

    pub fn image<'a>(&self, store: &'a BackingStore) -> &'a [u8] {
        store
            .read(self.base, self.bytes())
            .expect("table lies inside the store")
    }
}

/// Generates `n` rows and writes them into a fresh region of `store`.
pub fn generate_table(
    store: &mut BackingStore,
    schema: Schema,
    n: u64,
    seed: u64,
) -> Result<RowTable, TableError> {
    if n == 0 {
        return Err(TableError::Empty);
    }
    let rows = generate_rows(&schema, n, seed);
    load_table(store, schema, n, seed, &rows)
}

/// Places an existing row image into a fresh region of `store`.
pub fn load_table(
    store: &mut BackingStore,
    schema: Schema,
    n: u64,
    seed: u64,
    rows: &[u8],
) -> Result<RowTable, TableError> {
    let len = schema.row_size() * n;
    assert_eq!(rows.len() as u64, len, "row image length mismatch");
    let base = store.alloc(len, 64).map_err(TableError::BackingStoreFull)?;
    store.write(base, rows).map_err(TableError::BackingStoreFull)?;
    Ok(RowTable {
        schema,
        row_count: n,
        base,
        seed,
    })
}

/// Handle on a projected column group served by the engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EphemeralVar {
    pub fields: Vec<String>,
    pub group: FieldGroup,
    pub geometry: TableGeometry,
    pub table_base: u64,
}

impl EphemeralVar {
    pub fn len(&self) -> u64 {
        self.geometry.row_count
    }

    pub fn is_empty(&self) -> bool {
        self.geometry.row_count == 0
    }

    pub fn element_width(&self) -> u64 {
        self.geometry.column_width
    }

    /// CPU physical address of element `i`.
    pub fn element_addr(&self, i: u64) -> u64 {
        EPHEMERAL_BASE + i * self.geometry.column_width
    }
}

/// Declares an ephemeral variable over adjacent `fields` of `table` and
/// programs the engine with its geometry. No table bytes are copied.
pub fn register_var(
    engine: &mut RelationalEngine,
    params: &EngineParams,
    table: &RowTable,
    fields: &[&str],
) -> Result<EphemeralVar, TableError> {
    let group = table.schema.group(fields)?;
    let geometry = table.geometry(group);
    engine.configure(EngineConfig {
        geometry,
        table_base: table.base,
        params: params.clone(),
    })?;
    Ok(EphemeralVar {
        fields: fields.iter().map(|s| s.to_string()).collect(),
        group,
        geometry,
        table_base: table.base,
    })
}

/// Reads element `index` of `var` through the cache and engine path.
pub fn ephemeral_read(
    sys: &mut System,
    var: &EphemeralVar,
    index: u64,
) -> Result<Vec<u8>, TableError> {
    if index >= var.len() {
        return Err(TableError::IndexOutOfBounds {
            index,
            len: var.len(),
        });
    }
    let w = var.element_width();
    let slot = sys.read(var.element_addr(index), w)?;
    sys.finish()?;
    Ok(sys.values()[slot..slot + w as usize].to_vec())
}

/// A pure column-store copy of a field group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnarCopy {
    pub base: u64,
    pub group: FieldGroup,
    pub rows: u64,
}

impl ColumnarCopy {
    pub fn bytes(&self) -> u64 {
        self.group.width * self.rows
    }
}

/// Writes the packed field group into a fresh store region.
pub fn materialize_columnar(
    store: &mut BackingStore,
    table: &RowTable,
    fields: &[&str],
) -> Result<ColumnarCopy, TableError> {
    let group = table.schema.group(fields)?;
    let packed = crate::geometry::oracle_gather(&table.geometry(group), table.image(store))
        .expect("table image covers the geometry");
    let base = store
        .alloc(packed.len() as u64, 64)
        .map_err(TableError::BackingStoreFull)?;
    store.write(base, &packed).map_err(TableError::BackingStoreFull)?;
    Ok(ColumnarCopy {
        base,
        group,
        rows: table.row_count,
    })
}

const DUMP_MAGIC: &str = "RMETABLE 1";

/// Writes `rows` preceded by a one-line text header describing the schema.
pub fn dump_table(
    out: &mut impl Write,
    schema: &Schema,
    n: u64,
    seed: u64,
    rows: &[u8],
) -> Result<(), TableError> {
    let fields: Vec<String> = schema
        .fields()
        .iter()
        .map(|f| {
            let kind = match f.kind {
                FieldKind::Integer => "int",
                FieldKind::Text => "text",
            };
            match f.domain {
                Some(d) => format!("{}:{}:{}:{}", f.name, f.width, kind, d),
                None => format!("{}:{}:{}", f.name, f.width, kind),
            }
        })
        .collect();
    writeln!(out, "{DUMP_MAGIC} rows={n} seed={seed} fields={}", fields.join(","))?;
    out.write_all(rows)?;
    Ok(())
}

/// Parses a dump written by [`dump_table`]; returns schema, rows, seed and image.
pub fn read_dump(input: &mut impl BufRead) -> Result<(Schema, u64, u64, Vec<u8>), TableError> {
    let bad = |m: &str| TableError::BadDump(m.to_string());
    let mut header = String::new();
    input.read_line(&mut header)?;
    let rest = header
        .trim_end()
        .strip_prefix(DUMP_MAGIC)
        .ok_or_else(|| bad("missing magic"))?;
    let (mut n, mut seed, mut fields) = (None, None, None);
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        match k {
            "rows" => n = Some(v.parse::<u64>().map_err(|_| bad("rows"))?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad("seed"))?),
            "fields" => fields = Some(v.to_string()),
            _ => return Err(bad("unknown header key")),
        }
    }
    let (n, seed, fields) = match (n, seed, fields) {
        (Some(n), Some(s), Some(f)) => (n, s, f),
        _ => return Err(bad("incomplete header")),
    };
    let mut parsed = Vec::new();
    for spec in fields.split(',') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() < 3 {
            return Err(bad("field spec"));
        }
        let width = parts[1].parse().map_err(|_| bad("field width"))?;
        let mut f = match parts[2] {
            "int" => Field::integer(parts[0], width),
            "text" => Field::text(parts[0], width),
            _ => return Err(bad("field kind")),
        };
        if let Some(d) = parts.get(3) {
            f = f.with_domain(d.parse().map_err(|_| bad("field domain"))?);
        }
        parsed.push(f);
    }
    let schema = Schema::new(parsed)?;
    let mut rows = Vec::new();
    input.read_to_end(&mut rows)?;
    if rows.len() as u64 != schema.row_size() * n {
        return Err(bad("row image length does not match header"));
    }
    Ok((schema, n, seed, rows))
}
