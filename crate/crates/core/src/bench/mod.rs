//! Benchmark queries Q1..Q7 over the relation `S(A1, ..., An)`, executed on
//! the direct row path, a materialized column copy, or the engine's
//! ephemeral column group.

mod answer;
mod path;
mod query;
pub mod reference;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use answer::QueryAnswer;
pub use path::{access_paths, AccessPath, Columnar, Ephemeral, Layout, RowDirect};
pub use query::{queries, FieldRef, Load, Query, Scan};

use crate::cache::CacheStats;
use crate::engine::EngineStats;
use crate::memsim::{Picos, PortId};
use crate::registry::UnknownName;
use crate::system::{SimConfig, System, SystemError};
use crate::tables::{self, Field, Schema, TableError, DEFAULT_GROUP_COUNT};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("query needs field '{0}' which the schema does not have")]
    FieldMissing(String),
    #[error("query {0} needs a selection constant")]
    MissingConstant(&'static str),
    #[error("engine is not configured for the ephemeral path")]
    EngineNotConfigured,
    #[error("bad workload: {0}")]
    BadWorkload(String),
    #[error(transparent)]
    Unknown(#[from] UnknownName),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Bytes of extracted column the default cardinality aims for.
pub const DEFAULT_COLUMN_BYTES: u64 = 128 * 1024;

/// Shape of the benchmark relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub row_size: u64,
    pub column_width: u64,
    /// Byte offset of `A1` inside the row; bytes before it are padding.
    pub offset: u64,
    pub rows: u64,
    pub seed: u64,
}

impl WorkloadSpec {
    /// Cardinality defaults to `DEFAULT_COLUMN_BYTES / column_width`.
    pub fn new(row_size: u64, column_width: u64, offset: u64) -> Self {
        Self {
            row_size,
            column_width,
            offset,
            rows: DEFAULT_COLUMN_BYTES / column_width.max(1),
            seed: 0,
        }
    }

    pub fn with_rows(mut self, rows: u64) -> Self {
        self.rows = rows;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Leading padding, as many `C`-byte columns `A1..Am` as fit, then trailing
/// padding up to the row size.
pub fn bench_schema(row_size: u64, column_width: u64, offset: u64) -> Result<Schema, BenchError> {
    if column_width == 0 || offset + column_width > row_size {
        return Err(BenchError::BadWorkload(format!(
            "no {column_width}-byte column fits at offset {offset} of a {row_size}-byte row"
        )));
    }
    let mut fields = Vec::new();
    if offset > 0 {
        fields.push(Field::text("pad_lead", offset));
    }
    let m = (row_size - offset) / column_width;
    for i in 1..=m {
        let f = Field::integer(&format!("A{i}"), column_width);
        fields.push(if i == 2 {
            f.with_domain(DEFAULT_GROUP_COUNT)
        } else {
            f
        });
    }
    let tail = row_size - offset - m * column_width;
    if tail > 0 {
        fields.push(Field::text("pad_tail", tail));
    }
    Ok(Schema::new(fields)?)
}

/// Little-endian unsigned value of up to 16 bytes.
pub fn le_value(bytes: &[u8]) -> u128 {
    let mut buf = [0u8; 16];
    let n = bytes.len().min(16);
    buf[..n].copy_from_slice(&bytes[..n]);
    u128::from_le_bytes(buf)
}

/// A generated relation. The row image is shared so that many simulations
/// can load it cheaply.
#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: WorkloadSpec,
    pub schema: Schema,
    image: Arc<Vec<u8>>,
}

impl Workload {
    pub fn generate(spec: WorkloadSpec) -> Result<Self, BenchError> {
        let schema = bench_schema(spec.row_size, spec.column_width, spec.offset)?;
        if spec.rows == 0 {
            return Err(BenchError::BadWorkload("zero rows".into()));
        }
        let image = tables::generate_rows(&schema, spec.rows, spec.seed);
        Ok(Self {
            spec,
            schema,
            image: Arc::new(image),
        })
    }

    /// Builds a workload from explicit column values (`columns[j][i]` is
    /// `A{j+1}` of row `i`). Padding bytes are zero.
    pub fn from_columns(spec: WorkloadSpec, columns: &[Vec<u128>]) -> Result<Self, BenchError> {
        let schema = bench_schema(spec.row_size, spec.column_width, spec.offset)?;
        let rows = columns.first().map_or(0, |c| c.len() as u64);
        if rows == 0 || columns.iter().any(|c| c.len() as u64 != rows) {
            return Err(BenchError::BadWorkload("ragged or empty columns".into()));
        }
        let mut image = vec![0u8; (spec.row_size * rows) as usize];
        let c = spec.column_width as usize;
        for (j, col) in columns.iter().enumerate() {
            let idx = schema.index_of(&format!("A{}", j + 1))?;
            let off = schema.offset(idx) as usize;
            for (i, v) in col.iter().enumerate() {
                let at = i * spec.row_size as usize + off;
                let le = v.to_le_bytes();
                image[at..at + c.min(16)].copy_from_slice(&le[..c.min(16)]);
            }
        }
        Ok(Self {
            spec: WorkloadSpec { rows, ..spec },
            schema,
            image: Arc::new(image),
        })
    }

    pub fn rows(&self) -> u64 {
        self.spec.rows
    }

    pub fn image(&self) -> &[u8] {
        &self.image
    }

    pub fn field(&self, name: &str) -> Result<FieldRef, BenchError> {
        let idx = self
            .schema
            .index_of(name)
            .map_err(|_| BenchError::FieldMissing(name.into()))?;
        Ok(FieldRef {
            offset: self.schema.offset(idx),
            width: self.schema.field(idx).width,
        })
    }

    pub fn bytes(&self, row: u64, f: FieldRef) -> &[u8] {
        let at = (row * self.spec.row_size + f.offset) as usize;
        &self.image[at..at + f.width as usize]
    }

    pub fn value(&self, row: u64, f: FieldRef) -> u128 {
        le_value(self.bytes(row, f))
    }

    /// Lower median of a column, used to aim selections at one half.
    pub fn median(&self, name: &str) -> Result<u128, BenchError> {
        let f = self.field(name)?;
        let mut vals: Vec<u128> = (0..self.rows()).map(|i| self.value(i, f)).collect();
        vals.sort_unstable();
        Ok(vals[(vals.len() - 1) / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Reorganization buffer already holds the column.
    Hot,
    /// Engine starts empty and fills during the measured run.
    Cold,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Hot, Mode::Cold];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Hot => "hot",
            Mode::Cold => "cold",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hot" => Ok(Mode::Hot),
            "cold" => Ok(Mode::Cold),
            _ => Err(format!("unknown mode '{s}' (known: hot, cold)")),
        }
    }
}

/// A query bound to its selection constant.
#[derive(Debug, Clone)]
pub struct QuerySpec {
    pub query: Arc<dyn Query>,
    pub k: Option<u128>,
}

impl QuerySpec {
    /// Resolves `name` and picks the default constant for `workload`.
    pub fn new(name: &str, workload: &Workload) -> Result<Self, BenchError> {
        let query = queries().resolve(name)?;
        let k = query.default_k(workload)?;
        Ok(Self { query, k })
    }

    pub fn with_k(mut self, k: u128) -> Self {
        self.k = Some(k);
        self
    }

    pub fn id(&self) -> &'static str {
        self.query.name()
    }
}

/// Flips bits of one reorganization-buffer byte after warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    pub offset: u64,
    pub mask: u8,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub query: &'static str,
    pub path: &'static str,
    pub mode: Mode,
    /// Engine revision, or `-` for paths that bypass the engine.
    pub variant: String,
    pub latency_ps: Picos,
    pub cache: CacheStats,
    pub answer: QueryAnswer,
    /// DRAM bytes requested by either port during the measured run.
    pub dram_bytes: u64,
    /// Of those, bytes requested by the engine.
    pub engine_dram_bytes: u64,
    /// Engine DRAM bytes per scan pass.
    pub pass_engine_bytes: Vec<u64>,
    /// Cumulative engine counters, warm-up included.
    pub engine: EngineStats,
}

pub fn run_query(
    spec: &QuerySpec,
    workload: &Workload,
    path: &dyn AccessPath,
    mode: Mode,
    cfg: &SimConfig,
) -> Result<RunResult, BenchError> {
    run_query_with_fault(spec, workload, path, mode, cfg, None)
}

/// Like [`run_query`], optionally corrupting the engine buffer once the
/// hot-mode warm-up has finished.
pub fn run_query_with_fault(
    spec: &QuerySpec,
    workload: &Workload,
    path: &dyn AccessPath,
    mode: Mode,
    cfg: &SimConfig,
    fault: Option<Fault>,
) -> Result<RunResult, BenchError> {
    let fields = spec.query.fields();
    for f in fields {
        workload.field(f)?;
    }
    let table_bytes = workload.image().len() as u64;
    let capacity = (2 * table_bytes + 2 * cfg.cache.line).div_ceil(4096) * 4096;
    let mut sys = System::new(cfg.clone(), capacity)?;
    let table = tables::load_table(
        sys.store_mut(),
        workload.schema.clone(),
        workload.rows(),
        workload.spec.seed,
        workload.image(),
    )?;
    let layout = path.prepare(&mut sys, &table, fields)?;

    if path.uses_engine() {
        if sys.engine().config().is_none() {
            return Err(BenchError::EngineNotConfigured);
        }
        if mode == Mode::Hot {
            sys.warm_engine()?;
            if let Some(f) = fault {
                sys.engine_mut().corrupt_buffer(f.offset, f.mask);
            }
        }
    }
    sys.flush_caches();

    let mem_before = sys.memory_stats().clone();
    let start = sys.now();
    let mut scan = Scan::new(&mut sys, layout, workload);
    let answer = spec.query.execute(&mut scan, spec.k)?;
    let pass_engine_bytes = scan.into_pass_bytes()?;
    let end = sys.finish()?;

    let mem_after = sys.memory_stats();
    let engine_port = |m: &crate::memsim::MemoryStats| m.port(PortId::ENGINE).bytes_requested;
    Ok(RunResult {
        query: spec.id(),
        path: path.name(),
        mode,
        variant: if path.uses_engine() {
            cfg.engine.variant.to_ascii_lowercase()
        } else {
            "-".into()
        },
        latency_ps: end - start,
        cache: sys.cache_stats(),
        answer,
        dram_bytes: mem_after.total_bytes_requested() - mem_before.total_bytes_requested(),
        engine_dram_bytes: engine_port(mem_after) - engine_port(&mem_before),
        pass_engine_bytes,
        engine: sys.engine_stats(),
    })
}

/// Where a path's answer first departed from the reference.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{query} on {path}/{mode}/{variant}: {detail}")]
pub struct Divergence {
    pub query: &'static str,
    pub path: &'static str,
    pub mode: Mode,
    pub variant: String,
    pub detail: String,
}

/// Runs `spec` on every path, mode and engine revision and compares each
/// answer with the reference evaluator.
pub fn verify_answers(
    spec: &QuerySpec,
    workload: &Workload,
    cfg: &SimConfig,
) -> Result<Result<(), Divergence>, BenchError> {
    verify_answers_with_fault(spec, workload, cfg, None)
}

pub fn verify_answers_with_fault(
    spec: &QuerySpec,
    workload: &Workload,
    cfg: &SimConfig,
    fault: Option<Fault>,
) -> Result<Result<(), Divergence>, BenchError> {
    let expected = reference::evaluate(spec.id(), workload, spec.k)?;
    let variants = crate::engine::fetch_strategies().names();
    for path in access_paths().iter() {
        let revisions: Vec<&str> = if path.uses_engine() {
            variants.clone()
        } else {
            vec![cfg.engine.variant.as_str()]
        };
        for variant in revisions {
            let mut cfg = cfg.clone();
            cfg.engine.variant = variant.to_string();
            for mode in Mode::ALL {
                let r = run_query_with_fault(spec, workload, path.as_ref(), mode, &cfg, fault)?;
                if let Some(detail) = expected.first_divergence(&r.answer) {
                    return Ok(Err(Divergence {
                        query: spec.id(),
                        path: r.path,
                        mode,
                        variant: r.variant,
                        detail,
                    }));
                }
            }
        }
    }
    Ok(Ok(()))
}
