//! Experiment plans: the TOML file format, sweep axes and validation.

use std::fmt::Debug;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rme_core::bench::{access_paths, queries, AccessPath, Mode, Query, WorkloadSpec};
use rme_core::cache::CacheConfig;
use rme_core::engine::{fetch_strategies, EngineParams};
use rme_core::geometry::BusConfig;
use rme_core::memsim::TimingParams;
use rme_core::registry::{Named, Registry};
use rme_core::system::{CpuParams, SimConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}: {message}")]
    Parse { file: String, message: String },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("cannot read {file}: {source}")]
    Io {
        file: String,
        source: std::io::Error,
    },
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        message: message.into(),
    }
}

/// The `[plan]` section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub id: String,
    pub axis: String,
    /// Axis values; the axis supplies defaults when absent.
    pub values: Option<Vec<u64>>,
    pub queries: Vec<String>,
    pub paths: Vec<String>,
    pub modes: Vec<String>,
    /// Engine revisions for the `rme` path; empty means `engine.variant`.
    pub variants: Vec<String>,
    pub repetitions: u32,
    pub seed: u64,
    pub row_size: u64,
    pub column_width: u64,
    pub offset: u64,
    /// Table cardinality; absent means 128 KiB of extracted column.
    pub rows: Option<u64>,
    pub output: Option<PathBuf>,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            id: "plan".into(),
            axis: "none".into(),
            values: None,
            queries: vec!["q1".into()],
            paths: access_paths().names().iter().map(|s| s.to_string()).collect(),
            modes: vec!["hot".into(), "cold".into()],
            variants: vec![],
            repetitions: 30,
            seed: 0,
            row_size: 64,
            column_width: 4,
            offset: 0,
            rows: None,
            output: None,
        }
    }
}

/// A whole plan file: the plan plus every simulator parameter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanFile {
    pub plan: PlanSection,
    pub timing: TimingParams,
    pub cache: CacheConfig,
    pub engine: EngineParams,
    pub cpu: CpuParams,
    pub bus: BusConfig,
}

impl PlanFile {
    pub fn parse(text: &str, file: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            file: file.into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            file: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            timing: self.timing,
            cache: self.cache.clone(),
            engine: self.engine.clone(),
            cpu: self.cpu.clone(),
            bus: self.bus,
        }
    }
}

/// Table and engine shape of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellParams {
    pub row_size: u64,
    pub column_width: u64,
    pub offset: u64,
    pub rows: Option<u64>,
    pub fetch_units: usize,
}

impl CellParams {
    pub fn workload(&self, seed: u64) -> WorkloadSpec {
        let spec = WorkloadSpec::new(self.row_size, self.column_width, self.offset).with_seed(seed);
        match self.rows {
            Some(n) => spec.with_rows(n),
            None => spec,
        }
    }
}

pub trait SweepAxis: Named + Debug + Send + Sync {
    fn default_values(&self, base: &CellParams) -> Vec<u64>;
    fn apply(&self, cell: &mut CellParams, value: u64);
}

macro_rules! axis {
    ($t:ident, $name:literal, |$b:ident| $defaults:expr, |$c:ident, $v:ident| $apply:expr) => {
        #[derive(Debug)]
        pub struct $t;

        impl Named for $t {
            fn name(&self) -> &'static str {
                $name
            }
        }

        impl SweepAxis for $t {
            fn default_values(&self, $b: &CellParams) -> Vec<u64> {
                $defaults
            }

            fn apply(&self, $c: &mut CellParams, $v: u64) {
                $apply
            }
        }
    };
}

axis!(NoAxis, "none", |_b| vec![0], |_c, _v| ());
axis!(ColumnWidth, "colwidth", |_b| vec![1, 2, 4, 8, 16], |c, v| c.column_width = v);
axis!(RowSize, "rowsize", |_b| vec![4, 8, 16, 32, 64, 128], |c, v| c.row_size = v);
axis!(Offset, "offset", |b| (0..=b.row_size - b.column_width).take(61).collect(), |c, v| c.offset = v);
axis!(FetchUnits, "fetch-units", |_b| vec![1, 2, 4, 8], |c, v| c.fetch_units = v as usize);
axis!(Rows, "rows", |_b| vec![1024, 4096, 16384, 32768], |c, v| c.rows = Some(v));

pub fn axes() -> Registry<dyn SweepAxis> {
    let mut r: Registry<dyn SweepAxis> = Registry::new("sweep axis");
    r.register(Arc::new(NoAxis))
        .register(Arc::new(ColumnWidth))
        .register(Arc::new(RowSize))
        .register(Arc::new(Offset))
        .register(Arc::new(FetchUnits))
        .register(Arc::new(Rows));
    r
}

/// A validated plan with every name resolved.
#[derive(Debug, Clone)]
pub struct Plan {
    pub id: String,
    pub axis: Arc<dyn SweepAxis>,
    pub values: Vec<u64>,
    pub queries: Vec<Arc<dyn Query>>,
    pub paths: Vec<Arc<dyn AccessPath>>,
    pub modes: Vec<Mode>,
    pub variants: Vec<String>,
    pub repetitions: u32,
    pub seed: u64,
    pub base: CellParams,
    pub sim: SimConfig,
    pub output: Option<PathBuf>,
}

fn resolve_list<T: ?Sized + Named>(
    reg: &Registry<T>,
    field: &str,
    names: &[String],
) -> Result<Vec<Arc<T>>, ConfigError> {
    if names.is_empty() {
        return Err(field_err(field, "must name at least one entry"));
    }
    names
        .iter()
        .enumerate()
        .map(|(i, n)| reg.resolve(n).map_err(|e| field_err(format!("{field}[{i}]"), e.to_string())))
        .collect()
}

impl PlanFile {
    pub fn resolve(&self) -> Result<Plan, ConfigError> {
        let p = &self.plan;
        let sim = self.sim();
        let variants_reg = fetch_strategies();
        variants_reg
            .resolve(&sim.engine.variant)
            .map_err(|e| field_err("engine.variant", e.to_string()))?;
        sim.validate().map_err(|e| field_err("config", e.to_string()))?;

        let axis = axes()
            .resolve(&p.axis)
            .map_err(|e| field_err("plan.axis", e.to_string()))?;
        let base = CellParams {
            row_size: p.row_size,
            column_width: p.column_width,
            offset: p.offset,
            rows: p.rows,
            fetch_units: sim.engine.fetch_unit_count,
        };
        if p.column_width == 0 || p.offset + p.column_width > p.row_size {
            return Err(field_err(
                "plan.column_width",
                format!(
                    "a {}-byte column at offset {} does not fit a {}-byte row",
                    p.column_width, p.offset, p.row_size
                ),
            ));
        }
        let values = p.values.clone().unwrap_or_else(|| axis.default_values(&base));
        if values.is_empty() {
            return Err(field_err("plan.values", "must hold at least one value"));
        }
        if p.repetitions == 0 {
            return Err(field_err("plan.repetitions", "must be at least 1"));
        }
        let modes = p
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| m.parse::<Mode>().map_err(|e| field_err(format!("plan.modes[{i}]"), e)))
            .collect::<Result<Vec<_>, _>>()?;
        if modes.is_empty() {
            return Err(field_err("plan.modes", "must name at least one mode"));
        }
        let variants = if p.variants.is_empty() {
            vec![sim.engine.variant.to_ascii_lowercase()]
        } else {
            resolve_list(&variants_reg, "plan.variants", &p.variants)?
                .iter()
                .map(|v| v.name().to_string())
                .collect()
        };
        Ok(Plan {
            id: p.id.clone(),
            axis,
            values,
            queries: resolve_list(&queries(), "plan.queries", &p.queries)?,
            paths: resolve_list(&access_paths(), "plan.paths", &p.paths)?,
            modes,
            variants,
            repetitions: p.repetitions,
            seed: p.seed,
            base,
            sim,
            output: p.output.clone(),
        })
    }
}

/// A plan file with every default spelled out.
pub const TEMPLATE: &str = r#"# Experiment plan. Every key is optional; the values shown are the defaults.

[plan]
id = "plan"
# none | colwidth | rowsize | offset | fetch-units | rows
axis = "none"
# values = [1, 2, 4, 8, 16]   # defaults depend on the axis
queries = ["q1"]              # q1 .. q7
paths = ["row", "columnar", "rme"]
modes = ["hot", "cold"]
variants = []                 # bsl | pck | mlp; empty uses engine.variant
repetitions = 30
seed = 0
row_size = 64                 # bytes per row
column_width = 4              # bytes per column A1..An
offset = 0                    # row offset of A1
# rows = 32768                # default: 128 KiB / column_width
# output = "results.csv"      # default: standard output

# all times are in picoseconds
[timing]
dram_first_beat = 40000       # request issue to first data beat
dram_per_beat = 5000          # spacing of later beats; bus time per beat
cdc_penalty = 100000          # one CPU <-> engine clock-domain crossing
max_outstanding = 16          # DRAM requests in flight
pl_cycle = 10000              # engine clock period
ps_cycle = 667                # CPU clock period
serialize_data_bus = true     # bursts never overlap on the data bus

[cache]
l1_size = 32768
l1_assoc = 4
l2_size = 1048576
l2_assoc = 16
line = 64
prefetch_next_line = true
l1_hit = 2000
l2_hit = 10000

[engine]
variant = "mlp"
fetch_unit_count = 1
reorg_capacity = 2097152      # bytes of packed column the buffer holds
cache_line = 64
max_cpu_outstanding = 16
lookup_cycles = 2             # engine cycles for a buffer lookup

[cpu]
cycles_per_load = 3           # CPU cycles per load, loop overhead included
mshrs = 16                    # outstanding L1 misses

[bus]
bus_width = 16                # bytes per beat
"#;
