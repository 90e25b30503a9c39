//! The seven scan queries, written against a [`Scan`] that charges every
//! field load to the simulated machine.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use super::{le_value, BenchError, Layout, QueryAnswer, Workload};
use crate::memsim::PortId;
use crate::registry::{Named, Registry};
use crate::system::System;

/// A field's position within the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldRef {
    pub offset: u64,
    pub width: u64,
}

/// Handle on an issued load; its bytes are valid after [`Scan::finish`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Load {
    slot: usize,
    width: usize,
}

/// Per-run view of the machine handed to a query.
pub struct Scan<'a> {
    sys: &'a mut System,
    layout: Layout,
    workload: &'a Workload,
    engine_mark: u64,
    passes: Vec<u64>,
}

impl<'a> Scan<'a> {
    pub fn new(sys: &'a mut System, layout: Layout, workload: &'a Workload) -> Self {
        let engine_mark = sys.memory_stats().port(PortId::ENGINE).bytes_requested;
        Self {
            sys,
            layout,
            workload,
            engine_mark,
            passes: Vec::new(),
        }
    }

    pub fn rows(&self) -> u64 {
        self.workload.rows()
    }

    pub fn field(&self, name: &str) -> Result<FieldRef, BenchError> {
        self.workload.field(name)
    }

    /// Issues a load of field `f` of row `row`.
    pub fn load(&mut self, row: u64, f: FieldRef) -> Result<Load, BenchError> {
        let slot = self.sys.read(self.layout.addr(row, f.offset), f.width)?;
        Ok(Load {
            slot,
            width: f.width as usize,
        })
    }

    /// Value that steers a branch on field `f` of `row`. The core resolves
    /// branches without waiting for the load, like a perfect predictor;
    /// answers are always built from the loaded bytes.
    pub fn predict(&self, row: u64, f: FieldRef) -> u128 {
        self.workload.value(row, f)
    }

    /// Waits for all issued loads.
    pub fn finish(&mut self) -> Result<(), BenchError> {
        self.sys.finish()?;
        Ok(())
    }

    /// Waits for all loads and records the engine's DRAM traffic for the pass.
    pub fn end_pass(&mut self) -> Result<(), BenchError> {
        self.finish()?;
        let now = self.sys.memory_stats().port(PortId::ENGINE).bytes_requested;
        self.passes.push(now - self.engine_mark);
        self.engine_mark = now;
        Ok(())
    }

    pub fn bytes(&self, l: Load) -> &[u8] {
        &self.sys.values()[l.slot..l.slot + l.width]
    }

    pub fn value(&self, l: Load) -> u128 {
        le_value(self.bytes(l))
    }

    /// Closes the final pass if the query did not, and returns the per-pass
    /// engine DRAM bytes.
    pub fn into_pass_bytes(mut self) -> Result<Vec<u64>, BenchError> {
        if self.passes.is_empty() {
            self.end_pass()?;
        }
        Ok(self.passes)
    }
}

pub trait Query: Named + Debug + Send + Sync {
    /// The adjacent fields the query scans, in schema order.
    fn fields(&self) -> &'static [&'static str];

    /// Selection constant used when none is given.
    fn default_k(&self, _w: &Workload) -> Result<Option<u128>, BenchError> {
        Ok(None)
    }

    fn execute(&self, scan: &mut Scan<'_>, k: Option<u128>) -> Result<QueryAnswer, BenchError>;
}

fn need_k(q: &dyn Query, k: Option<u128>) -> Result<u128, BenchError> {
    k.ok_or(BenchError::MissingConstant(q.name()))
}

/// `SELECT A1 FROM S`
#[derive(Debug)]
pub struct Q1;
/// `SELECT A1 FROM S WHERE A2 > k`
#[derive(Debug)]
pub struct Q2;
/// `SELECT A1, A2 FROM S`
#[derive(Debug)]
pub struct Q3;
/// `SELECT SUM(A1) FROM S`
#[derive(Debug)]
pub struct Q4;
/// `SELECT SUM(A2) FROM S WHERE A1 < k`
#[derive(Debug)]
pub struct Q5;
/// `SELECT AVG(A1) FROM S WHERE A3 < k GROUP BY A2`
#[derive(Debug)]
pub struct Q6;
/// `SELECT STD(A1) FROM S`
#[derive(Debug)]
pub struct Q7;

macro_rules! named {
    ($($t:ident => $n:literal),*) => {
        $(impl Named for $t {
            fn name(&self) -> &'static str {
                $n
            }
        })*
    };
}

named!(Q1 => "q1", Q2 => "q2", Q3 => "q3", Q4 => "q4", Q5 => "q5", Q6 => "q6", Q7 => "q7");

impl Query for Q1 {
    fn fields(&self) -> &'static [&'static str] {
        &["A1"]
    }

    fn execute(&self, scan: &mut Scan<'_>, _k: Option<u128>) -> Result<QueryAnswer, BenchError> {
        let a1 = scan.field("A1")?;
        let mut loads = Vec::with_capacity(scan.rows() as usize);
        for i in 0..scan.rows() {
            loads.push(scan.load(i, a1)?);
        }
        scan.finish()?;
        let data = loads.iter().flat_map(|&l| scan.bytes(l).to_vec()).collect();
        Ok(QueryAnswer::Tuples {
            width: a1.width,
            data,
        })
    }
}

impl Query for Q2 {
    fn fields(&self) -> &'static [&'static str] {
        &["A1", "A2"]
    }

    fn default_k(&self, w: &Workload) -> Result<Option<u128>, BenchError> {
        w.median("A2").map(Some)
    }

    fn execute(&self, scan: &mut Scan<'_>, k: Option<u128>) -> Result<QueryAnswer, BenchError> {
        let k = need_k(self, k)?;
        let (a1, a2) = (scan.field("A1")?, scan.field("A2")?);
        let mut picked = Vec::new();
        for i in 0..scan.rows() {
            let sel = scan.load(i, a2)?;
            if scan.predict(i, a2) > k {
                picked.push((sel, scan.load(i, a1)?));
            }
        }
        scan.finish()?;
        let mut data = Vec::new();
        for (sel, out) in picked {
            if scan.value(sel) > k {
                data.extend_from_slice(scan.bytes(out));
            }
        }
        Ok(QueryAnswer::Tuples {
            width: a1.width,
            data,
        })
    }
}

impl Query for Q3 {
    fn fields(&self) -> &'static [&'static str] {
        &["A1", "A2"]
    }

    fn execute(&self, scan: &mut Scan<'_>, _k: Option<u128>) -> Result<QueryAnswer, BenchError> {
        let (a1, a2) = (scan.field("A1")?, scan.field("A2")?);
        let mut loads = Vec::with_capacity(scan.rows() as usize);
        for i in 0..scan.rows() {
            loads.push((scan.load(i, a1)?, scan.load(i, a2)?));
        }
        scan.finish()?;
        let mut data = Vec::new();
        for (x, y) in loads {
            data.extend_from_slice(scan.bytes(x));
            data.extend_from_slice(scan.bytes(y));
        }
        Ok(QueryAnswer::Tuples {
            width: a1.width + a2.width,
            data,
        })
    }
}

impl Query for Q4 {
    fn fields(&self) -> &'static [&'static str] {
        &["A1"]
    }

    fn execute(&self, scan: &mut Scan<'_>, _k: Option<u128>) -> Result<QueryAnswer, BenchError> {
        let a1 = scan.field("A1")?;
        let mut loads = Vec::with_capacity(scan.rows() as usize);
        for i in 0..scan.rows() {
            loads.push(scan.load(i, a1)?);
        }
        scan.finish()?;
        let sum = loads
            .iter()
            .fold(0u128, |acc, &l| acc.wrapping_add(scan.value(l)));
        Ok(QueryAnswer::Scalar(sum))
    }
}

impl Query for Q5 {
    fn fields(&self) -> &'static [&'static str] {
        &["A1", "A2"]
    }

    fn default_k(&self, w: &Workload) -> Result<Option<u128>, BenchError> {
        w.median("A1").map(Some)
    }

    fn execute(&self, scan: &mut Scan<'_>, k: Option<u128>) -> Result<QueryAnswer, BenchError> {
        let k = need_k(self, k)?;
        let (a1, a2) = (scan.field("A1")?, scan.field("A2")?);
        let mut picked = Vec::new();
        for i in 0..scan.rows() {
            let sel = scan.load(i, a1)?;
            if scan.predict(i, a1) < k {
                picked.push((sel, scan.load(i, a2)?));
            }
        }
        scan.finish()?;
        let mut sum = 0u128;
        for (sel, v) in picked {
            if scan.value(sel) < k {
                sum = sum.wrapping_add(scan.value(v));
            }
        }
        Ok(QueryAnswer::Scalar(sum))
    }
}

impl Query for Q6 {
    fn fields(&self) -> &'static [&'static str] {
        &["A1", "A2", "A3"]
    }

    fn default_k(&self, w: &Workload) -> Result<Option<u128>, BenchError> {
        w.median("A3").map(Some)
    }

    fn execute(&self, scan: &mut Scan<'_>, k: Option<u128>) -> Result<QueryAnswer, BenchError> {
        let k = need_k(self, k)?;
        let (a1, a2, a3) = (scan.field("A1")?, scan.field("A2")?, scan.field("A3")?);
        let mut picked = Vec::new();
        for i in 0..scan.rows() {
            let sel = scan.load(i, a3)?;
            if scan.predict(i, a3) < k {
                picked.push((sel, scan.load(i, a1)?, scan.load(i, a2)?));
            }
        }
        scan.finish()?;
        // the group table is treated as cache resident and is not simulated
        let mut groups: BTreeMap<u128, (u128, u64)> = BTreeMap::new();
        for (sel, v, g) in picked {
            if scan.value(sel) < k {
                let e = groups.entry(scan.value(g)).or_default();
                e.0 = e.0.wrapping_add(scan.value(v));
                e.1 += 1;
            }
        }
        Ok(QueryAnswer::Groups(
            groups
                .into_iter()
                .map(|(g, (s, n))| (g, s as f64 / n as f64))
                .collect(),
        ))
    }
}

impl Query for Q7 {
    fn fields(&self) -> &'static [&'static str] {
        &["A1"]
    }

    fn execute(&self, scan: &mut Scan<'_>, _k: Option<u128>) -> Result<QueryAnswer, BenchError> {
        let a1 = scan.field("A1")?;
        let n = scan.rows();

        let mut loads = Vec::with_capacity(n as usize);
        for i in 0..n {
            loads.push(scan.load(i, a1)?);
        }
        scan.end_pass()?;
        let sum = loads
            .iter()
            .fold(0u128, |acc, &l| acc.wrapping_add(scan.value(l)));
        let mean = sum as f64 / n as f64;

        loads.clear();
        for i in 0..n {
            loads.push(scan.load(i, a1)?);
        }
        scan.end_pass()?;
        if n < 2 {
            return Ok(QueryAnswer::Float(0.0));
        }
        let mut ss = 0.0f64;
        for &l in &loads {
            let d = scan.value(l) as f64 - mean;
            ss += d * d;
        }
        Ok(QueryAnswer::Float((ss / (n - 1) as f64).sqrt()))
    }
}

pub fn queries() -> Registry<dyn Query> {
    let mut r: Registry<dyn Query> = Registry::new("query");
    r.register(Arc::new(Q1))
        .register(Arc::new(Q2))
        .register(Arc::new(Q3))
        .register(Arc::new(Q4))
        .register(Arc::new(Q5))
        .register(Arc::new(Q6))
        .register(Arc::new(Q7));
    r
}
