//! Expands a plan into cells, runs them (in parallel) and produces CSV records.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use rme_core::bench::{
    reference, run_query, AccessPath, BenchError, Mode, Query, QuerySpec, RunResult, Workload,
};
use serde::{Deserialize, Serialize};

use crate::plan::{CellParams, Plan};

/// One CSV row. Column order is part of the output contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub plan_id: String,
    pub axis: String,
    pub axis_value: u64,
    pub query: String,
    pub path: String,
    pub mode: String,
    pub variant: String,
    pub rep: u32,
    pub latency_ps: u64,
    pub mean_latency_ps: f64,
    pub std_latency_ps: f64,
    pub l1_requests: u64,
    pub l1_misses: u64,
    pub l2_requests: u64,
    pub l2_misses: u64,
    pub prefetch_issued: u64,
    pub prefetch_useful: u64,
    pub dram_bytes: u64,
    pub engine_dram_bytes: u64,
    pub answer_checksum: String,
}

struct Cell {
    axis_value: u64,
    params: CellParams,
    query: Arc<dyn Query>,
    path: Arc<dyn AccessPath>,
    mode: Mode,
    variant: String,
}

#[derive(Debug, Default)]
pub struct PlanOutput {
    pub records: Vec<Record>,
    /// Cells that could not run on their table shape.
    pub skipped: Vec<String>,
    /// Answers that disagree across paths or with the reference evaluator.
    pub mismatches: Vec<String>,
}

fn mean_std(xs: &[u64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn cells(plan: &Plan) -> Vec<Cell> {
    let mut out = vec![];
    for &v in &plan.values {
        let mut params = plan.base;
        plan.axis.apply(&mut params, v);
        for q in &plan.queries {
            for p in &plan.paths {
                for &mode in &plan.modes {
                    let variants = if p.uses_engine() {
                        plan.variants.clone()
                    } else {
                        vec!["-".to_string()]
                    };
                    for variant in variants {
                        out.push(Cell {
                            axis_value: v,
                            params,
                            query: q.clone(),
                            path: p.clone(),
                            mode,
                            variant,
                        });
                    }
                }
            }
        }
    }
    out
}

enum CellOutcome {
    Done(Vec<RunResult>),
    Skipped(String),
}

fn run_cell(plan: &Plan, cell: &Cell, workload: &Result<Workload, String>) -> Result<CellOutcome, BenchError> {
    let label = format!(
        "{}={} {}/{}/{}/{}",
        plan.axis.name(),
        cell.axis_value,
        cell.query.name(),
        cell.path.name(),
        cell.mode,
        cell.variant
    );
    let w = match workload {
        Ok(w) => w,
        Err(e) => return Ok(CellOutcome::Skipped(format!("{label}: {e}"))),
    };
    let spec = match cell.query.default_k(w) {
        Ok(k) => QuerySpec {
            query: cell.query.clone(),
            k,
        },
        Err(BenchError::FieldMissing(f)) => {
            return Ok(CellOutcome::Skipped(format!("{label}: table has no field {f}")))
        }
        Err(e) => return Err(e),
    };
    let mut cfg = plan.sim.clone();
    cfg.engine.fetch_unit_count = cell.params.fetch_units;
    if cell.path.uses_engine() {
        cfg.engine.variant = cell.variant.clone();
    }
    let mut runs = Vec::with_capacity(plan.repetitions as usize);
    for _ in 0..plan.repetitions {
        match run_query(&spec, w, cell.path.as_ref(), cell.mode, &cfg) {
            Ok(r) => runs.push(r),
            Err(BenchError::FieldMissing(f)) => {
                return Ok(CellOutcome::Skipped(format!("{label}: table has no field {f}")))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(CellOutcome::Done(runs))
}

/// Runs every cell. Rows come out in plan order whatever the scheduling.
pub fn run_plan(plan: &Plan) -> Result<PlanOutput, BenchError> {
    let workloads: BTreeMap<u64, Result<Workload, String>> = plan
        .values
        .par_iter()
        .map(|&v| {
            let mut params = plan.base;
            plan.axis.apply(&mut params, v);
            let w = Workload::generate(params.workload(plan.seed)).map_err(|e| e.to_string());
            (v, w)
        })
        .collect();
    let cells = cells(plan);
    let outcomes: Vec<Result<CellOutcome, BenchError>> = cells
        .par_iter()
        .map(|c| run_cell(plan, c, &workloads[&c.axis_value]))
        .collect();

    let mut out = PlanOutput::default();
    let mut answers: BTreeMap<(u64, &'static str), (u64, String)> = BTreeMap::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        let runs = match outcome? {
            CellOutcome::Done(r) => r,
            CellOutcome::Skipped(why) => {
                out.skipped.push(why);
                continue;
            }
        };
        let lat: Vec<u64> = runs.iter().map(|r| r.latency_ps).collect();
        let (mean, std) = mean_std(&lat);
        for (rep, r) in runs.iter().enumerate() {
            let sum = r.answer.checksum();
            let key = (cell.axis_value, cell.query.name());
            let here = format!("{}/{}/{} rep {rep}", r.path, r.mode, r.variant);
            match answers.get(&key) {
                None => {
                    answers.insert(key, (sum, here));
                }
                Some((first, at)) if *first != sum => out.mismatches.push(format!(
                    "{}={} {}: {here} answer {sum:016x} differs from {at} answer {first:016x}",
                    plan.axis.name(),
                    cell.axis_value,
                    cell.query.name()
                )),
                _ => {}
            }
            out.records.push(Record {
                plan_id: plan.id.clone(),
                axis: plan.axis.name().into(),
                axis_value: cell.axis_value,
                query: r.query.into(),
                path: r.path.into(),
                mode: r.mode.name().into(),
                variant: r.variant.clone(),
                rep: rep as u32,
                latency_ps: r.latency_ps,
                mean_latency_ps: mean,
                std_latency_ps: std,
                l1_requests: r.cache.l1_requests,
                l1_misses: r.cache.l1_misses,
                l2_requests: r.cache.l2_requests,
                l2_misses: r.cache.l2_misses,
                prefetch_issued: r.cache.prefetch_issued,
                prefetch_useful: r.cache.prefetch_useful,
                dram_bytes: r.dram_bytes,
                engine_dram_bytes: r.engine_dram_bytes,
                answer_checksum: format!("{sum:016x}"),
            });
        }
    }

    for ((v, q), (sum, _)) in &answers {
        let Ok(w) = &workloads[v] else { continue };
        let k = rme_core::bench::queries().resolve(q)?.default_k(w)?;
        let want = reference::evaluate(q, w, k)?.checksum();
        if want != *sum {
            out.mismatches.push(format!(
                "{}={v} {q}: simulated answer {sum:016x}, reference {want:016x}",
                plan.axis.name()
            ));
        }
    }
    Ok(out)
}

pub fn write_csv(records: &[Record], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
