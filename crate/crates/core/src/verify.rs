//! Self-check suite: oracle comparisons and invariants that must hold for
//! any build of the simulator.

use crate::bench::{
    access_paths, queries, run_query, run_query_with_fault, verify_answers, BenchError, Ephemeral,
    Fault, Mode, QuerySpec, RowDirect, Workload, WorkloadSpec,
};
use crate::geometry::{descriptor_stream, oracle_gather, BusConfig, TableGeometry};
use crate::system::SimConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckFn = fn(&SimConfig) -> Result<Result<String, String>, BenchError>;

const CHECKS: [(&str, CheckFn); 7] = [
    ("descriptor-oracle", descriptor_oracle),
    ("answer-invariance", answer_invariance),
    ("fault-detection", fault_detection),
    ("fetched-bytes", fetched_bytes),
    ("cache-accounting", cache_accounting),
    ("q7-locality", q7_locality),
    ("determinism", determinism),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Runs every check under `cfg`. A check that errors counts as failed.
pub fn run_suite(cfg: &SimConfig) -> Vec<Check> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = match f(cfg) {
                Ok(Ok(d)) => (true, d),
                Ok(Err(d)) => (false, d),
                Err(e) => (false, format!("error: {e}")),
            };
            Check { name, passed, detail }
        })
        .collect()
}

fn small(seed: u64) -> Result<Workload, BenchError> {
    Workload::generate(WorkloadSpec::new(64, 4, 0).with_rows(512).with_seed(seed))
}

fn descriptor_oracle(cfg: &SimConfig) -> Result<Result<String, String>, BenchError> {
    let bus = cfg.bus;
    let mut n_cases = 0;
    for r in (4..=128u64).step_by(4) {
        for c in [1u64, 2, 4, 8, 16].into_iter().filter(|&c| c <= r) {
            for o in 0..=r - c {
                for n in [1u64, 7] {
                    let g = TableGeometry::new(r, n, c, o);
                    let len = (r * n) as usize;
                    let mut base: Vec<u8> = (0..len as u64 + bus.bus_width)
                        .map(|i| (i * 131 + r + o) as u8)
                        .collect();
                    let want = oracle_gather(&g, &base[..len]).expect("valid geometry");
                    base[len..].fill(0);
                    if replay(&g, bus, &base) != want {
                        return Ok(Err(format!("R={r} C={c} O={o} N={n}")));
                    }
                    n_cases += 1;
                }
            }
        }
    }
    Ok(Ok(format!("{n_cases} geometries")))
}

fn replay(g: &TableGeometry, bus: BusConfig, base: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; g.column_bytes() as usize];
    for d in descriptor_stream(*g, bus).expect("valid geometry") {
        let at = (d.read_addr + d.lead_trim) as usize;
        let w = d.write_addr as usize;
        out[w..w + g.column_width as usize].copy_from_slice(&base[at..at + g.column_width as usize]);
    }
    out
}

fn answer_invariance(cfg: &SimConfig) -> Result<Result<String, String>, BenchError> {
    let mut n = 0;
    for seed in 0..3 {
        let w = small(seed)?;
        for q in queries().names() {
            if let Err(d) = verify_answers(&QuerySpec::new(q, &w)?, &w, cfg)? {
                return Ok(Err(format!("seed {seed}: {d}")));
            }
            n += 1;
        }
    }
    Ok(Ok(format!("{n} query/seed pairs agree on every path")))
}

fn fault_detection(cfg: &SimConfig) -> Result<Result<String, String>, BenchError> {
    let w = small(0)?;
    let spec = QuerySpec::new("q4", &w)?;
    let fault = Fault {
        offset: 100,
        mask: 0x01,
    };
    let clean = run_query(&spec, &w, &Ephemeral, Mode::Hot, cfg)?;
    let bad = run_query_with_fault(&spec, &w, &Ephemeral, Mode::Hot, cfg, Some(fault))?;
    Ok(match clean.answer.first_divergence(&bad.answer) {
        Some(d) => Ok(format!("injected flip caught ({d})")),
        None => Err("corrupted buffer byte went unnoticed".into()),
    })
}

fn fetched_bytes(cfg: &SimConfig) -> Result<Result<String, String>, BenchError> {
    for o in [0u64, 13, 30, 47, 60] {
        let w = Workload::generate(WorkloadSpec::new(64, 4, o).with_rows(256))?;
        let g = TableGeometry::new(64, 256, 4, o);
        let want: u64 = descriptor_stream(g, cfg.bus)
            .expect("valid geometry")
            .map(|d| d.fetched_bytes(&cfg.bus))
            .sum();
        let r = run_query(&QuerySpec::new("q1", &w)?, &w, &Ephemeral, Mode::Cold, cfg)?;
        if r.engine_dram_bytes != want {
            return Ok(Err(format!(
                "offset {o}: engine fetched {} bytes, descriptors ask for {want}",
                r.engine_dram_bytes
            )));
        }
    }
    Ok(Ok("engine traffic equals descriptor bursts".into()))
}

fn cache_accounting(cfg: &SimConfig) -> Result<Result<String, String>, BenchError> {
    let w = small(1)?;
    for q in ["q1", "q3", "q6"] {
        let spec = QuerySpec::new(q, &w)?;
        for p in access_paths().iter() {
            let s = run_query(&spec, &w, p.as_ref(), Mode::Cold, cfg)?.cache;
            if s.l2_requests != s.l1_misses + s.prefetch_issued || s.l2_misses > s.l2_requests {
                return Ok(Err(format!("{q}/{}: {s:?}", p.name())));
            }
        }
    }
    Ok(Ok("L2 requests = L1 misses + prefetches".into()))
}

fn q7_locality(cfg: &SimConfig) -> Result<Result<String, String>, BenchError> {
    let w = small(2)?;
    let r = run_query(&QuerySpec::new("q7", &w)?, &w, &Ephemeral, Mode::Cold, cfg)?;
    Ok(match r.pass_engine_bytes.as_slice() {
        [first, 0] => Ok(format!("pass 1 fetched {first} bytes, pass 2 none")),
        other => Err(format!("per-pass engine bytes {other:?}")),
    })
}

fn determinism(cfg: &SimConfig) -> Result<Result<String, String>, BenchError> {
    let w = small(3)?;
    let spec = QuerySpec::new("q2", &w)?;
    for p in [&RowDirect as &dyn crate::bench::AccessPath, &Ephemeral] {
        let a = run_query(&spec, &w, p, Mode::Cold, cfg)?;
        let b = run_query(&spec, &w, p, Mode::Cold, cfg)?;
        if a.latency_ps != b.latency_ps || a.cache != b.cache || a.answer != b.answer {
            return Ok(Err(format!("{} runs differ", p.name())));
        }
    }
    Ok(Ok("repeated runs are identical".into()))
}
