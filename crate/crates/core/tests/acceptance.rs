//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rme_core::bench::{
    reference, run_query, verify_answers, Columnar, Ephemeral, Mode, QueryAnswer, QuerySpec,
    RowDirect, RunResult, Workload, WorkloadSpec,
};
use rme_core::engine::{fetch_strategies, EngineError};
use rme_core::geometry::{descriptor_stream, oracle_gather, BusConfig, TableGeometry};
use rme_core::system::{SimConfig, System, SystemError};

/// Criterion 5: hot engine latency may exceed columnar by at most this factor.
const HOT_VS_COLUMNAR: f64 = 1.25;
/// Criterion 6: allowed relative spread of cold engine latency across R.
const ROW_SIZE_SPREAD: f64 = 0.10;
/// Criterion 8: allowed distance of Q7 from the reference, in ulps.
const STD_ULPS: u64 = 1;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn run(q: &str, w: &Workload, path: &dyn rme_core::bench::AccessPath, mode: Mode, cfg: &SimConfig) -> RunResult {
    let spec = QuerySpec::new(q, w).expect("query resolves");
    run_query(&spec, w, path, mode, cfg).expect("run succeeds")
}

fn with_variant(variant: &str) -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.engine.variant = variant.into();
    cfg
}

/// Executes descriptors the dumb way: fetch whole beats, cut, place.
fn interpret(g: &TableGeometry, bus: BusConfig, base: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; g.column_bytes() as usize];
    for d in descriptor_stream(*g, bus).unwrap() {
        let start = d.read_addr as usize;
        let fetched = &base[start..start + (d.burst_len * bus.bus_width) as usize];
        let chunk = &fetched[d.lead_trim as usize..(d.lead_trim + g.column_width) as usize];
        let w = d.write_addr as usize;
        out[w..w + chunk.len()].copy_from_slice(chunk);
    }
    out
}

fn c1_descriptor_oracle() -> Outcome {
    let bus = BusConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = 0u64;
    for r in (4..=128u64).step_by(4) {
        for c in [1u64, 2, 4, 8, 16].into_iter().filter(|&c| c <= r) {
            for o in 0..=r - c {
                for n in [1u64, 7, 64] {
                    let g = TableGeometry::new(r, n, c, o);
                    let mut base = vec![0u8; (r * n + bus.bus_width) as usize];
                    rng.fill(&mut base[..(r * n) as usize]);
                    let want = oracle_gather(&g, &base[..(r * n) as usize]).unwrap();
                    if interpret(&g, bus, &base) != want {
                        return Err(format!("mismatch at R={r} C={c} O={o} N={n}"));
                    }
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} geometries reproduced byte for byte"))
}

fn c2_offset_spikes() -> Outcome {
    let bus = BusConfig::default();
    let spikes: BTreeSet<u64> = [13, 14, 15, 29, 30, 31, 45, 46, 47].into();
    let rows = 4096;
    let cfg = SimConfig::default();
    let (mut cold, mut hot, mut direct) = (vec![], vec![], vec![]);
    for o in 0..=60u64 {
        let g = TableGeometry::new(64, 1, 4, o);
        let burst = descriptor_stream(g, bus).unwrap().next().unwrap().burst_len;
        let want = if spikes.contains(&o) { 2 } else { 1 };
        check(burst == want, format!("offset {o}: burst {burst}, expected {want}"))?;

        let w = Workload::generate(WorkloadSpec::new(64, 4, o).with_rows(rows)).unwrap();
        let c = run("q1", &w, &Ephemeral, Mode::Cold, &cfg);
        let bytes = rows * 16 * want;
        check(
            c.engine_dram_bytes == bytes,
            format!("offset {o}: engine fetched {} bytes, expected {bytes}", c.engine_dram_bytes),
        )?;
        cold.push((o, c.latency_ps));
        hot.push(run("q1", &w, &Ephemeral, Mode::Hot, &cfg).latency_ps);
        direct.push(run("q1", &w, &RowDirect, Mode::Cold, &cfg).latency_ps);
    }
    let flat: BTreeSet<u64> = cold.iter().filter(|(o, _)| !spikes.contains(o)).map(|x| x.1).collect();
    let spiked: Vec<u64> = cold.iter().filter(|(o, _)| spikes.contains(o)).map(|x| x.1).collect();
    check(flat.len() == 1, format!("cold latency not flat off-spike: {flat:?}"))?;
    let base = *flat.iter().next().unwrap();
    check(
        spiked.iter().all(|&l| l > base),
        format!("cold spike latencies {spiked:?} not above {base}"),
    )?;
    check(hot.iter().all(|&l| l == hot[0]), "hot latency varies with offset".into())?;
    check(direct.iter().all(|&l| l == direct[0]), "direct latency varies with offset".into())?;
    Ok(format!(
        "cold {} ns flat, {}..{} ns at spikes; hot and direct offset-invariant",
        base / 1000,
        spiked.iter().min().unwrap() / 1000,
        spiked.iter().max().unwrap() / 1000
    ))
}

fn no_prefetch() -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.cache.prefetch_next_line = false;
    cfg
}

fn c3_miss_ratio() -> Outcome {
    let w = Workload::generate(WorkloadSpec::new(64, 4, 0).with_rows(32768)).unwrap();
    let cfg = no_prefetch();
    let row = run("q1", &w, &RowDirect, Mode::Cold, &cfg).cache.l2_misses;
    let rme = run("q1", &w, &Ephemeral, Mode::Cold, &cfg).cache.l2_misses;
    check(row == 32768, format!("direct path had {row} L2 misses"))?;
    check(rme == 2048, format!("engine path had {rme} L2 misses"))?;
    Ok(format!("L2 misses direct {row}, engine {rme} ({}x)", row / rme))
}

fn c4_fetched_bytes() -> Outcome {
    let n = 32768;
    let w = Workload::generate(WorkloadSpec::new(64, 4, 0).with_rows(n)).unwrap();
    let cfg = no_prefetch();
    let rme = run("q1", &w, &Ephemeral, Mode::Cold, &cfg);
    let row = run("q1", &w, &RowDirect, Mode::Cold, &cfg);
    check(
        rme.engine_dram_bytes == 16 * n && rme.dram_bytes == 16 * n,
        format!("engine requested {} bytes", rme.engine_dram_bytes),
    )?;
    check(row.dram_bytes == 64 * n, format!("direct path requested {} bytes", row.dram_bytes))?;
    Ok(format!("DRAM bytes engine {} vs direct {}", rme.dram_bytes, row.dram_bytes))
}

fn c5_hot_vs_columnar() -> Outcome {
    let cfg = SimConfig::default();
    let mut report = vec![];
    for c in [1u64, 2, 4, 8] {
        let w = Workload::generate(WorkloadSpec::new(64, c, 0)).unwrap();
        let hot = run("q1", &w, &Ephemeral, Mode::Hot, &cfg).latency_ps;
        let col = run("q1", &w, &Columnar, Mode::Hot, &cfg).latency_ps;
        let row = run("q1", &w, &RowDirect, Mode::Hot, &cfg).latency_ps;
        let ratio = hot as f64 / col as f64;
        check(
            ratio <= HOT_VS_COLUMNAR,
            format!("C={c}: hot/columnar = {ratio:.3}"),
        )?;
        check(
            hot < row && col < row,
            format!("C={c}: hot {hot} columnar {col} direct {row}"),
        )?;
        report.push(format!("C={c} {ratio:.2}"));
    }
    Ok(format!("hot/columnar ratios {}", report.join(", ")))
}

fn c6_row_size() -> Outcome {
    let cfg = SimConfig::default();
    let mut report = vec![];
    for q in ["q2", "q3"] {
        let (mut rme, mut row) = (vec![], vec![]);
        for r in [8u64, 16, 32, 64, 128] {
            let w = Workload::generate(WorkloadSpec::new(r, 4, 0)).unwrap();
            rme.push(run(q, &w, &Ephemeral, Mode::Cold, &cfg).latency_ps);
            row.push(run(q, &w, &RowDirect, Mode::Cold, &cfg).latency_ps);
        }
        let (lo, hi) = (*rme.iter().min().unwrap(), *rme.iter().max().unwrap());
        let spread = (hi - lo) as f64 / lo as f64;
        check(
            spread < ROW_SIZE_SPREAD,
            format!("{q}: engine latency spread {:.1}% ({rme:?})", spread * 100.0),
        )?;
        check(
            row.windows(2).all(|p| p[0] < p[1]),
            format!("{q}: direct latency not increasing ({row:?})"),
        )?;
        report.push(format!("{q} spread {:.2}%", spread * 100.0));
    }
    Ok(report.join(", ") + ", direct increasing")
}

fn c7_variants() -> Outcome {
    let w = Workload::generate(WorkloadSpec::new(64, 4, 0)).unwrap();
    let r: HashMap<&str, RunResult> = ["bsl", "pck", "mlp"]
        .into_iter()
        .map(|v| (v, run("q1", &w, &Ephemeral, Mode::Cold, &with_variant(v))))
        .collect();
    let (b, p, m) = (r["bsl"].latency_ps, r["pck"].latency_ps, r["mlp"].latency_ps);
    check(m < p && p <= b, format!("latencies mlp {m} pck {p} bsl {b}"))?;
    let (wb, wp) = (r["bsl"].engine.spm_writes, r["pck"].engine.spm_writes);
    check(wb == 16 * wp, format!("scratch-pad writes bsl {wb} pck {wp}"))?;
    Ok(format!(
        "mlp {:.0} < pck {:.0} <= bsl {:.0} us; writes {wb} vs {wp}",
        m as f64 / 1e6,
        p as f64 / 1e6,
        b as f64 / 1e6
    ))
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64).abs_diff(b.to_bits() as i64)
}

fn c8_answers() -> Outcome {
    let cfg = SimConfig::default();
    let mut runs = 0;
    for seed in 0..10 {
        let w = Workload::generate(WorkloadSpec::new(64, 4, 0).with_rows(1024).with_seed(seed)).unwrap();
        for q in ["q1", "q2", "q3", "q4", "q5", "q6", "q7"] {
            let spec = QuerySpec::new(q, &w).unwrap();
            if let Err(d) = verify_answers(&spec, &w, &cfg).unwrap() {
                return Err(format!("seed {seed}: {d}"));
            }
            runs += 10;
        }
        // Q7 against the two-pass formula written out here
        let col: Vec<f64> = {
            let a1 = w.field("A1").unwrap();
            (0..w.rows()).map(|i| w.value(i, a1) as f64).collect()
        };
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let ss: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum();
        let want = (ss / (col.len() - 1) as f64).sqrt();
        let QueryAnswer::Float(got) = reference::evaluate("q7", &w, None).unwrap() else {
            return Err("q7 answer is not a float".into());
        };
        check(
            ulps(got, want) <= STD_ULPS,
            format!("seed {seed}: std {got:e} vs formula {want:e}"),
        )?;
    }
    Ok(format!("{runs} runs matched the reference evaluator"))
}

fn c9_protocol_fuzz() -> Outcome {
    let strategies = fetch_strategies();
    let mut responses = 0u64;
    let mut saturations = 0u64;
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let r = rng.gen_range(1..=32u64) * 4;
        let widths: Vec<u64> = [1, 2, 4, 8, 16].into_iter().filter(|&c| c <= r).collect();
        let c = *widths.choose(&mut rng).unwrap();
        let o = rng.gen_range(0..=r - c);
        let n = rng.gen_range(1..=300u64);
        let mut cfg = SimConfig::default();
        cfg.engine.variant = strategies.names()[rng.gen_range(0..3)].into();
        cfg.engine.fetch_unit_count = rng.gen_range(1..=4);
        cfg.engine.max_cpu_outstanding = rng.gen_range(16..=20);
        cfg.timing.max_outstanding = rng.gen_range(1..=16);

        let g = TableGeometry::new(r, n, c, o);
        let mut sys = System::new(cfg.clone(), r * n + 64).unwrap();
        let mut image = vec![0u8; (r * n) as usize];
        rng.fill(&mut image[..]);
        sys.store_mut().write(0, &image).unwrap();
        sys.configure_engine(g, 0).unwrap();
        let packed = oracle_gather(&g, &image).unwrap();

        let lines = g.column_bytes().div_ceil(64);
        let mut order: Vec<u64> = (0..lines).chain((0..lines / 2).map(|_| rng.gen_range(0..lines))).collect();
        order.shuffle(&mut rng);
        let limit = cfg.engine.max_cpu_outstanding;

        let mut issued: HashMap<u64, u64> = HashMap::new();
        let mut seen: HashMap<u64, u32> = HashMap::new();
        let mut next = order.into_iter().enumerate().peekable();
        loop {
            while sys.engine().pending_transactions() < limit {
                let Some((id, line)) = next.next() else { break };
                let at = sys.kernel().now() + rng.gen_range(0..3) * 10_000;
                sys.engine_read(line * 64, id as u64, at).map_err(|e| format!("trial {trial}: {e}"))?;
                issued.insert(id as u64, line);
            }
            if sys.engine().pending_transactions() == limit {
                let extra = sys.engine_read(0, u64::MAX, sys.kernel().now());
                match extra {
                    Err(SystemError::Engine(EngineError::TooManyOutstanding { .. })) => saturations += 1,
                    other => return Err(format!("trial {trial}: saturation not refused: {other:?}")),
                }
            }
            if !sys.step_until_raw_response().map_err(|e| format!("trial {trial}: {e}"))? {
                break;
            }
            for resp in sys.take_raw_responses() {
                let line = issued[&resp.txn_id];
                *seen.entry(resp.txn_id).or_default() += 1;
                let done = sys.engine().buffer().unwrap().completed_at(line);
                check(
                    done.is_some_and(|t| t <= resp.completion_time),
                    format!("trial {trial}: txn {} answered before line {line} completed", resp.txn_id),
                )?;
                let lo = (line * 64) as usize;
                let hi = (lo + 64).min(packed.len());
                check(
                    resp.payload[..hi - lo] == packed[lo..hi],
                    format!("trial {trial}: wrong bytes for line {line}"),
                )?;
                responses += 1;
            }
        }
        sys.run_until_idle().map_err(|e| format!("trial {trial}: {e}"))?;
        check(
            issued.keys().all(|id| seen.get(id) == Some(&1)) && seen.len() == issued.len(),
            format!("trial {trial}: not exactly one response per transaction"),
        )?;
        let st = sys.engine_stats();
        let bound = strategies.get(&cfg.engine.variant).unwrap().max_outstanding();
        check(
            st.max_unit_outstanding <= bound && st.max_cpu_pending <= limit,
            format!("trial {trial}: outstanding bounds exceeded ({st:?})"),
        )?;
        check(
            sys.memory().stats().max_in_flight <= cfg.timing.max_outstanding,
            format!("trial {trial}: memory in-flight bound exceeded"),
        )?;
        check(sys.engine().is_quiescent(), format!("trial {trial}: engine not quiescent"))?;
    }
    Ok(format!("1000 trials, {responses} responses, {saturations} refused saturations"))
}

fn c10_q7_locality() -> Outcome {
    let w = Workload::generate(WorkloadSpec::new(64, 4, 0)).unwrap();
    let mut report = vec![];
    for v in ["bsl", "pck", "mlp"] {
        for mode in Mode::ALL {
            let r = run("q7", &w, &Ephemeral, mode, &with_variant(v));
            check(
                r.pass_engine_bytes.len() == 2 && r.pass_engine_bytes[1] == 0,
                format!("{v}/{mode}: pass bytes {:?}", r.pass_engine_bytes),
            )?;
            report.push(r.pass_engine_bytes[0]);
        }
    }
    Ok(format!("pass 2 fetched 0 bytes; pass 1 fetched {report:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("descriptor oracle equivalence", c1_descriptor_oracle),
        ("offset-spike identity", c2_offset_spikes),
        ("cache-miss ratio", c3_miss_ratio),
        ("fetched-byte economy", c4_fetched_bytes),
        ("hot engine vs columnar", c5_hot_vs_columnar),
        ("row-size flatness", c6_row_size),
        ("variant ordering", c7_variants),
        ("query-answer invariance", c8_answers),
        ("protocol safety and liveness", c9_protocol_fuzz),
        ("Q7 locality", c10_q7_locality),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {:>2} {name}: {msg} [{secs:.1}s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {msg} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
