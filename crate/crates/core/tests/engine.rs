use proptest::prelude::*;

use rme_core::engine::{EngineConfig, EngineError, EngineParams, RelationalEngine};
use rme_core::geometry::{oracle_gather, BusConfig, TableGeometry};
use rme_core::memsim::TimingParams;
use rme_core::system::{SimConfig, System};

fn geometry() -> impl Strategy<Value = TableGeometry> {
    (1u64..=32, 1u64..=200)
        .prop_flat_map(|(r4, n)| {
            let r = r4 * 4;
            (Just(r), Just(n), prop::sample::select(vec![1u64, 2, 4, 8, 16]))
        })
        .prop_filter("column fits", |(r, _, c)| c <= r)
        .prop_flat_map(|(r, n, c)| (Just(r), Just(n), Just(c), 0..=r - c))
        .prop_map(|(r, n, c, o)| TableGeometry::new(r, n, c, o))
}

fn loaded(cfg: SimConfig, g: TableGeometry, seed: u8) -> (System, Vec<u8>) {
    let mut sys = System::new(cfg, g.table_bytes() + 64).unwrap();
    let image: Vec<u8> = (0..g.table_bytes()).map(|i| (i as u8).wrapping_mul(31) ^ seed).collect();
    sys.store_mut().write(0, &image).unwrap();
    sys.configure_engine(g, 0).unwrap();
    (sys, image)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn warm_buffer_matches_gather(
        g in geometry(),
        variant in prop::sample::select(vec!["bsl", "pck", "mlp"]),
        units in 1usize..=4,
        seed: u8,
    ) {
        let mut cfg = SimConfig::default();
        cfg.engine.variant = variant.into();
        cfg.engine.fetch_unit_count = units;
        let (mut sys, image) = loaded(cfg, g, seed);
        sys.warm_engine().unwrap();
        let buf = sys.engine().buffer().unwrap();
        prop_assert!(buf.all_complete());
        prop_assert_eq!(buf.data(), &oracle_gather(&g, &image).unwrap()[..]);
        let st = sys.engine_stats();
        prop_assert_eq!(st.dispatches, g.row_count);
        if variant == "bsl" {
            prop_assert_eq!(st.spm_writes, g.row_count);
        } else {
            prop_assert!(st.spm_writes >= buf.lines());
            prop_assert!(st.spm_writes <= g.row_count + buf.lines());
        }
    }

    #[test]
    fn reset_then_rewarm_is_identical(g in geometry(), seed: u8) {
        let (mut sys, _) = loaded(SimConfig::default(), g, seed);
        sys.warm_engine().unwrap();
        let first = sys.engine().buffer().unwrap().data().to_vec();
        sys.engine_mut().reset_cold().unwrap();
        prop_assert!(!sys.engine().buffer().unwrap().is_complete(0));
        sys.warm_engine().unwrap();
        prop_assert_eq!(sys.engine().buffer().unwrap().data(), &first[..]);
    }

    #[test]
    fn reads_through_caches_match_gather(g in geometry(), seed: u8, stride in 1u64..5) {
        let (mut sys, image) = loaded(SimConfig::default(), g, seed);
        let packed = oracle_gather(&g, &image).unwrap();
        let c = g.column_width;
        let mut slots = vec![];
        for i in (0..g.row_count).step_by(stride as usize) {
            slots.push((i, sys.read(rme_core::system::EPHEMERAL_BASE + i * c, c).unwrap()));
        }
        sys.finish().unwrap();
        for (i, s) in slots {
            let got = &sys.values()[s..s + c as usize];
            prop_assert_eq!(got, &packed[(i * c) as usize..((i + 1) * c) as usize]);
        }
        let st = sys.cache_stats();
        prop_assert_eq!(st.l2_requests, st.l1_misses + st.prefetch_issued);
        prop_assert!(sys.cache().audit_inclusion());
    }
}

#[test]
fn hit_after_completion_is_fast() {
    let g = TableGeometry::new(64, 64, 4, 0);
    let (mut sys, _) = loaded(SimConfig::default(), g, 0);
    let t = sys.warm_engine().unwrap();
    sys.engine_read(0, 7, t).unwrap();
    assert!(sys.step_until_raw_response().unwrap());
    let r = sys.take_raw_responses().pop().unwrap();
    // CDC in, two lookup cycles, CDC out
    assert_eq!(r.completion_time - t, 100_000 + 20_000 + 100_000);
    assert_eq!(sys.engine_stats().hits, 1);
}

#[test]
fn miss_waits_for_line() {
    let g = TableGeometry::new(64, 64, 4, 0);
    let (mut sys, _) = loaded(SimConfig::default(), g, 0);
    sys.engine_read(64, 1, 0).unwrap();
    assert!(sys.step_until_raw_response().unwrap());
    let r = sys.take_raw_responses().pop().unwrap();
    let done = sys.engine().buffer().unwrap().completed_at(1).unwrap();
    assert!(r.completion_time >= done);
    assert_eq!(sys.engine_stats().misses, 1);
}

#[test]
fn protocol_errors() {
    let g = TableGeometry::new(64, 64, 4, 0);
    let (mut sys, _) = loaded(SimConfig::default(), g, 0);
    let err = |r: Result<(), rme_core::system::SystemError>| r.unwrap_err().to_string();
    assert!(err(sys.engine_read(4, 1, 0)).contains("aligned"));
    assert!(err(sys.engine_read(256, 1, 0)).contains("ephemeral"));
    sys.engine_read(0, 1, 0).unwrap();
    assert!(err(sys.engine_read(64, 1, 0)).contains("already pending"));
    assert!(matches!(
        sys.engine_mut().configure(EngineConfig {
            geometry: g,
            table_base: 0,
            params: EngineParams::default(),
        }),
        Err(EngineError::ReconfigureWhilePending)
    ));

    let mut bare = RelationalEngine::new(TimingParams::default(), BusConfig::default());
    let bad = EngineParams {
        variant: "zzz".into(),
        ..EngineParams::default()
    };
    let e = bare
        .configure(EngineConfig { geometry: g, table_base: 0, params: bad })
        .unwrap_err();
    assert!(e.to_string().contains("bsl"), "{e}");
}

#[test]
fn more_units_do_not_slow_baseline() {
    let g = TableGeometry::new(64, 512, 4, 0);
    let time = |units| {
        let mut cfg = SimConfig::default();
        cfg.engine.variant = "bsl".into();
        cfg.engine.fetch_unit_count = units;
        let (mut sys, _) = loaded(cfg, g, 0);
        sys.warm_engine().unwrap()
    };
    let (one, four) = (time(1), time(4));
    assert!(four < one, "{four} vs {one}");
}
