use proptest::prelude::*;
use rme_core::tables::{decode_int, dump_table, generate_rows, read_dump, Field, Schema};

fn schemas() -> impl Strategy<Value = Schema> {
    prop::collection::vec((1u64..24, any::<bool>(), prop::option::of(1u64..100)), 1..8).prop_map(
        |fs| {
            let fields = fs
                .into_iter()
                .enumerate()
                .map(|(i, (w, text, dom))| {
                    let name = format!("f{i}");
                    match (text, dom) {
                        (true, _) => Field::text(&name, w),
                        (false, Some(d)) => Field::integer(&name, w).with_domain(d),
                        (false, None) => Field::integer(&name, w),
                    }
                })
                .collect();
            Schema::new(fields).unwrap()
        },
    )
}

proptest! {
    #[test]
    fn dump_round_trips(schema in schemas(), n in 0u64..50, seed in any::<u64>()) {
        let rows = generate_rows(&schema, n, seed);
        prop_assert_eq!(rows.len() as u64, n * schema.row_size());
        prop_assert_eq!(&rows, &generate_rows(&schema, n, seed));
        let mut buf = vec![];
        dump_table(&mut buf, &schema, n, seed, &rows).unwrap();
        let (s, n2, seed2, rows2) = read_dump(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(s, schema);
        prop_assert_eq!((n2, seed2), (n, seed));
        prop_assert_eq!(rows2, rows);
    }

    #[test]
    fn generated_values_respect_field_kinds(schema in schemas(), seed in any::<u64>()) {
        let rows = generate_rows(&schema, 32, seed);
        for row in rows.chunks(schema.row_size() as usize) {
            for (i, f) in schema.fields().iter().enumerate() {
                let off = schema.offset(i) as usize;
                let bytes = &row[off..off + f.width as usize];
                if let Some(d) = f.domain {
                    prop_assert!(decode_int(bytes) < d);
                }
                if f.width > 8 && f.domain.is_some() {
                    prop_assert!(bytes[8..].iter().all(|&b| b == 0));
                }
            }
        }
    }
}
