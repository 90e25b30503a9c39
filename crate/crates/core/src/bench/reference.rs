//! Plain in-process evaluator: reads the row image directly, no simulation.

use std::collections::BTreeMap;

use super::{BenchError, QueryAnswer, Workload};

fn col(w: &Workload, name: &str) -> Result<Vec<u128>, BenchError> {
    let f = w.field(name)?;
    Ok((0..w.rows()).map(|i| w.value(i, f)).collect())
}

fn raw(w: &Workload, name: &str) -> Result<Vec<Vec<u8>>, BenchError> {
    let f = w.field(name)?;
    Ok((0..w.rows()).map(|i| w.bytes(i, f).to_vec()).collect())
}

fn k_of(id: &'static str, k: Option<u128>) -> Result<u128, BenchError> {
    k.ok_or(BenchError::MissingConstant(id))
}

/// Sample standard deviation with the `n - 1` denominator, mean from the
/// exact integer sum.
pub fn sample_std(values: &[u128]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0u128;
    for v in values {
        sum = sum.wrapping_add(*v);
    }
    let mean = sum as f64 / n as f64;
    let mut ss = 0.0;
    for v in values {
        ss += (*v as f64 - mean).powi(2);
    }
    (ss / (n - 1) as f64).sqrt()
}

pub fn evaluate(query: &str, w: &Workload, k: Option<u128>) -> Result<QueryAnswer, BenchError> {
    let width = |name| w.field(name).map(|f| f.width);
    Ok(match query.to_ascii_lowercase().as_str() {
        "q1" => QueryAnswer::Tuples {
            width: width("A1")?,
            data: raw(w, "A1")?.concat(),
        },
        "q2" => {
            let k = k_of("q2", k)?;
            let a2 = col(w, "A2")?;
            let data = raw(w, "A1")?
                .into_iter()
                .zip(a2)
                .filter(|(_, g)| *g > k)
                .flat_map(|(v, _)| v)
                .collect();
            QueryAnswer::Tuples {
                width: width("A1")?,
                data,
            }
        }
        "q3" => {
            let mut data = Vec::new();
            for (x, y) in raw(w, "A1")?.into_iter().zip(raw(w, "A2")?) {
                data.extend(x);
                data.extend(y);
            }
            QueryAnswer::Tuples {
                width: width("A1")? + width("A2")?,
                data,
            }
        }
        "q4" => QueryAnswer::Scalar(col(w, "A1")?.iter().fold(0, |a: u128, v| a.wrapping_add(*v))),
        "q5" => {
            let k = k_of("q5", k)?;
            let mut s = 0u128;
            for (a1, a2) in col(w, "A1")?.into_iter().zip(col(w, "A2")?) {
                if a1 < k {
                    s = s.wrapping_add(a2);
                }
            }
            QueryAnswer::Scalar(s)
        }
        "q6" => {
            let k = k_of("q6", k)?;
            let (a1, a2, a3) = (col(w, "A1")?, col(w, "A2")?, col(w, "A3")?);
            let mut acc: BTreeMap<u128, Vec<u128>> = BTreeMap::new();
            for i in 0..a1.len() {
                if a3[i] < k {
                    acc.entry(a2[i]).or_default().push(a1[i]);
                }
            }
            QueryAnswer::Groups(
                acc.into_iter()
                    .map(|(g, vs)| {
                        let s = vs.iter().fold(0u128, |a, v| a.wrapping_add(*v));
                        (g, s as f64 / vs.len() as f64)
                    })
                    .collect(),
            )
        }
        "q7" => QueryAnswer::Float(sample_std(&col(w, "A1")?)),
        _ => {
            return Err(BenchError::Unknown(crate::registry::UnknownName {
                kind: "query",
                name: query.into(),
                known: (1..=7).map(|i| format!("q{i}")).collect(),
            }))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::WorkloadSpec;

    #[test]
    fn hand_evaluated_examples() {
        assert_eq!(sample_std(&[7, 7, 7]), 0.0);
        assert!((sample_std(&[1, 2, 3, 4]) - 1.2909944487358056).abs() < 1e-15);
        let w = Workload::from_columns(
            WorkloadSpec::new(16, 4, 0),
            &[vec![2, 4, 6], vec![1, 1, 2], vec![0, 0, 0]],
        )
        .unwrap();
        assert_eq!(
            evaluate("q6", &w, Some(1)).unwrap(),
            QueryAnswer::Groups([(1, 3.0), (2, 6.0)].into())
        );
        assert_eq!(evaluate("Q4", &w, None).unwrap(), QueryAnswer::Scalar(12));
        assert_eq!(evaluate("q5", &w, Some(5)).unwrap(), QueryAnswer::Scalar(2));
        assert!(evaluate("q9", &w, None).is_err());
        assert!(matches!(
            evaluate("q2", &w, None),
            Err(BenchError::MissingConstant("q2"))
        ));
    }
}
