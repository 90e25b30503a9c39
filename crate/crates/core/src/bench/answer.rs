use std::collections::BTreeMap;

use crate::tables::checksum;

/// Result of one benchmark query.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryAnswer {
    /// Emitted tuples, each `width` bytes, concatenated in scan order.
    Tuples { width: u64, data: Vec<u8> },
    Scalar(u128),
    /// Mean of the aggregated column per group key.
    Groups(BTreeMap<u128, f64>),
    Float(f64),
}

impl QueryAnswer {
    pub fn is_empty(&self) -> bool {
        match self {
            QueryAnswer::Tuples { data, .. } => data.is_empty(),
            QueryAnswer::Scalar(v) => *v == 0,
            QueryAnswer::Groups(g) => g.is_empty(),
            QueryAnswer::Float(v) => *v == 0.0,
        }
    }

    /// Stable digest of the answer, floats by bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut enc = Vec::new();
        match self {
            QueryAnswer::Tuples { width, data } => {
                enc.push(0);
                enc.extend_from_slice(&width.to_le_bytes());
                enc.extend_from_slice(data);
            }
            QueryAnswer::Scalar(v) => {
                enc.push(1);
                enc.extend_from_slice(&v.to_le_bytes());
            }
            QueryAnswer::Groups(g) => {
                enc.push(2);
                for (k, v) in g {
                    enc.extend_from_slice(&k.to_le_bytes());
                    enc.extend_from_slice(&v.to_bits().to_le_bytes());
                }
            }
            QueryAnswer::Float(v) => {
                enc.push(3);
                enc.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        checksum(&enc)
    }

    /// Describes the first place where `got` differs from `self`.
    pub fn first_divergence(&self, got: &QueryAnswer) -> Option<String> {
        match (self, got) {
            (
                QueryAnswer::Tuples { width, data: a },
                QueryAnswer::Tuples { width: wb, data: b },
            ) => {
                if width != wb {
                    return Some(format!("tuple width {wb}, expected {width}"));
                }
                let w = *width as usize;
                if let Some(i) = a.iter().zip(b).position(|(x, y)| x != y) {
                    return Some(format!(
                        "tuple {} byte {}: got {:#04x}, expected {:#04x}",
                        i / w,
                        i % w,
                        b[i],
                        a[i]
                    ));
                }
                (a.len() != b.len()).then(|| {
                    format!("{} tuples, expected {}", b.len() / w.max(1), a.len() / w.max(1))
                })
            }
            (QueryAnswer::Scalar(a), QueryAnswer::Scalar(b)) => {
                (a != b).then(|| format!("got {b}, expected {a}"))
            }
            (QueryAnswer::Float(a), QueryAnswer::Float(b)) => {
                (a.to_bits() != b.to_bits()).then(|| format!("got {b:e}, expected {a:e}"))
            }
            (QueryAnswer::Groups(a), QueryAnswer::Groups(b)) => {
                for (k, v) in a {
                    match b.get(k) {
                        None => return Some(format!("group {k} missing")),
                        Some(x) if x.to_bits() != v.to_bits() => {
                            return Some(format!("group {k}: got {x:e}, expected {v:e}"))
                        }
                        _ => {}
                    }
                }
                b.keys()
                    .find(|k| !a.contains_key(k))
                    .map(|k| format!("unexpected group {k}"))
            }
            _ => Some(format!("answer kind differs: got {got:?}")),
        }
    }
}
