//! Divides each latency by the matching direct-row cell.

use std::collections::HashMap;
use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("no row-path baseline for plan {plan_id}, {axis}={axis_value}, {query}, mode {mode}")]
    MissingBaseline {
        plan_id: String,
        axis: String,
        axis_value: String,
        query: String,
        mode: String,
    },
    #[error("input lacks column '{0}'")]
    MissingColumn(&'static str),
    #[error("bad latency '{0}'")]
    BadNumber(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

const KEY: [&str; 5] = ["plan_id", "axis", "axis_value", "query", "mode"];

/// Copies the CSV and appends `normalized_latency`, the row's mean latency
/// over the mean latency of the row-path cell with the same key.
pub fn normalize(input: impl Read, output: impl Write) -> Result<usize, NormalizeError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(NormalizeError::MissingColumn(name))
    };
    let key_idx = KEY.map(col);
    let key_idx: Vec<usize> = key_idx.into_iter().collect::<Result<_, _>>()?;
    let (path_idx, mean_idx) = (col("path")?, col("mean_latency_ps")?);

    let rows: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;
    let key = |r: &csv::StringRecord| -> Vec<String> { key_idx.iter().map(|&i| r[i].to_string()).collect() };
    let mean = |r: &csv::StringRecord| -> Result<f64, NormalizeError> {
        r[mean_idx]
            .parse()
            .map_err(|_| NormalizeError::BadNumber(r[mean_idx].to_string()))
    };

    let mut baseline: HashMap<Vec<String>, f64> = HashMap::new();
    for r in rows.iter().filter(|r| &r[path_idx] == "row") {
        baseline.entry(key(r)).or_insert(mean(r)?);
    }

    let mut w = csv::Writer::from_writer(output);
    let mut h = headers.clone();
    h.push_field("normalized_latency");
    w.write_record(&h)?;
    for r in &rows {
        let k = key(r);
        let Some(base) = baseline.get(&k) else {
            return Err(NormalizeError::MissingBaseline {
                plan_id: k[0].clone(),
                axis: k[1].clone(),
                axis_value: k[2].clone(),
                query: k[3].clone(),
                mode: k[4].clone(),
            });
        };
        let mut out = r.clone();
        out.push_field(&(mean(r)? / base).to_string());
        w.write_record(&out)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(rows.len())
}
