use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;

use super::metrics::MetricsRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Mean,
    Median,
}

impl std::str::FromStr for Stat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Stat::Mean),
            "median" => Ok(Stat::Median),
            other => Err(Error::InvalidArgument(format!("unknown statistic `{other}` (expected mean or median)"))),
        }
    }
}

/// One (sweep value, method) summary. Failed rows and NaN entries are skipped
/// per column; `failures` counts rows that carried an error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub sweep_value: f64,
    pub method: String,
    pub trials: usize,
    pub failures: usize,
    pub mse_aod: f64,
    pub mse_aoa: f64,
    pub nmse_channel: f64,
    pub nmse_signal: f64,
    pub estimated_paths: f64,
    pub converged_fraction: f64,
}

fn summarize(mut v: Vec<f64>, stat: Stat) -> f64 {
    v.retain(|x| !x.is_nan());
    if v.is_empty() {
        return f64::NAN;
    }
    match stat {
        Stat::Mean => v.iter().sum::<f64>() / v.len() as f64,
        Stat::Median => {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        }
    }
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Group rows by sweep value (in order of first appearance) and method.
pub fn aggregate(rows: &[MetricsRow], stat: Stat) -> Vec<AggregateRow> {
    let mut order: Vec<u64> = Vec::new();
    let mut groups: BTreeMap<(usize, String), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let key = r.sweep_value.to_bits();
        let idx = order.iter().position(|&k| k == key).unwrap_or_else(|| {
            order.push(key);
            order.len() - 1
        });
        groups.entry((idx, r.method.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((idx, method), g)| {
            let ok: Vec<&&MetricsRow> = g.iter().filter(|r| r.error.is_empty()).collect();
            let col = |f: fn(&MetricsRow) -> f64| summarize(ok.iter().map(|r| f(r)).collect(), stat);
            AggregateRow {
                sweep_value: f64::from_bits(order[idx]),
                method,
                trials: g.len(),
                failures: g.len() - ok.len(),
                mse_aod: col(|r| r.mse_aod),
                mse_aoa: col(|r| r.mse_aoa),
                nmse_channel: col(|r| r.nmse_channel),
                nmse_signal: col(|r| r.nmse_signal),
                estimated_paths: col(|r| r.estimated_paths as f64),
                converged_fraction: if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().filter(|r| r.converged).count() as f64 / ok.len() as f64
                },
            }
        })
        .collect()
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
