//! Metrics rows, CSV output and table-style summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "method,split,metric,value,seed,step";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub step: u64,
}

impl MetricsRow {
    pub fn new(method: &str, split: &str, metric: &str, value: f64, seed: u64, step: u64) -> Self {
        Self {
            method: method.into(),
            split: split.into(),
            metric: metric.into(),
            value,
            seed,
            step,
        }
    }
}

fn check_field(s: &str) -> Result<()> {
    if s.contains([',', '\n', '"']) {
        return Err(Error::Format(format!("metrics field {s:?} contains a separator")));
    }
    Ok(())
}

/// CSV text with header. Values print in shortest round-trip form, so
/// identical rows always give identical bytes.
pub fn to_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        for f in [&r.method, &r.split, &r.metric] {
            check_field(f)?;
        }
        let _ = writeln!(s, "{},{},{},{},{},{}", r.method, r.split, r.metric, r.value, r.seed, r.step);
    }
    Ok(s)
}

pub fn from_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Format(format!("metrics CSV must start with {CSV_HEADER:?}")));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("metrics CSV line {}: {line:?}", n + 2));
        if f.len() != 6 {
            return Err(bad());
        }
        out.push(MetricsRow {
            method: f[0].into(),
            split: f[1].into(),
            metric: f[2].into(),
            value: f[3].parse().map_err(|_| bad())?,
            seed: f[4].parse().map_err(|_| bad())?,
            step: f[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

/// Mean, population standard deviation and median. Empty input gives NaNs.
pub fn stats(values: &[f64]) -> Stats {
    let n = values.len();
    if n == 0 {
        return Stats {
            n,
            mean: f64::NAN,
            std: f64::NAN,
            median: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Stats {
        n,
        mean,
        std: var.sqrt(),
        median: median(values),
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Values of one (method, split, metric) taken at each seed's last step.
pub fn final_values(rows: &[MetricsRow], method: &str, split: &str, metric: &str) -> Vec<f64> {
    let mut last: BTreeMap<u64, (u64, f64)> = BTreeMap::new();
    for r in rows {
        if r.method == method && r.split == split && r.metric == metric {
            let e = last.entry(r.seed).or_insert((r.step, r.value));
            if r.step >= e.0 {
                *e = (r.step, r.value);
            }
        }
    }
    last.into_values().map(|(_, v)| v).collect()
}

/// `{metric: {method: {split: stats}}}` over final values across seeds.
pub fn summarize(rows: &[MetricsRow]) -> Value {
    let mut keys: BTreeMap<&str, BTreeMap<&str, Vec<&str>>> = BTreeMap::new();
    for r in rows {
        let splits = keys.entry(&r.metric).or_default().entry(&r.method).or_default();
        if !splits.contains(&r.split.as_str()) {
            splits.push(&r.split);
        }
    }
    let mut out = serde_json::Map::new();
    for (metric, methods) in keys {
        let mut m = serde_json::Map::new();
        for (method, splits) in methods {
            let mut s = serde_json::Map::new();
            for split in splits {
                let st = stats(&final_values(rows, method, split, metric));
                s.insert(split.to_string(), json!(st));
            }
            m.insert(method.to_string(), Value::Object(s));
        }
        out.insert(metric.to_string(), Value::Object(m));
    }
    Value::Object(out)
}
