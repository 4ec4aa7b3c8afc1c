use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = ["run_id", "width", "seed", "step", "metric", "value"];

/// Row key: `(run_id, width, seed, step, metric)`.
pub type RowKey = (String, usize, u64, usize, String);

/// Long-format metrics keyed by run, width, seed, step and metric name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunRecord {
    rows: BTreeMap<RowKey, f64>,
}

/// Metric name under which a diverged run stores its last finite step.
pub const DIVERGED_METRIC: &str = "diverged_last_finite_step";

impl RunRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a row, rejecting a duplicate key.
    pub fn push(&mut self, run_id: &str, width: usize, seed: u64, step: usize, metric: &str, value: f64) -> Result<()> {
        let key = (run_id.to_string(), width, seed, step, metric.to_string());
        if self.rows.contains_key(&key) {
            return Err(Error::InvalidParameter(format!("duplicate row {key:?}")));
        }
        self.rows.insert(key, value);
        Ok(())
    }

    pub fn merge(&mut self, other: RunRecord) -> Result<()> {
        for (k, v) in other.rows {
            if self.rows.insert(k.clone(), v).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate row {k:?}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows in key order.
    pub fn rows(&self) -> impl Iterator<Item = (&RowKey, f64)> {
        self.rows.iter().map(|(k, &v)| (k, v))
    }

    pub fn get(&self, run_id: &str, width: usize, seed: u64, step: usize, metric: &str) -> Option<f64> {
        self.rows
            .get(&(run_id.to_string(), width, seed, step, metric.to_string()))
            .copied()
    }

    /// `(step, value)` pairs of one metric for one run cell, by step.
    pub fn series(&self, width: usize, seed: u64, metric: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|((_, w, s, _, m), _)| *w == width && *s == seed && m == metric)
            .map(|((_, _, _, step, _), &v)| (*step, v))
            .collect()
    }

    /// Last finite step of a run that diverged, if it did.
    pub fn diverged(&self, width: usize, seed: u64) -> Option<usize> {
        self.series(width, seed, DIVERGED_METRIC).first().map(|&(_, v)| v as usize)
    }

    pub fn steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rows.keys().map(|k| k.3).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for ((run, width, seed, step, metric), v) in &self.rows {
            w.write_record([
                run.clone(),
                width.to_string(),
                seed.to_string(),
                step.to_string(),
                metric.clone(),
                format!("{v:.16e}"),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::InvalidParameter(format!("unexpected header {header:?}")));
        }
        let mut rec = RunRecord::new();
        for row in r.records() {
            let row = row.map_err(csv_err)?;
            let field = |i: usize| row.get(i).unwrap_or_default();
            let bad = |i: usize| Error::InvalidParameter(format!("bad {} field `{}`", CSV_HEADER[i], field(i)));
            rec.push(
                field(0),
                field(1).parse().map_err(|_| bad(1))?,
                field(2).parse().map_err(|_| bad(2))?,
                field(3).parse().map_err(|_| bad(3))?,
                field(4),
                field(5).parse().map_err(|_| bad(5))?,
            )?;
        }
        Ok(rec)
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

/// Writes `value` as pretty JSON next to a CSV output.
pub fn write_sidecar<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_keys_rejected() {
        let mut r = RunRecord::new();
        r.push("a", 128, 0, 0, "loss", 1.0).unwrap();
        assert!(r.push("a", 128, 0, 0, "loss", 2.0).is_err());
        r.push("a", 128, 0, 1, "loss", 2.0).unwrap();
        assert_eq!(r.series(128, 0, "loss"), vec![(0, 1.0), (1, 2.0)]);
    }

    #[test]
    fn csv_layout() {
        let mut r = RunRecord::new();
        r.push("b", 256, 1, 5, "test_acc", 0.1).unwrap();
        r.push("a", 128, 0, 0, "loss", f64::NAN).unwrap();
        let s = r.to_csv_string().unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "run_id,width,seed,step,metric,value");
        assert_eq!(lines[1], "a,128,0,0,loss,NaN");
        assert_eq!(lines[2], "b,256,1,5,test_acc,1.0000000000000001e-1");
        assert!(!s.contains('\r'));
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in proptest::collection::vec(proptest::num::f64::ANY, 1..20)) {
            let mut r = RunRecord::new();
            for (i, v) in vals.iter().enumerate() {
                r.push("run", 128 << (i % 3), i as u64, i, &format!("m{i}"), *v).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("out/metrics.csv");
            r.write_csv(&path).unwrap();
            let back = RunRecord::read_csv(&path).unwrap();
            prop_assert_eq!(back.len(), r.len());
            for ((k, a), (k2, b)) in r.rows().zip(back.rows()) {
                prop_assert_eq!(k, k2);
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }
}
