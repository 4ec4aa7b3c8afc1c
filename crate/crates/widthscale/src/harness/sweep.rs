use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::probe::{exponent_probe, ProbeReport};
use super::records::{write_sidecar, RunRecord};
use super::stats::{estimate_exponent, ExponentFit};
use super::train::{train_run_on, Experiment};
use crate::error::{Error, Result};

/// A `(width, seed)` cell that failed, with the error text.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellFailure {
    pub width: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub record: RunRecord,
    /// Keys: `init_abs_logit`, `init_kernel`, `init_kernel_a`, `init_kernel_w`,
    /// `init_kernel_change_ratio`, and `logit_scale_step<k>` for every recorded step `k`.
    pub fits: BTreeMap<String, ExponentFit>,
    pub probe: ProbeReport,
    pub failures: Vec<CellFailure>,
}

/// Seed average of `metric` at `step` per width, skipping cells without that row.
fn seed_means(record: &RunRecord, cfg: &RunConfig, metric: &str, step: usize) -> Option<Vec<f64>> {
    cfg.widths
        .iter()
        .map(|&w| {
            let vals: Vec<f64> = cfg
                .seeds
                .iter()
                .filter_map(|&s| record.get(&cfg.name, w, s, step, metric))
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Trains every `(width, seed)` cell, probes initialization, and fits width exponents.
/// Failing cells are reported in [`SweepOutput::failures`] rather than aborting the sweep.
pub fn width_sweep(cfg: &RunConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    if cfg.widths.len() < 3 {
        return Err(Error::config("widths", "a sweep needs at least 3 widths"));
    }
    let exp = Experiment::load(cfg)?;
    let cells: Vec<(usize, u64)> = cfg.widths.iter().flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s))).collect();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(w, s)| (w, s, train_run_on(cfg, &exp, w, s)))
        .collect();
    let mut record = RunRecord::new();
    let mut failures = Vec::new();
    for (width, seed, r) in results {
        match r {
            Ok(rec) => record.merge(rec)?,
            Err(e) => {
                log::warn!("cell width {width} seed {seed} failed: {e}");
                failures.push(CellFailure {
                    width,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }

    let probe = exponent_probe(cfg, &exp, 0)?;
    let mut fits = BTreeMap::new();
    for (key, stat) in [
        ("init_abs_logit", "abs_logit"),
        ("init_kernel", "abs_kernel"),
        ("init_kernel_a", "abs_kernel_a"),
        ("init_kernel_w", "abs_kernel_w"),
        ("init_kernel_change_ratio", "kernel_change_ratio"),
    ] {
        if let Some(f) = probe.fit(stat, 0) {
            fits.insert(key.to_string(), *f);
        }
    }
    let xs: Vec<f64> = cfg.widths.iter().map(|&w| w as f64).collect();
    for step in record.steps() {
        if let Some(ys) = seed_means(&record, cfg, "mean_abs_logit", step) {
            if let Ok(f) = estimate_exponent(&xs, &ys) {
                fits.insert(format!("logit_scale_step{step}"), f);
            }
        }
    }

    let out = SweepOutput {
        record,
        fits,
        probe,
        failures,
    };
    if let Some(dir) = &cfg.out {
        persist(dir, cfg, &out)?;
    }
    Ok(out)
}

/// Writes `metrics.csv`, `fits.json` and the `config.json` sidecar into `dir`.
pub fn persist(dir: &Path, cfg: &RunConfig, out: &SweepOutput) -> Result<()> {
    out.record.write_csv(&dir.join("metrics.csv"))?;
    #[derive(Serialize)]
    struct Fits<'a> {
        fits: &'a BTreeMap<String, ExponentFit>,
        failures: &'a [CellFailure],
    }
    write_sidecar(
        &dir.join("fits.json"),
        &Fits {
            fits: &out.fits,
            failures: &out.failures,
        },
    )?;
    write_sidecar(&dir.join("config.json"), cfg)
}
