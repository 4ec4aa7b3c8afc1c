//! Limit simulators run alongside the reference network at `d*`, and the KL divergence of
//! their logit distributions across seeds.

use std::fs;
use std::path::Path;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{LimitKind, ModelVariant, RunConfig};
use super::records::{write_sidecar, RunRecord};
use super::stats::logits_kl;
use super::train::{init_seed, BatchSchedule, Experiment, StepBatches, Trainer};
use crate::error::{Error, Result};
use crate::limits::{build_limit, LimitOptions, LimitState};
use crate::netcore::{mean_loss, Dataset};

/// Logits over the probe inputs at every cadence step: `[step][probe]`.
type Trajectory = Vec<Vec<f64>>;

fn indices(b: &StepBatches) -> (&[usize], &[usize]) {
    (&b.a, b.w.as_deref().unwrap_or(&b.a))
}

/// Builds the simulator of `kind` over `tracked` for seed index `seed`.
pub fn build_kind(cfg: &RunConfig, kind: LimitKind, tracked: &Dataset, seed: u64) -> Result<LimitState> {
    let (region, variant) = kind.region_and_variant();
    let options = LimitOptions {
        antithetic: cfg.limit.antithetic,
        ..LimitOptions::default()
    };
    build_limit(
        region,
        variant,
        tracked,
        cfg.limit.size,
        init_seed(cfg.base_seed, cfg.limit.size, seed),
        &cfg.anchors,
        cfg.activation()?,
        options,
    )
}

/// Rows of the tracked set `train ∪ probes` holding the probes.
fn probe_rows(exp: &Experiment) -> std::ops::Range<usize> {
    exp.train.len()..exp.train.len() + exp.probes.len()
}

fn limit_trajectory(cfg: &RunConfig, exp: &Experiment, tracked: &Dataset, kind: LimitKind, seed: u64) -> Result<Trajectory> {
    let cadence = cfg.cadence.steps(cfg.steps)?;
    let mut state = build_kind(cfg, kind, tracked, seed)?;
    let mut schedule = BatchSchedule::new(cfg.batch, exp.train.len(), cfg.base_seed, seed)?;
    let rows = probe_rows(exp);
    let mut out = Vec::with_capacity(cadence.len());
    for step in 0..=cfg.steps {
        if step > 0 {
            let b = schedule.next_step();
            let (a, w) = indices(&b);
            state.step(a, w)?;
        }
        if cadence.binary_search(&step).is_ok() {
            let f = state.logits_at_width(cfg.anchors.d_star);
            out.push(f.slice(ndarray::s![rows.clone()]).to_vec());
        }
    }
    Ok(out)
}

fn reference_trajectory(cfg: &RunConfig, exp: &Experiment, seed: u64) -> Result<Trajectory> {
    let cadence = cfg.cadence.steps(cfg.steps)?;
    let reference = RunConfig {
        variant: ModelVariant::Standard,
        ..cfg.clone()
    };
    let mut net = Trainer::new(&reference, exp.train.input_dim(), cfg.anchors.d_star, seed)?;
    let mut schedule = BatchSchedule::new(cfg.batch, exp.train.len(), cfg.base_seed, seed)?;
    let mut out = Vec::with_capacity(cadence.len());
    for step in 0..=cfg.steps {
        if step > 0 {
            let b = schedule.next_step();
            net.step_on(&exp.train, &b, schedule.is_full())?;
        }
        if cadence.binary_search(&step).is_ok() {
            out.push(net.logits(exp.probes.inputs())?.to_vec());
        }
    }
    Ok(out)
}

/// Transposes per-seed probe logits into per-probe seed samples.
fn by_probe<'a>(per_seed: impl Iterator<Item = &'a Vec<f64>>, probes: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); probes];
    for logits in per_seed {
        for (p, v) in logits.iter().enumerate() {
            out[p].push(*v);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlRow {
    pub limit_kind: LimitKind,
    pub step: usize,
    pub kl: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KlReport {
    pub rows: Vec<KlRow>,
}

impl KlReport {
    pub fn get(&self, kind: LimitKind, step: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.limit_kind == kind && r.step == step).map(|r| r.kl)
    }

    pub fn final_step(&self) -> Option<usize> {
        self.rows.iter().map(|r| r.step).max()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("limit_kind,step,kl\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.16e}\n", r.limit_kind, r.step, r.kl));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Trains the reference network at `d*` and every configured limit simulator for each seed on
/// shared batches, then reports `logits_kl(limit ‖ reference)` over the probe inputs per recorded step.
pub fn kl_experiment(cfg: &RunConfig) -> Result<KlReport> {
    cfg.validate()?;
    if cfg.seeds.len() < 2 {
        return Err(Error::config("seeds", "gaussian fits need at least 2 seeds"));
    }
    let exp = Experiment::load(cfg)?;
    let tracked = exp.train.concat(&exp.probes)?;
    let cadence = cfg.cadence.steps(cfg.steps)?;
    let kinds = &cfg.limit.kinds;

    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&s| -> Result<(Trajectory, Vec<Trajectory>)> {
            let reference = reference_trajectory(cfg, &exp, s)?;
            let limits = kinds
                .iter()
                .map(|&k| limit_trajectory(cfg, &exp, &tracked, k, s))
                .collect::<Result<Vec<_>>>()?;
            Ok((reference, limits))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (ki, &kind) in kinds.iter().enumerate() {
        for (t, &step) in cadence.iter().enumerate() {
            let lim = by_probe(per_seed.iter().map(|(_, l)| &l[ki][t]), exp.probes.len());
            let refs = by_probe(per_seed.iter().map(|(r, _)| &r[t]), exp.probes.len());
            let est = logits_kl(&lim, &refs)?;
            rows.push(KlRow {
                limit_kind: kind,
                step,
                kl: est.value,
            });
        }
    }
    let report = KlReport { rows };
    if let Some(dir) = &cfg.out {
        report.write_csv(&dir.join("kl.csv"))?;
        write_sidecar(&dir.join("config.json"), cfg)?;
    }
    Ok(report)
}

/// Runs one limit simulator and records train loss, mean absolute probe logit and each probe
/// logit (`probe_logit_<i>`) at width-`d*` scale over the cadence. The run id is `<name>-<kind>`
/// and the width column holds the simulator size.
pub fn limit_run(cfg: &RunConfig, kind: LimitKind, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let exp = Experiment::load(cfg)?;
    let tracked = exp.train.concat(&exp.probes)?;
    let cadence = cfg.cadence.steps(cfg.steps)?;
    let mut state = build_kind(cfg, kind, &tracked, seed)?;
    let mut schedule = BatchSchedule::new(cfg.batch, exp.train.len(), cfg.base_seed, seed)?;
    let run_id = format!("{}-{}", cfg.name, kind);
    let size = cfg.limit.size;
    let (n, rows) = (exp.train.len(), probe_rows(&exp));
    let mut rec = RunRecord::new();
    for step in 0..=cfg.steps {
        if step > 0 {
            let b = schedule.next_step();
            let (a, w) = indices(&b);
            state.step(a, w)?;
        }
        if cadence.binary_search(&step).is_ok() {
            let f: Array1<f64> = state.logits_at_width(cfg.anchors.d_star);
            let train = f.slice(ndarray::s![..n]);
            let probes = f.slice(ndarray::s![rows.clone()]);
            rec.push(&run_id, size, seed, step, "train_loss", mean_loss(exp.train.labels(), &train.to_vec()))?;
            rec.push(&run_id, size, seed, step, "mean_abs_logit", probes.mapv(f64::abs).mean().expect("probes"))?;
            for (i, v) in probes.iter().enumerate() {
                rec.push(&run_id, size, seed, step, &format!("probe_logit_{i}"), *v)?;
            }
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Cadence, DatasetSpec, LimitConfig};

    fn cfg() -> RunConfig {
        RunConfig {
            seeds: (0..4).collect(),
            steps: 6,
            cadence: Cadence::Steps(vec![1, 3]),
            dataset: DatasetSpec::Synthetic {
                d_x: 4,
                n_train: 40,
                n_test: 10,
                mu: 1.5,
                seed: 2,
            },
            probes: 3,
            limit: LimitConfig {
                kinds: LimitKind::ALL.to_vec(),
                size: 256,
                antithetic: true,
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn report_has_one_row_per_kind_and_step() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            out: Some(dir.path().to_path_buf()),
            ..cfg()
        };
        let r = kl_experiment(&c).unwrap();
        assert_eq!(r.rows.len(), 5 * 4);
        assert!(r.rows.iter().all(|row| row.kl.is_finite() && row.kl >= 0.0));
        let csv = std::fs::read_to_string(dir.path().join("kl.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("limit_kind,step,kl"));
        assert_eq!(lines.count(), 20);
        assert_eq!(r, kl_experiment(&c).unwrap());
        // A centred cloud starts at zero logits; the reference does not.
        assert!(r.get(LimitKind::Mf, 0).unwrap() > r.get(LimitKind::Ntk, 0).unwrap());
    }

    #[test]
    fn limit_run_records_probe_logits() {
        let rec = limit_run(&cfg(), LimitKind::Icmf, 1).unwrap();
        assert_eq!(rec.steps(), vec![0, 1, 3, 6]);
        let f0 = rec.get("run-icmf", 256, 1, 0, "probe_logit_0").unwrap();
        assert!(f0 != 0.0);
        assert!(rec.get("run-icmf", 256, 1, 6, "train_loss").unwrap().is_finite());
    }
}
