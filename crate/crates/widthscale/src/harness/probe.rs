//! Width-scaling probes of logits, kernels and kernel increments near initialization.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::stats::{estimate_exponent, ExponentFit};
use super::train::{BatchSchedule, Experiment, Trainer};
use crate::error::Result;
use crate::kernels::{delta_k_aw_prime, delta_k_wa_prime, delta_k_ww_prime, GradSample};

/// Training points used as gradient samples for kernel increments.
pub const GRAD_SAMPLES: usize = 2;

/// Scale statistics of one network state over the probe inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    /// `E_x |f(x)|`.
    pub abs_logit: f64,
    /// `E_{x,x'} |K_a(x,x')|` over probe pairs.
    pub abs_kernel_a: f64,
    pub abs_kernel_w: f64,
    /// `E |η̂*_a K_a + η̂*_w K_w|`.
    pub abs_kernel: f64,
    /// `E |ΔK'/K|` for the `η̂*`-weighted kernel, where
    /// `ΔK' = η̂*_a η̂*_w (ΔK'_aw + ΔK'_wa) + η̂*_w² ΔK'_ww` is its first-order one-step change.
    pub kernel_change_ratio: f64,
}

impl ProbeStats {
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("abs_logit", self.abs_logit),
            ("abs_kernel_a", self.abs_kernel_a),
            ("abs_kernel_w", self.abs_kernel_w),
            ("abs_kernel", self.abs_kernel),
            ("kernel_change_ratio", self.kernel_change_ratio),
        ]
    }

    fn add_scaled(&mut self, o: &ProbeStats, w: f64) {
        self.abs_logit += w * o.abs_logit;
        self.abs_kernel_a += w * o.abs_kernel_a;
        self.abs_kernel_w += w * o.abs_kernel_w;
        self.abs_kernel += w * o.abs_kernel;
        self.kernel_change_ratio += w * o.kernel_change_ratio;
    }
}

pub fn probe_stats(trainer: &Trainer, exp: &Experiment) -> Result<ProbeStats> {
    let xs = exp.probes.inputs();
    let f = trainer.logits(xs)?;
    let ctx = trainer.kernel_context()?;
    let (ka, kw) = ctx.gram(xs)?;
    let (ea, ew) = (ctx.anchors.eta_hat_a_star, ctx.anchors.eta_hat_w_star);
    let grads = (0..GRAD_SAMPLES.min(exp.train.len()))
        .map(|i| GradSample::at(&ctx, &exp.train.x(i).to_vec(), exp.train.y(i)))
        .collect::<Result<Vec<_>>>()?;
    let n = xs.nrows();
    let rows: Vec<Vec<f64>> = xs.rows().into_iter().map(|r| r.to_vec()).collect();
    let (mut sa, mut sw, mut sk, mut sr, mut pairs, mut ratios) = (0.0, 0.0, 0.0, 0.0, 0usize, 0usize);
    for i in 0..n {
        for j in i..n {
            let k = ea * ka[[i, j]] + ew * kw[[i, j]];
            sa += ka[[i, j]].abs();
            sw += kw[[i, j]].abs();
            sk += k.abs();
            pairs += 1;
            for g in &grads {
                let dk = ea * ew * (delta_k_aw_prime(&ctx, g, &rows[i], &rows[j])? + delta_k_wa_prime(&ctx, g, &rows[i], &rows[j])?)
                    + ew * ew * delta_k_ww_prime(&ctx, g, &rows[i], &rows[j])?;
                sr += (dk / k).abs();
                ratios += 1;
            }
        }
    }
    Ok(ProbeStats {
        abs_logit: f.mapv(f64::abs).mean().expect("probes"),
        abs_kernel_a: sa / pairs as f64,
        abs_kernel_w: sw / pairs as f64,
        abs_kernel: sk / pairs as f64,
        kernel_change_ratio: sr / ratios.max(1) as f64,
    })
}

/// Probe statistics at initialization and after `steps.len()` further steps of the configured schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellProbe {
    pub width: usize,
    pub seed: u64,
    /// Entry `k` holds the statistics after `k` steps.
    pub by_step: Vec<ProbeStats>,
}

/// Probes the `(width, seed)` cell at steps `0..=max_step`.
pub fn probe_cell(cfg: &RunConfig, exp: &Experiment, width: usize, seed: u64, max_step: usize) -> Result<CellProbe> {
    let mut trainer = Trainer::new(cfg, exp.train.input_dim(), width, seed)?;
    let mut schedule = BatchSchedule::new(cfg.batch, exp.train.len(), cfg.base_seed, seed)?;
    let mut by_step = vec![probe_stats(&trainer, exp)?];
    for _ in 0..max_step {
        let b = schedule.next_step();
        trainer.step_on(&exp.train, &b, schedule.is_full())?;
        by_step.push(probe_stats(&trainer, exp)?);
    }
    Ok(CellProbe { width, seed, by_step })
}

/// Seed-averaged statistics per width and their power-law fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub widths: Vec<usize>,
    /// `means[k][w]`: seed average after `k` steps at `widths[w]`.
    pub means: Vec<Vec<ProbeStats>>,
    /// Fits keyed `<statistic>_step<k>`.
    pub fits: BTreeMap<String, ExponentFit>,
}

impl ProbeReport {
    pub fn fit(&self, stat: &str, step: usize) -> Option<&ExponentFit> {
        self.fits.get(&format!("{stat}_step{step}"))
    }
}

/// Runs [`probe_cell`] over every width and seed of `cfg` (in parallel) and fits exponents.
pub fn exponent_probe(cfg: &RunConfig, exp: &Experiment, max_step: usize) -> Result<ProbeReport> {
    let cells: Vec<(usize, u64)> = cfg.widths.iter().flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s))).collect();
    let probes = cells
        .par_iter()
        .map(|&(w, s)| probe_cell(cfg, exp, w, s, max_step))
        .collect::<Result<Vec<_>>>()?;
    let weight = 1.0 / cfg.seeds.len() as f64;
    let mut means = vec![vec![ProbeStats::default(); cfg.widths.len()]; max_step + 1];
    for p in &probes {
        let wi = cfg.widths.iter().position(|&w| w == p.width).expect("known width");
        for (k, st) in p.by_step.iter().enumerate() {
            means[k][wi].add_scaled(st, weight);
        }
    }
    let xs: Vec<f64> = cfg.widths.iter().map(|&w| w as f64).collect();
    let mut fits = BTreeMap::new();
    for (k, per_width) in means.iter().enumerate() {
        for (idx, (name, _)) in ProbeStats::default().named().iter().enumerate() {
            let ys: Vec<f64> = per_width.iter().map(|s| s.named()[idx].1).collect();
            match estimate_exponent(&xs, &ys) {
                Ok(fit) => {
                    fits.insert(format!("{name}_step{k}"), fit);
                }
                Err(e) => log::warn!("no fit for {name} at step {k}: {e}"),
            }
        }
    }
    Ok(ProbeReport {
        widths: cfg.widths.clone(),
        means,
        fits,
    })
}
