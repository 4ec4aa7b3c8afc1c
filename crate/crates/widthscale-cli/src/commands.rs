use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::Value;

use widthscale::harness::{
    apply_override, exponent_probe, kl_experiment, limit_run, load_cifar2, train_run_on, width_sweep, write_sidecar,
    Experiment, RunConfig, RunRecord,
};
use widthscale::scaling::{
    classify_region, condition_values, gradient_regime, is_dynamically_stable, ScalingExponents, SIGN_TOL,
};
use widthscale::Error;

use crate::{ClassifyArgs, Command, IngestArgs, ProbeArgs, RunArgs, EXIT_CONFIG, EXIT_IO, EXIT_UNSTABLE};

const DEFAULT_OUT: &str = "widthscale-out";

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Config { .. } | Error::Json(_) => EXIT_CONFIG,
                Error::Io(_) | Error::Ingest { .. } | Error::CorruptRecord { .. } => EXIT_IO,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    1
}

pub fn run(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Classify(a) => classify(&a),
        Command::Train(a) => train(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Limit(a) => limit(&a),
        Command::Probe(a) => probe(&a),
        Command::Kl(a) => kl(&a),
        Command::IngestCheck(a) => ingest_check(&a),
    }
}

fn config_error(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Reads the configuration, applies overrides and command-line settings, and validates it.
fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut doc = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(Error::Io)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<Value>(&text).map_err(|e| config_error("<document>", e.to_string()))?
        }
        None => RunConfig::default().to_value(),
    };
    for o in &args.overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| config_error(o, "override must look like KEY=VALUE"))?;
        apply_override(&mut doc, key.trim(), value.trim())?;
    }
    let mut cfg = RunConfig::from_value(doc)?;
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    if cfg.out.is_none() {
        cfg.out = Some(PathBuf::from(DEFAULT_OUT));
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn fmt_list(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn classify(a: &ClassifyArgs) -> Result<u8> {
    let exp = match &a.scaling {
        Some(name) => ScalingExponents::by_name(name)
            .ok_or_else(|| config_error("scaling", format!("unknown scaling `{name}`")))?,
        None => ScalingExponents::symmetric(a.q_sigma.unwrap_or_default(), a.q_tilde.unwrap_or_default())?,
    };
    let q_tilde = exp.taxonomy_q_tilde()?;
    let cv = condition_values(&exp)?;
    println!("scaling: q_sigma = {}, q_tilde = {}", exp.q_sigma, q_tilde);
    println!(
        "condition values: s1 = {}, s2 = {}, s3 = {}, s4 = {}",
        cv.s1, cv.s2, cv.s3, cv.s4
    );
    if !is_dynamically_stable(&exp, SIGN_TOL)? {
        println!(
            "stability: outside dynamical stability band (q_sigma + q_tilde = {}, need -1/2 <= q_sigma + q_tilde <= 0)",
            cv.s4
        );
        return Ok(EXIT_UNSTABLE);
    }
    println!("stability: dynamically stable");
    let region = classify_region(&exp, SIGN_TOL)?;
    let regime = gradient_regime(region);
    println!("region: {region} ({:?}, signs {})", region.kind(), region.pattern_string());
    println!(
        "kernels: {}; initial logits: {}; gradient at init: {}; late gradient: {}",
        format!("{:?}", regime.kernel_mode).to_lowercase(),
        format!("{:?}", regime.init_logit_mode).to_lowercase(),
        format!("{:?}", regime.init_grad_mode).to_lowercase(),
        format!("{:?}", regime.late_grad_mode).to_lowercase(),
    );
    let (mut holds, mut fails) = (Vec::new(), Vec::new());
    for (i, s) in cv.as_array().iter().enumerate() {
        if s.abs() <= SIGN_TOL {
            holds.push(i + 1);
        } else {
            fails.push(i + 1);
        }
    }
    let list = |v: &[usize]| if v.is_empty() { "none".to_string() } else { fmt_list(v) };
    println!("finite-width properties: satisfies properties {}; violates {}", list(&holds), list(&fails));
    Ok(0)
}

fn train(args: &RunArgs) -> Result<u8> {
    let cfg = load_config(args)?;
    let exp = Experiment::load(&cfg)?;
    let cells: Vec<(usize, u64)> = cfg.widths.iter().flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s))).collect();
    let records = cells
        .par_iter()
        .map(|&(w, s)| train_run_on(&cfg, &exp, w, s))
        .collect::<widthscale::Result<Vec<_>>>()?;
    let mut all = RunRecord::new();
    let mut diverged = 0;
    for (r, &(w, s)) in records.into_iter().zip(&cells) {
        diverged += usize::from(r.diverged(w, s).is_some());
        all.merge(r)?;
    }
    let dir = out_dir(&cfg);
    all.write_csv(&dir.join("metrics.csv"))?;
    write_sidecar(&dir.join("config.json"), &cfg)?;
    let mut parts = Vec::new();
    for &w in &cfg.widths {
        let finals: Vec<(f64, f64)> = cfg
            .seeds
            .iter()
            .filter_map(|&s| {
                let loss = all.get(&cfg.name, w, s, cfg.steps, "train_loss")?;
                let acc = all.get(&cfg.name, w, s, cfg.steps, "test_acc")?;
                Some((loss, acc))
            })
            .collect();
        if finals.is_empty() {
            continue;
        }
        let n = finals.len() as f64;
        let (l, a) = finals.iter().fold((0.0, 0.0), |(l, a), (x, y)| (l + x, a + y));
        parts.push(format!("d={w} loss {:.4} acc {:.3}", l / n, a / n));
    }
    println!(
        "train: {} runs ({} diverged) -> {}; step {}: {}",
        cells.len(),
        diverged,
        dir.join("metrics.csv").display(),
        cfg.steps,
        parts.join(", ")
    );
    Ok(0)
}

fn sweep(args: &RunArgs) -> Result<u8> {
    let cfg = load_config(args)?;
    let out = width_sweep(&cfg)?;
    let shown: Vec<String> = out
        .fits
        .iter()
        .filter(|(k, _)| k.starts_with("init_") || *k == &format!("logit_scale_step{}", cfg.steps))
        .map(|(k, f)| format!("{k} {:+.3}±{:.3}", f.slope, f.stderr))
        .collect();
    println!(
        "sweep: {} rows, {} failed cells -> {}; slopes: {}",
        out.record.len(),
        out.failures.len(),
        out_dir(&cfg).display(),
        shown.join(", ")
    );
    Ok(0)
}

fn limit(args: &RunArgs) -> Result<u8> {
    let cfg = load_config(args)?;
    let jobs: Vec<_> = cfg.limit.kinds.iter().flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s))).collect();
    let records = jobs
        .par_iter()
        .map(|&(k, s)| limit_run(&cfg, k, s))
        .collect::<widthscale::Result<Vec<_>>>()?;
    let mut all = RunRecord::new();
    for r in records {
        all.merge(r)?;
    }
    let dir = out_dir(&cfg);
    all.write_csv(&dir.join("limit.csv"))?;
    write_sidecar(&dir.join("config.json"), &cfg)?;
    let parts: Vec<String> = cfg
        .limit
        .kinds
        .iter()
        .map(|k| {
            let id = format!("{}-{k}", cfg.name);
            let vals: Vec<f64> = cfg
                .seeds
                .iter()
                .filter_map(|&s| all.get(&id, cfg.limit.size, s, cfg.steps, "train_loss"))
                .collect();
            format!("{k} train loss {:.4}", vals.iter().sum::<f64>() / vals.len().max(1) as f64)
        })
        .collect();
    println!(
        "limit: {} simulations at size {} -> {}; step {}: {}",
        jobs.len(),
        cfg.limit.size,
        dir.join("limit.csv").display(),
        cfg.steps,
        parts.join(", ")
    );
    Ok(0)
}

fn probe(args: &ProbeArgs) -> Result<u8> {
    let mut cfg = load_config(&args.run)?;
    if let Some(name) = &args.scaling {
        cfg.scaling = ScalingExponents::by_name(name)
            .ok_or_else(|| config_error("scaling", format!("unknown scaling `{name}`")))?;
    }
    if cfg.widths.len() < 3 {
        return Err(config_error("widths", "probing needs at least 3 widths").into());
    }
    let exp = Experiment::load(&cfg)?;
    let report = exponent_probe(&cfg, &exp, args.steps)?;
    let dir = out_dir(&cfg);
    write_sidecar(&dir.join("probe.json"), &report)?;
    write_sidecar(&dir.join("config.json"), &cfg)?;
    let mut parts = Vec::new();
    for (label, stat, step) in [
        ("f0", "abs_logit", 0),
        ("K0", "abs_kernel", 0),
        ("K0_a", "abs_kernel_a", 0),
        ("K0_w", "abs_kernel_w", 0),
        ("dK/K", "kernel_change_ratio", 0),
    ] {
        if let Some(f) = report.fit(stat, step) {
            parts.push(format!("{label} {:+.3}±{:.3}", f.slope, f.stderr));
        }
    }
    if let Some(f) = report.fit("kernel_change_ratio", args.steps) {
        parts.push(format!("dK/K after {} step(s) {:+.3}±{:.3}", args.steps, f.slope, f.stderr));
    }
    println!("probe: widths {} -> {}; slopes: {}", fmt_list(&cfg.widths), dir.join("probe.json").display(), parts.join(", "));
    Ok(0)
}

fn kl(args: &RunArgs) -> Result<u8> {
    let cfg = load_config(args)?;
    let report = kl_experiment(&cfg)?;
    let last = report.final_step().unwrap_or(0);
    let parts: Vec<String> = cfg
        .limit
        .kinds
        .iter()
        .filter_map(|&k| report.get(k, last).map(|v| format!("{k} {v:.4}")))
        .collect();
    println!(
        "kl: {} rows -> {}; step {last}: {}",
        report.rows.len(),
        out_dir(&cfg).join("kl.csv").display(),
        parts.join(", ")
    );
    Ok(0)
}

fn ingest_check(a: &IngestArgs) -> Result<u8> {
    let (train, test) = load_cifar2(&a.dir)?;
    let count = |ys: &[f64]| ys.iter().filter(|&&y| y > 0.0).count();
    println!(
        "ingest-check: {}: train {} ({} airplane, {} automobile), test {} ({} airplane, {} automobile), {} features",
        a.dir.display(),
        train.len(),
        count(train.labels()),
        train.len() - count(train.labels()),
        test.len(),
        count(test.labels()),
        test.len() - count(test.labels()),
        train.input_dim()
    );
    Ok(0)
}
