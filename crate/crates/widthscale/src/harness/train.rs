use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cifar::load_cifar2;
use super::config::{BatchConfig, BatchMode, DatasetSpec, ModelVariant, RunConfig};
use super::records::{RunRecord, DIVERGED_METRIC};
use super::synth::synth_dataset;
use crate::error::{Error, Result};
use crate::kernels::{kernel_diag_summary, KernelContext};
use crate::netcore::{
    icmf_logits, icmf_sgd_step_in_place, init_params, logits, mean_loss, sgd_step_in_place, ActivationConfig, Dataset,
    InitSnapshot, Params,
};
use crate::scaling::{hyperparams_at, Anchors, Hyperparams, ScalingExponents};
use crate::seed::{run_seed, stream_seed, Stream};

/// Train and test splits plus the fixed probe inputs (the first `probes` test rows).
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub train: Dataset,
    pub test: Dataset,
    pub probes: Dataset,
}

impl Experiment {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let (train, test) = match &cfg.dataset {
            DatasetSpec::Synthetic {
                d_x,
                n_train,
                n_test,
                mu,
                seed,
            } => synth_dataset(*d_x, *n_train, *n_test, *mu, *seed)?,
            DatasetSpec::Cifar2 { dir } => load_cifar2(dir)?,
        };
        Self::from_splits(train, test, cfg.probes)
    }

    pub fn from_splits(train: Dataset, test: Dataset, probes: usize) -> Result<Self> {
        if probes == 0 || probes > test.len() {
            return Err(Error::config(
                "probes",
                format!("need between 1 and {} probe inputs, got {probes}", test.len()),
            ));
        }
        let probes = test.head(probes);
        Ok(Self { train, test, probes })
    }
}

/// Seed of the batch stream for seed index `seed_index`; independent of width so that runs of
/// every width (and limit simulators) see the same batches.
pub fn batch_seed(base_seed: u64, seed_index: u64) -> u64 {
    stream_seed(run_seed(base_seed, 0, seed_index), Stream::Batches)
}

/// Seed of the initial parameters of the run at `width`.
pub fn init_seed(base_seed: u64, width: usize, seed_index: u64) -> u64 {
    stream_seed(run_seed(base_seed, width as u64, seed_index), Stream::Init)
}

/// Training indices for each step.
#[derive(Clone, Debug)]
pub struct BatchSchedule {
    cfg: BatchConfig,
    n: usize,
    rng: ChaCha8Rng,
}

/// Indices of one step's batches; `w` is `None` when both layers see the same batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepBatches {
    pub a: Vec<usize>,
    pub w: Option<Vec<usize>>,
}

impl BatchSchedule {
    pub fn new(cfg: BatchConfig, n_train: usize, base_seed: u64, seed_index: u64) -> Result<Self> {
        if n_train == 0 {
            return Err(Error::EmptyBatch);
        }
        if cfg.mode == BatchMode::Minibatch && (cfg.size == 0 || cfg.size > n_train) {
            return Err(Error::config(
                "batch.size",
                format!("minibatch size must be in 1..={n_train}, got {}", cfg.size),
            ));
        }
        Ok(Self {
            cfg,
            n: n_train,
            rng: ChaCha8Rng::seed_from_u64(batch_seed(base_seed, seed_index)),
        })
    }

    pub fn is_full(&self) -> bool {
        self.cfg.mode == BatchMode::Full
    }

    fn draw(&mut self) -> Vec<usize> {
        match self.cfg.mode {
            BatchMode::Full => (0..self.n).collect(),
            BatchMode::Minibatch => sample(&mut self.rng, self.n, self.cfg.size).into_vec(),
        }
    }

    pub fn next_step(&mut self) -> StepBatches {
        let a = self.draw();
        let w = (self.cfg.independent && !self.is_full()).then(|| self.draw());
        StepBatches { a, w }
    }
}

/// A finite network of one width, standard or IC-MF, with its hyperparameters.
#[derive(Clone, Debug)]
pub struct Trainer {
    params: Params,
    snapshot: Option<InitSnapshot>,
    hyper: Hyperparams,
    exponents: ScalingExponents,
    anchors: Anchors,
    activation: ActivationConfig,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, d_x: usize, width: usize, seed_index: u64) -> Result<Self> {
        let params = init_params(width, d_x, init_seed(cfg.base_seed, width, seed_index), cfg.init)?;
        let snapshot = (cfg.variant == ModelVariant::Icmf).then(|| InitSnapshot::capture(&params));
        Ok(Self {
            hyper: hyperparams_at(&cfg.scaling, &cfg.anchors, width)?,
            params,
            snapshot,
            exponents: cfg.scaling,
            anchors: cfg.anchors,
            activation: cfg.activation()?,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn logits(&self, xs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        match &self.snapshot {
            None => logits(&self.params, self.hyper.sigma, xs, self.activation),
            Some(snap) => icmf_logits(&self.params, snap, &self.anchors, xs, self.activation),
        }
    }

    pub fn step(&mut self, batch_a: &Dataset, batch_w: &Dataset) -> Result<()> {
        match &self.snapshot {
            None => sgd_step_in_place(&mut self.params, &self.hyper, batch_a, batch_w, self.activation),
            Some(snap) => icmf_sgd_step_in_place(
                &mut self.params,
                snap,
                &self.hyper,
                &self.anchors,
                batch_a,
                batch_w,
                self.activation,
            ),
        }
    }

    /// Takes one step on the training rows named by `batches`.
    pub fn step_on(&mut self, train: &Dataset, batches: &StepBatches, full: bool) -> Result<()> {
        if full {
            return self.step(train, train);
        }
        let a = train.select(&batches.a)?;
        match &batches.w {
            None => self.step(&a, &a),
            Some(w) => {
                let w = train.select(w)?;
                self.step(&a, &w)
            }
        }
    }

    /// Kernels of the trained part of the network.
    pub fn kernel_context(&self) -> Result<KernelContext<'_>> {
        KernelContext::new(&self.params, self.exponents, self.anchors, self.activation)
    }

    /// `η̂*`-weighted Gram matrix, normalized when the scaling allows it.
    pub fn weighted_gram(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let ctx = self.kernel_context()?;
        match ctx.normalized_gram(xs) {
            Ok(g) => Ok(g),
            Err(Error::NonSymmetricScaling { .. }) => {
                let (ka, kw) = ctx.gram(xs)?;
                Ok(ka * self.anchors.eta_hat_a_star + kw * self.anchors.eta_hat_w_star)
            }
            Err(e) => Err(e),
        }
    }
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Metrics of one network state.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub mean_abs_logit: f64,
    pub kernel_diag: f64,
    pub logit_kernel_ratio: f64,
    pub kernel_drift: f64,
}

impl StepMetrics {
    pub fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("train_loss", self.train_loss),
            ("test_loss", self.test_loss),
            ("test_acc", self.test_acc),
            ("mean_abs_logit", self.mean_abs_logit),
            ("kernel_diag", self.kernel_diag),
            ("logit_kernel_ratio", self.logit_kernel_ratio),
            ("kernel_drift", self.kernel_drift),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, v)| v.is_finite())
    }
}

fn measure(trainer: &Trainer, exp: &Experiment, gram0: &Array2<f64>) -> Result<StepMetrics> {
    let f_train = trainer.logits(exp.train.inputs())?;
    let f_test = trainer.logits(exp.test.inputs())?;
    let f_probe = trainer.logits(exp.probes.inputs())?;
    let correct = f_test.iter().zip(exp.test.labels()).filter(|(f, y)| **f * **y > 0.0).count();
    let ctx = trainer.kernel_context()?;
    let mut ratio = 0.0;
    for (i, row) in exp.probes.inputs().rows().into_iter().enumerate() {
        let diag = kernel_diag_summary(&ctx, row.insert_axis(ndarray::Axis(0)))?;
        ratio += f_probe[i].abs() / diag;
    }
    let gram = trainer.weighted_gram(exp.probes.inputs())?;
    Ok(StepMetrics {
        train_loss: mean_loss(exp.train.labels(), f_train.as_slice().expect("contiguous")),
        test_loss: mean_loss(exp.test.labels(), f_test.as_slice().expect("contiguous")),
        test_acc: correct as f64 / exp.test.len() as f64,
        mean_abs_logit: f_probe.mapv(f64::abs).mean().expect("probes"),
        kernel_diag: kernel_diag_summary(&ctx, exp.probes.inputs())?,
        logit_kernel_ratio: ratio / exp.probes.len() as f64,
        kernel_drift: frobenius(&(&gram - gram0)) / frobenius(gram0),
    })
}

/// Trains one `(width, seed)` cell on `exp`, recording metrics at the configured cadence.
/// A run whose parameters or metrics stop being finite is cut short and marked with
/// [`DIVERGED_METRIC`] at its last finite step.
pub fn train_run_on(cfg: &RunConfig, exp: &Experiment, width: usize, seed: u64) -> Result<RunRecord> {
    let cadence = cfg.cadence.steps(cfg.steps)?;
    let mut trainer = Trainer::new(cfg, exp.train.input_dim(), width, seed)?;
    let mut schedule = BatchSchedule::new(cfg.batch, exp.train.len(), cfg.base_seed, seed)?;
    let gram0 = trainer.weighted_gram(exp.probes.inputs())?;
    let mut rec = RunRecord::new();
    let emit = |rec: &mut RunRecord, step: usize, m: &StepMetrics| -> Result<()> {
        for (name, v) in m.named() {
            rec.push(&cfg.name, width, seed, step, name, v)?;
        }
        Ok(())
    };
    let mut last_finite = 0;
    let mut next = cadence.iter().copied().peekable();
    for step in 0..=cfg.steps {
        if step > 0 {
            let batches = schedule.next_step();
            trainer.step_on(&exp.train, &batches, schedule.is_full())?;
            if !trainer.params().is_finite() {
                log::info!("{} width {width} seed {seed} diverged at step {step}", cfg.name);
                rec.push(&cfg.name, width, seed, last_finite, DIVERGED_METRIC, last_finite as f64)?;
                return Ok(rec);
            }
        }
        if next.peek() == Some(&step) {
            next.next();
            let m = measure(&trainer, exp, &gram0)?;
            if !m.is_finite() {
                rec.push(&cfg.name, width, seed, last_finite, DIVERGED_METRIC, last_finite as f64)?;
                return Ok(rec);
            }
            emit(&mut rec, step, &m)?;
        }
        last_finite = step;
    }
    Ok(rec)
}

/// [`train_run_on`] with the dataset loaded from the configuration.
pub fn train_run(cfg: &RunConfig, width: usize, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let exp = Experiment::load(cfg)?;
    train_run_on(cfg, &exp, width, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Cadence;

    fn small_cfg() -> RunConfig {
        RunConfig {
            widths: vec![16],
            seeds: vec![0],
            steps: 20,
            dataset: DatasetSpec::Synthetic {
                d_x: 4,
                n_train: 64,
                n_test: 40,
                mu: 1.5,
                seed: 1,
            },
            probes: 5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_steps_emit_only_step_zero() {
        let cfg = RunConfig { steps: 0, ..small_cfg() };
        let rec = train_run(&cfg, 16, 0).unwrap();
        assert_eq!(rec.steps(), vec![0]);
        assert_eq!(rec.len(), 7);
        assert_eq!(rec.get("run", 16, 0, 0, "kernel_drift"), Some(0.0));
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let cfg = small_cfg();
        let a = train_run(&cfg, 16, 0).unwrap();
        assert_eq!(a, train_run(&cfg, 16, 0).unwrap());
        assert_ne!(a, train_run(&cfg, 16, 1).unwrap());
        assert_eq!(a.steps(), vec![0, 1, 2, 5, 10, 20]);
    }

    #[test]
    fn reference_run_learns() {
        let cfg = RunConfig {
            steps: 200,
            cadence: Cadence::Steps(vec![]),
            ..small_cfg()
        };
        let rec = train_run(&cfg, 128, 0).unwrap();
        let l0 = rec.get("run", 128, 0, 0, "train_loss").unwrap();
        let l1 = rec.get("run", 128, 0, 200, "train_loss").unwrap();
        assert!(l1 < l0, "{l0} -> {l1}");
    }

    #[test]
    fn unstable_scaling_is_marked_diverged() {
        let cfg = RunConfig {
            scaling: ScalingExponents::symmetric(0.5, 2.0).unwrap(),
            steps: 50,
            ..small_cfg()
        };
        let rec = train_run(&cfg, 1 << 14, 0).unwrap();
        let last = rec.diverged(1 << 14, 0).expect("diverges");
        assert!(last < 50);
    }

    #[test]
    fn batch_schedule_is_width_independent_and_reproducible() {
        let bc = BatchConfig {
            mode: BatchMode::Minibatch,
            size: 8,
            independent: true,
        };
        let mut s1 = BatchSchedule::new(bc, 100, 3, 2).unwrap();
        let mut s2 = BatchSchedule::new(bc, 100, 3, 2).unwrap();
        for _ in 0..5 {
            let b = s1.next_step();
            assert_eq!(b, s2.next_step());
            assert_eq!(b.a.len(), 8);
            assert!(b.w.is_some());
        }
        assert!(BatchSchedule::new(BatchConfig { size: 101, ..bc }, 100, 0, 0).is_err());
        let mut full = BatchSchedule::new(BatchConfig::default(), 3, 0, 0).unwrap();
        assert_eq!(full.next_step(), StepBatches { a: vec![0, 1, 2], w: None });
    }

    #[test]
    fn icmf_trainer_matches_standard_at_anchor() {
        let mut cfg = small_cfg();
        cfg.anchors.d_star = 16;
        let std_rec = train_run(&RunConfig { scaling: ScalingExponents::mean_field(), ..cfg.clone() }, 16, 0).unwrap();
        let ic = RunConfig {
            scaling: ScalingExponents::mean_field(),
            variant: ModelVariant::Icmf,
            ..cfg
        };
        let ic_rec = train_run(&ic, 16, 0).unwrap();
        for ((k, a), (_, b)) in std_rec.rows().zip(ic_rec.rows()) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{k:?}: {a} vs {b}");
        }
    }
}
