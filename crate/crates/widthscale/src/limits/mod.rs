//! Simulators of the infinite-width limit dynamics.
//!
//! Limits are functions of the input, so every simulator works over a fixed, pre-registered
//! set of tracked inputs (with labels); batches are index lists into that set.
//!
//! * Constant-kernel regimes (`s4 < 0`) evolve normalized logits with a frozen Monte-Carlo kernel table.
//! * Evolving regimes (`s4 = 0`) transport a particle cloud discretizing the weight-space measure;
//!   at `N = d` the cloud is exactly a width-`d` network.
//! * IC-MF adds a frozen initial logit field to the mean-field particle logits.

mod mc;

use ndarray::{Array1, ArrayView2};

use crate::error::{Error, Result};
use crate::netcore::{apply_update, grad_unchecked, raw_readout, ActivationConfig, Dataset, Features, Params};
use crate::scaling::{condition_values, gradient_regime, Anchors, GradMode, GradientRegime, InitLogitMode, KernelMode, RegionId, ScalingExponents};
use crate::seed::{stream_seed, Stream};

pub use mc::{mc_init_variance, mc_limit_kernel, sample_init_bias, KernelKind, LimitKernelTable};

/// Particles `(â_r, ŵ_r)` discretizing the weight-space measure, stored like a width-`N` network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    particles: Params,
}

impl ParticleCloud {
    pub fn new(particles: Params) -> Self {
        Self { particles }
    }

    pub fn count(&self) -> usize {
        self.particles.width()
    }

    pub fn particles(&self) -> &Params {
        &self.particles
    }

    /// `σ* d* (1/N) Σ â φ(ŵ·x)` for every row of `xs`.
    fn normalized_logits(&self, xs: ArrayView2<'_, f64>, anchors: &Anchors, cfg: ActivationConfig) -> Array1<f64> {
        raw_readout(&self.particles, xs, cfg) * self.readout_scale(anchors)
    }

    fn readout_scale(&self, anchors: &Anchors) -> f64 {
        anchors.sigma_star * anchors.d_star as f64 / self.count() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitVariant {
    Plain,
    /// Mean-field dynamics plus a frozen initial logit field.
    Icmf,
    /// Sym-default dynamics started from `â = 0`.
    DefaultInit,
}

/// Gradient value for the sign law when the normalized logit is exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieRule {
    /// `-y/2`, the average of the two one-sided limits.
    #[default]
    Midpoint,
    /// `0`, the literal indicator `[f y < 0]`.
    Indicator,
}

/// How batch gradients are formed from normalized logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradientLaw {
    /// The regime's limit gradient modes.
    #[default]
    Limit,
    /// Sigmoid gradient of the width-`width` logit `(width/d*)^{link} f̃`, which makes an
    /// `N = width` cloud reproduce the finite network exactly.
    FiniteWidth { width: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimitOptions {
    /// Pair every particle with its `â`-negated twin, so an evolving cloud starts at `f̃ = 0`.
    /// Initial logit fields and IC-MF biases are always drawn independently.
    pub antithetic: bool,
    pub tie_rule: TieRule,
    pub gradient_law: GradientLaw,
    /// Draws for the initial logit field and IC-MF bias; `None` uses the simulator size.
    pub field_samples: Option<usize>,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self {
            antithetic: false,
            tie_rule: TieRule::Midpoint,
            gradient_law: GradientLaw::Limit,
            field_samples: None,
        }
    }
}

/// Limit gradient of mode `mode` at logit `f` and label `y`.
pub fn limit_grad(mode: GradMode, f: f64, y: f64, tie: TieRule) -> f64 {
    match mode {
        GradMode::HalfY => -0.5 * y,
        GradMode::Sigmoid => grad_unchecked(y, f),
        GradMode::Sign => {
            let t = f * y;
            if t < 0.0 {
                -y
            } else if t > 0.0 {
                0.0
            } else {
                match tie {
                    TieRule::Midpoint => -0.5 * y,
                    TieRule::Indicator => 0.0,
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Dynamics {
    Constant { table: LimitKernelTable, f_tilde: Array1<f64> },
    Evolving { cloud: ParticleCloud },
}

/// State of a limit simulation at step `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitState {
    regime: GradientRegime,
    variant: LimitVariant,
    anchors: Anchors,
    activation: ActivationConfig,
    options: LimitOptions,
    tracked: Dataset,
    dynamics: Dynamics,
    /// Sampled initial logit field, used by the first gradient when the initial logit does not vanish.
    init_logit: Option<Array1<f64>>,
    init_bias: Option<Array1<f64>>,
    /// Exponent `e` with finite logit `(d/d*)^e f̃`.
    link_exponent: f64,
    /// Size of the simulator (particles or Monte-Carlo draws), used when reporting logits.
    size: usize,
    step: usize,
}

fn regime_link_exponent(region: RegionId, variant: LimitVariant) -> Result<f64> {
    Ok(match variant {
        LimitVariant::Icmf => 0.0,
        // Zero initial output weights make the finite logit grow like d rather than d^{1/2}.
        LimitVariant::DefaultInit => 1.0,
        LimitVariant::Plain => {
            let e = region_representative(region);
            condition_values(&e)?.s2
        }
    })
}

/// A scaling inside `region`; the region's dynamics depend only on the signs of the condition values.
pub fn region_representative(region: RegionId) -> ScalingExponents {
    let (q_sigma, s4) = match region {
        RegionId::Ntk => (-0.5, -0.5),
        RegionId::LowerLeftOfNtk => (-0.75, -0.5),
        RegionId::LowerRightOfNtk => (-0.25, -0.5),
        RegionId::MeanField => (-1.0, 0.0),
        RegionId::SymDefault => (-0.5, 0.0),
        RegionId::UpperLeftOfMf => (-1.25, 0.0),
        RegionId::UpperBetweenMfAndSymDefault => (-0.75, 0.0),
        RegionId::UpperRightOfSymDefault => (-0.25, 0.0),
        RegionId::FiniteLogitLine => (-0.5, -0.25),
        RegionId::FiniteKernelLine => (-0.75, -0.25),
        RegionId::LeftFace => (-1.0, -0.25),
        RegionId::MiddleFace => (-0.625, -0.25),
        RegionId::RightFace => (0.0, -0.25),
    };
    ScalingExponents::symmetric(q_sigma, s4 - q_sigma).expect("finite")
}

/// Allocates the simulator for `region` over `tracked` with `size` particles (evolving regimes)
/// or Monte-Carlo draws (constant-kernel regimes). `seed` seeds the particle cloud directly, so a
/// cloud built with the seed of a finite network of width `size` is that network.
pub fn build_limit(
    region: RegionId,
    variant: LimitVariant,
    tracked: &Dataset,
    size: usize,
    seed: u64,
    anchors: &Anchors,
    cfg: ActivationConfig,
    options: LimitOptions,
) -> Result<LimitState> {
    if size == 0 {
        return Err(Error::InvalidParameter("limit simulator size must be at least 1".into()));
    }
    if tracked.is_empty() {
        return Err(Error::EmptySample);
    }
    match variant {
        LimitVariant::Icmf if region != RegionId::MeanField => {
            return Err(Error::IncompatibleVariant(format!("IC-MF needs the MF regime, got {region}")))
        }
        LimitVariant::DefaultInit if region != RegionId::SymDefault => {
            return Err(Error::IncompatibleVariant(format!(
                "default initialization needs the sym-default regime, got {region}"
            )))
        }
        _ => {}
    }
    let regime = gradient_regime(region);
    let xs = tracked.inputs();
    let d_x = tracked.input_dim();
    let field_m = options.field_samples.unwrap_or(size);
    let field = |stream: Stream| -> Result<Array1<f64>> {
        let p = mc::sample_cloud(field_m, d_x, stream_seed(seed, stream), false)?;
        Ok(mc::init_field(&p, xs, anchors, cfg))
    };

    let needs_init_logit = variant != LimitVariant::Icmf
        && (regime.init_logit_mode == InitLogitMode::Gaussian || regime.init_grad_mode != GradMode::HalfY);
    let init_logit = if needs_init_logit { Some(field(Stream::InitLogit)?) } else { None };
    let init_bias = if variant == LimitVariant::Icmf { Some(field(Stream::Bias)?) } else { None };

    let dynamics = match regime.kernel_mode {
        KernelMode::Constant => {
            let table = LimitKernelTable::build(xs, size, stream_seed(seed, Stream::Kernel), anchors, cfg)?;
            let f_tilde = match regime.init_logit_mode {
                InitLogitMode::Gaussian => init_logit.clone().expect("sampled above"),
                InitLogitMode::Zero => Array1::zeros(tracked.len()),
            };
            Dynamics::Constant { table, f_tilde }
        }
        KernelMode::Evolving => {
            let mut particles = mc::sample_cloud(size, d_x, seed, options.antithetic)?;
            if variant == LimitVariant::DefaultInit {
                particles.a_hat_mut().fill(0.0);
            }
            Dynamics::Evolving {
                cloud: ParticleCloud::new(particles),
            }
        }
    };

    Ok(LimitState {
        regime,
        variant,
        anchors: *anchors,
        activation: cfg,
        options,
        tracked: tracked.clone(),
        dynamics,
        init_logit,
        init_bias,
        link_exponent: regime_link_exponent(region, variant)?,
        size,
        step: 0,
    })
}

impl LimitState {
    pub fn regime(&self) -> GradientRegime {
        self.regime
    }

    pub fn variant(&self) -> LimitVariant {
        self.variant
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn tracked(&self) -> &Dataset {
        &self.tracked
    }

    pub fn link_exponent(&self) -> f64 {
        self.link_exponent
    }

    pub fn options(&self) -> &LimitOptions {
        &self.options
    }

    pub fn cloud(&self) -> Option<&ParticleCloud> {
        match &self.dynamics {
            Dynamics::Evolving { cloud } => Some(cloud),
            Dynamics::Constant { .. } => None,
        }
    }

    pub fn table(&self) -> Option<&LimitKernelTable> {
        match &self.dynamics {
            Dynamics::Constant { table, .. } => Some(table),
            Dynamics::Evolving { .. } => None,
        }
    }

    pub fn init_bias(&self) -> Option<&Array1<f64>> {
        self.init_bias.as_ref()
    }

    pub fn init_logit(&self) -> Option<&Array1<f64>> {
        self.init_logit.as_ref()
    }

    /// Replaces the IC-MF bias, e.g. with the exact correction term of a finite network.
    pub fn with_init_bias(mut self, bias: Array1<f64>) -> Result<Self> {
        if self.variant != LimitVariant::Icmf {
            return Err(Error::IncompatibleVariant("only IC-MF states carry an initial bias".into()));
        }
        if bias.len() != self.tracked.len() {
            return Err(Error::Shape(format!(
                "bias has {} entries for {} tracked inputs",
                bias.len(),
                self.tracked.len()
            )));
        }
        self.init_bias = Some(bias);
        Ok(self)
    }

    /// Normalized logits `f̃` over all tracked inputs (without the IC-MF bias).
    pub fn f_tilde(&self) -> Array1<f64> {
        match &self.dynamics {
            Dynamics::Constant { f_tilde, .. } => f_tilde.clone(),
            Dynamics::Evolving { cloud } => cloud.normalized_logits(self.tracked.inputs(), &self.anchors, self.activation),
        }
    }

    fn f_tilde_at(&self, idx: &[usize]) -> Result<Array1<f64>> {
        self.check_indices(idx)?;
        Ok(match &self.dynamics {
            Dynamics::Constant { f_tilde, .. } => idx.iter().map(|&i| f_tilde[i]).collect(),
            Dynamics::Evolving { cloud } => {
                let xs = self.tracked.inputs().select(ndarray::Axis(0), idx);
                cloud.normalized_logits(xs.view(), &self.anchors, self.activation)
            }
        })
    }

    /// Logits at the simulator's own size: `(size/d*)^{link} f̃ + bias`.
    pub fn logits(&self) -> Array1<f64> {
        self.logits_at_width(self.size)
    }

    /// Logits of a width-`d` proxy: `(d/d*)^{link} f̃ + bias`.
    pub fn logits_at_width(&self, d: usize) -> Array1<f64> {
        let scale = self.anchors.width_ratio(d).powf(self.link_exponent);
        let mut f = self.f_tilde() * scale;
        if let Some(b) = &self.init_bias {
            f += b;
        }
        f
    }

    fn check_indices(&self, idx: &[usize]) -> Result<()> {
        if idx.is_empty() {
            return Err(Error::EmptyBatch);
        }
        match idx.iter().find(|&&i| i >= self.tracked.len()) {
            Some(&bad) => Err(Error::UntrackedInput(bad)),
            None => Ok(()),
        }
    }

    /// Loss gradients at tracked indices `idx` given their normalized logits.
    fn batch_grads(&self, idx: &[usize], f_tilde: &Array1<f64>) -> Vec<f64> {
        let y = |i: usize| self.tracked.y(i);
        let bias = |i: usize| self.init_bias.as_ref().map_or(0.0, |b| b[i]);
        match self.options.gradient_law {
            GradientLaw::FiniteWidth { width } => {
                let scale = self.anchors.width_ratio(width).powf(self.link_exponent);
                idx.iter()
                    .zip(f_tilde)
                    .map(|(&i, &f)| grad_unchecked(y(i), scale * f + bias(i)))
                    .collect()
            }
            GradientLaw::Limit if self.variant == LimitVariant::Icmf => idx
                .iter()
                .zip(f_tilde)
                .map(|(&i, &f)| grad_unchecked(y(i), f + bias(i)))
                .collect(),
            GradientLaw::Limit if self.step == 0 => {
                let mode = self.regime.init_grad_mode;
                idx.iter()
                    .map(|&i| {
                        let f0 = self.init_logit.as_ref().map_or(0.0, |l| l[i]);
                        limit_grad(mode, f0, y(i), self.options.tie_rule)
                    })
                    .collect()
            }
            GradientLaw::Limit => {
                let mode = self.regime.late_grad_mode;
                idx.iter()
                    .zip(f_tilde)
                    .map(|(&i, &f)| limit_grad(mode, f, y(i), self.options.tie_rule))
                    .collect()
            }
        }
    }

    /// Advances one step with whichever simulator the regime and variant call for.
    pub fn step(&mut self, batch_a: &[usize], batch_w: &[usize]) -> Result<()> {
        match (&self.dynamics, self.variant) {
            (Dynamics::Constant { .. }, _) => self.constant_kernel_step(batch_a, batch_w),
            (Dynamics::Evolving { .. }, LimitVariant::Icmf) => self.icmf_limit_step(batch_a, batch_w),
            (Dynamics::Evolving { .. }, _) => self.particle_step(batch_a, batch_w),
        }
    }

    /// Frozen-kernel update of `f̃` on every tracked input:
    /// `Δf̃(x) = -η̂*_a mean_b ∇ℓ_b K̃_a(x, x_b) - η̂*_w mean_b ∇ℓ_b K̃_w(x, x_b)`.
    pub fn constant_kernel_step(&mut self, batch_a: &[usize], batch_w: &[usize]) -> Result<()> {
        if self.regime.kernel_mode != KernelMode::Constant {
            return Err(Error::IncompatibleVariant("constant-kernel step on an evolving regime".into()));
        }
        let g_a = self.batch_grads(batch_a, &self.f_tilde_at(batch_a)?);
        let g_w = self.batch_grads(batch_w, &self.f_tilde_at(batch_w)?);
        let (eta_a, eta_w) = (self.anchors.eta_hat_a_star, self.anchors.eta_hat_w_star);
        let Dynamics::Constant { table, f_tilde } = &mut self.dynamics else {
            unreachable!("checked kernel mode")
        };
        let ca = eta_a / batch_a.len() as f64;
        let cw = eta_w / batch_w.len() as f64;
        for (t, f) in f_tilde.iter_mut().enumerate() {
            let ka = table.k_a().row(t);
            let kw = table.k_w().row(t);
            let da: f64 = batch_a.iter().zip(&g_a).map(|(&b, &g)| g * ka[b]).sum();
            let dw: f64 = batch_w.iter().zip(&g_w).map(|(&b, &g)| g * kw[b]).sum();
            *f -= ca * da + cw * dw;
        }
        self.step += 1;
        Ok(())
    }

    /// Moves every particle by `-(η̂*_a σ* ∇ℓ φ(ŵ·x_a), η̂*_w σ* ∇ℓ â φ'(ŵ·x_w) x_w)` averaged over the batches.
    pub fn particle_step(&mut self, batch_a: &[usize], batch_w: &[usize]) -> Result<()> {
        if self.regime.kernel_mode != KernelMode::Evolving {
            return Err(Error::IncompatibleVariant("particle step on a constant-kernel regime".into()));
        }
        self.check_indices(batch_a)?;
        self.check_indices(batch_w)?;
        let anchors = self.anchors;
        let cfg = self.activation;
        let coupled = batch_a == batch_w;
        let xs_a = self.tracked.inputs().select(ndarray::Axis(0), batch_a);
        let xs_w = if coupled {
            None
        } else {
            Some(self.tracked.inputs().select(ndarray::Axis(0), batch_w))
        };
        let Dynamics::Evolving { cloud } = &self.dynamics else {
            unreachable!("checked kernel mode")
        };
        let scale = cloud.readout_scale(&anchors);
        let feats_a = Features::compute(cloud.particles(), xs_a.view(), cfg);
        let g_a = self.batch_grads(batch_a, &(feats_a.readout(cloud.particles().a_hat()) * scale));
        let (feats_w, g_w) = match &xs_w {
            Some(xw) => {
                let fw = Features::compute(cloud.particles(), xw.view(), cfg);
                let g = self.batch_grads(batch_w, &(fw.readout(cloud.particles().a_hat()) * scale));
                (Some(fw), g)
            }
            None => (None, g_a.clone()),
        };
        let coef_a = anchors.eta_hat_a_star * anchors.sigma_star;
        let coef_w = anchors.eta_hat_w_star * anchors.sigma_star;
        let Dynamics::Evolving { cloud } = &mut self.dynamics else {
            unreachable!("checked kernel mode")
        };
        let xw_view = xs_w.as_ref().map_or(xs_a.view(), |x| x.view());
        let fw_ref = feats_w.as_ref().unwrap_or(&feats_a);
        apply_update(&mut cloud.particles, coef_a, coef_w, &feats_a, &g_a, xw_view, fw_ref, &g_w);
        self.step += 1;
        Ok(())
    }

    /// Mean-field transport with the frozen bias added to the logits seen by the sigmoid gradient.
    pub fn icmf_limit_step(&mut self, batch_a: &[usize], batch_w: &[usize]) -> Result<()> {
        if self.init_bias.is_none() {
            return Err(Error::MissingInitBias);
        }
        self.particle_step(batch_a, batch_w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelContext;
    use crate::netcore::{icmf_sgd_step_in_place, init_params, logits, sgd_step_in_place, InitDist, InitSnapshot};
    use crate::scaling::{hyperparams_at, SIGN_TOL};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    const CFG: ActivationConfig = ActivationConfig::DEFAULT;

    fn tracked(n: usize, d_x: usize, seed: u64) -> Dataset {
        let p = init_params(n, d_x, seed, InitDist::Gaussian).unwrap();
        let xs = p.w_hat().t().mapv(|v| v / (d_x as f64).sqrt());
        let ys = p.a_hat().iter().map(|a| if *a >= 0.0 { 1.0 } else { -1.0 }).collect();
        Dataset::new("tracked", "none", xs, ys).unwrap()
    }

    fn small_anchors(d_star: usize) -> Anchors {
        Anchors::new(d_star, 1.0 / (d_star as f64).sqrt(), 0.05, 0.05).unwrap()
    }

    #[test]
    fn representatives_classify_to_their_region() {
        for r in RegionId::ALL {
            assert_eq!(crate::scaling::classify_region(&region_representative(r), SIGN_TOL).unwrap(), r);
        }
    }

    #[test]
    fn build_examples() {
        let t = tracked(6, 3, 1);
        let a = Anchors::default();
        let ntk = build_limit(RegionId::Ntk, LimitVariant::Plain, &t, 256, 1, &a, CFG, LimitOptions::default()).unwrap();
        assert!(ntk.table().is_some() && ntk.cloud().is_none());
        assert_eq!(ntk.f_tilde(), ntk.init_logit().unwrap().clone());

        let n = 1 << 14;
        let mf = build_limit(RegionId::MeanField, LimitVariant::Plain, &t, n, 2, &a, CFG, LimitOptions::default()).unwrap();
        assert!(mf.cloud().is_some() && mf.table().is_none() && mf.init_logit().is_none());
        // σ* d* N^{-1/2} times an O(1) gaussian.
        let bound = 5.0 * a.sigma_star * a.d_star as f64 / (n as f64).sqrt();
        assert!(mf.f_tilde().iter().all(|f| f.abs() < bound));

        let di = build_limit(RegionId::SymDefault, LimitVariant::DefaultInit, &t, 64, 3, &a, CFG, LimitOptions::default()).unwrap();
        assert!(di.cloud().unwrap().particles().a_hat().iter().all(|&v| v == 0.0));

        for (r, v) in [(RegionId::Ntk, LimitVariant::Icmf), (RegionId::MeanField, LimitVariant::DefaultInit)] {
            assert!(matches!(
                build_limit(r, v, &t, 8, 1, &a, CFG, LimitOptions::default()),
                Err(Error::IncompatibleVariant(_))
            ));
        }
        let icmf = build_limit(RegionId::MeanField, LimitVariant::Icmf, &t, 8, 1, &a, CFG, LimitOptions::default()).unwrap();
        assert_eq!(icmf.init_bias().unwrap().len(), 6);
    }

    #[test]
    fn zero_learning_rates_freeze_constant_kernel_logits() {
        let t = tracked(5, 2, 4);
        let mut a = Anchors::default();
        a.eta_hat_a_star = 0.0;
        a.eta_hat_w_star = 0.0;
        let mut s = build_limit(RegionId::Ntk, LimitVariant::Plain, &t, 128, 1, &a, CFG, LimitOptions::default()).unwrap();
        let before = s.f_tilde();
        s.step(&[0, 1], &[2]).unwrap();
        assert_eq!(s.f_tilde(), before);
        assert!(matches!(s.step(&[9], &[0]), Err(Error::UntrackedInput(9))));
    }

    #[test]
    fn ntk_step_on_two_point_table() {
        let xs = array![[1.0, 0.0], [0.0, 1.0]];
        let t = Dataset::new("two", "none", xs, vec![1.0, -1.0]).unwrap();
        let a = Anchors::new(4, 0.5, 0.3, 0.2).unwrap();
        let mut s = build_limit(RegionId::Ntk, LimitVariant::Plain, &t, 64, 7, &a, CFG, LimitOptions::default()).unwrap();
        let table = LimitKernelTable::from_parts(array![[2.0, 0.5], [0.5, 1.0]], array![[1.5, -0.25], [-0.25, 0.75]], array![1.0, 1.0]).unwrap();
        let f0 = array![0.4, -0.2];
        s.dynamics = Dynamics::Constant { table, f_tilde: f0.clone() };
        s.init_logit = Some(f0);
        s.step(&[0], &[1]).unwrap();
        // Hand values: ∇ℓ_a = -1/(1+e^{0.4}), ∇ℓ_w = 1/(1+e^{0.2}).
        let ga = -1.0 / (1.0 + 0.4f64.exp());
        let gw = 1.0 / (1.0 + 0.2f64.exp());
        let want0 = 0.4 - 0.3 * ga * 2.0 - 0.2 * gw * -0.25;
        let want1 = -0.2 - 0.3 * ga * 0.5 - 0.2 * gw * 0.75;
        let f = s.f_tilde();
        assert_abs_diff_eq!(f[0], want0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[1], want1, epsilon = 1e-15);
    }

    #[test]
    fn half_y_first_step_ignores_init_draw() {
        let t = tracked(4, 2, 9);
        let a = Anchors::default();
        let mut s = build_limit(RegionId::LowerLeftOfNtk, LimitVariant::Plain, &t, 128, 3, &a, CFG, LimitOptions::default()).unwrap();
        assert_eq!(s.regime().init_grad_mode, GradMode::HalfY);
        let f0 = s.f_tilde();
        let table = s.table().unwrap().clone();
        s.step(&[1], &[2]).unwrap();
        let f1 = s.f_tilde();
        for i in 0..4 {
            let want = (a.eta_hat_a_star * table.k_a()[[i, 1]] * t.y(1) + a.eta_hat_w_star * table.k_w()[[i, 2]] * t.y(2)) / 2.0;
            assert_abs_diff_eq!(f1[i] - f0[i], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn table_is_never_mutated() {
        let t = tracked(6, 3, 2);
        let mut s = build_limit(RegionId::FiniteKernelLine, LimitVariant::Plain, &t, 200, 5, &Anchors::default(), CFG, LimitOptions::default()).unwrap();
        let table = s.table().unwrap().clone();
        for k in 0..10 {
            s.step(&[k % 6, (k + 1) % 6], &[(k + 2) % 6]).unwrap();
        }
        assert_eq!(s.table().unwrap(), &table);
    }

    #[test]
    fn zero_gradient_leaves_cloud() {
        let t = tracked(3, 2, 6);
        let mut s = build_limit(RegionId::SymDefault, LimitVariant::Plain, &t, 32, 1, &Anchors::default(), CFG, LimitOptions::default()).unwrap();
        s.step(&[0], &[0]).unwrap();
        // Force f̃ y > 0 everywhere by flipping labels to agree with the current logits.
        let f = s.f_tilde();
        let ys: Vec<f64> = f.iter().map(|v| if *v > 0.0 { 1.0 } else { -1.0 }).collect();
        s.tracked = Dataset::new("t", "none", t.inputs().to_owned(), ys).unwrap();
        let cloud = s.cloud().unwrap().clone();
        s.step(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(s.cloud().unwrap(), &cloud);
    }

    #[test]
    fn mf_cloud_is_the_finite_network() {
        let d = 64;
        let t = tracked(10, 3, 8);
        let anchors = small_anchors(16);
        let opts = LimitOptions { gradient_law: GradientLaw::FiniteWidth { width: d }, ..LimitOptions::default() };
        let mut s = build_limit(RegionId::MeanField, LimitVariant::Plain, &t, d, 42, &anchors, CFG, opts).unwrap();
        let e = ScalingExponents::mean_field();
        let hp = hyperparams_at(&e, &anchors, d).unwrap();
        let mut p = init_params(d, 3, 42, InitDist::Gaussian).unwrap();
        for k in 0..20 {
            let b: Vec<usize> = vec![k % 10, (3 * k + 1) % 10];
            let batch = t.select(&b).unwrap();
            sgd_step_in_place(&mut p, &hp, &batch, &batch, CFG).unwrap();
            s.step(&b, &b).unwrap();
            let f = logits(&p, hp.sigma, t.inputs(), CFG).unwrap();
            let ft = s.f_tilde();
            for i in 0..10 {
                assert_abs_diff_eq!(f[i], ft[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn icmf_limit_with_snapshot_bias_is_the_icmf_network() {
        let d_star = 16;
        let t = tracked(8, 3, 5);
        let anchors = small_anchors(d_star);
        for d in [d_star, 4 * d_star] {
            let p0 = init_params(d, 3, 11, InitDist::Gaussian).unwrap();
            let snap = InitSnapshot::capture(&p0);
            let bias = crate::netcore::icmf_correction(&snap, anchors.sigma_star, d_star, t.inputs(), CFG).unwrap();
            let mut s = build_limit(RegionId::MeanField, LimitVariant::Icmf, &t, d, 11, &anchors, CFG, LimitOptions::default())
                .unwrap()
                .with_init_bias(bias)
                .unwrap();
            let hp = hyperparams_at(&ScalingExponents::mean_field(), &anchors, d).unwrap();
            let mut p = p0.clone();
            for k in 0..15 {
                let (ba, bw) = (vec![k % 8], vec![(k + 3) % 8, (k + 5) % 8]);
                let (xa, xw) = (t.select(&ba).unwrap(), t.select(&bw).unwrap());
                icmf_sgd_step_in_place(&mut p, &snap, &hp, &anchors, &xa, &xw, CFG).unwrap();
                s.step(&ba, &bw).unwrap();
            }
            let f = crate::netcore::icmf_logits(&p, &snap, &anchors, t.inputs(), CFG).unwrap();
            let fl = s.logits();
            for i in 0..8 {
                assert_abs_diff_eq!(f[i], fl[i], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn icmf_zero_bias_is_mf() {
        let t = tracked(6, 2, 3);
        let a = small_anchors(8);
        let mut icmf = build_limit(RegionId::MeanField, LimitVariant::Icmf, &t, 32, 4, &a, CFG, LimitOptions::default())
            .unwrap()
            .with_init_bias(Array1::zeros(6))
            .unwrap();
        let opts = LimitOptions { gradient_law: GradientLaw::FiniteWidth { width: 8 }, ..LimitOptions::default() };
        let mut mf = build_limit(RegionId::MeanField, LimitVariant::Plain, &t, 32, 4, &a, CFG, opts).unwrap();
        for k in 0..5 {
            icmf.step(&[k], &[k + 1]).unwrap();
            mf.step(&[k], &[k + 1]).unwrap();
        }
        assert_eq!(icmf.f_tilde(), mf.f_tilde());

        let mut broken = icmf.clone();
        broken.init_bias = None;
        assert!(matches!(broken.icmf_limit_step(&[0], &[0]), Err(Error::MissingInitBias)));
    }

    #[test]
    fn antithetic_icmf_starts_at_its_bias() {
        let t = tracked(5, 3, 12);
        let opts = LimitOptions { antithetic: true, ..LimitOptions::default() };
        let s = build_limit(RegionId::MeanField, LimitVariant::Icmf, &t, 256, 9, &Anchors::default(), CFG, opts).unwrap();
        let (l, b) = (s.logits(), s.init_bias().unwrap().clone());
        assert!(b.iter().all(|v| v.abs() > 1e-6));
        assert!(s.f_tilde().iter().all(|v| v.abs() < 1e-12));
        for i in 0..5 {
            assert_abs_diff_eq!(l[i], b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn sym_default_late_gradient_is_hinge() {
        let t = tracked(12, 3, 1);
        let mut s = build_limit(RegionId::SymDefault, LimitVariant::Plain, &t, 64, 2, &Anchors::default(), CFG, LimitOptions::default()).unwrap();
        s.step(&[0, 1], &[0, 1]).unwrap();
        let idx: Vec<usize> = (0..12).collect();
        let f = s.f_tilde_at(&idx).unwrap();
        for (i, g) in s.batch_grads(&idx, &f).into_iter().enumerate() {
            let y = t.y(i);
            assert!(g == 0.0 || g == -y, "gradient {g} for label {y}");
        }
    }

    #[test]
    fn icmf_logits_stay_within_first_order_bound() {
        // |f| grows by at most η̂*_a max|K̃_a| + η̂*_w max|K̃_w| per step, up to second-order terms.
        let t = tracked(8, 3, 21);
        let a = small_anchors(16);
        let mut s = build_limit(RegionId::MeanField, LimitVariant::Icmf, &t, 128, 3, &a, CFG, LimitOptions::default()).unwrap();
        let mut bound = s.init_bias().unwrap().iter().fold(0.0f64, |m, v| m.max(v.abs()))
            + s.f_tilde().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..30 {
            let cloud = s.cloud().unwrap().particles().clone();
            let ctx = KernelContext::new(&cloud, ScalingExponents::mean_field(), a, CFG).unwrap();
            let (ka, kw) = ctx.gram(t.inputs()).unwrap();
            let (na, nw) = ctx.normalization().unwrap();
            let max_abs = |m: &Array2<f64>| m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            bound += a.eta_hat_a_star * na * max_abs(&ka) + a.eta_hat_w_star * nw * max_abs(&kw);
            s.step(&[k % 8], &[(k + 1) % 8]).unwrap();
            let worst = s.logits().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst <= bound * 1.01, "step {k}: {worst} > {bound}");
        }
    }

    proptest! {
        #[test]
        fn sign_gradients_ignore_positive_rescaling(f in -5.0f64..5.0, c in 1e-3f64..1e3, pos in proptest::bool::ANY) {
            let y = if pos { 1.0 } else { -1.0 };
            for tie in [TieRule::Midpoint, TieRule::Indicator] {
                prop_assert_eq!(limit_grad(GradMode::Sign, f, y, tie), limit_grad(GradMode::Sign, c * f, y, tie));
            }
        }
    }

    #[test]
    fn tie_rules() {
        assert_eq!(limit_grad(GradMode::Sign, 0.0, 1.0, TieRule::Midpoint), -0.5);
        assert_eq!(limit_grad(GradMode::Sign, 0.0, 1.0, TieRule::Indicator), 0.0);
        assert_eq!(limit_grad(GradMode::Sign, -0.1, 1.0, TieRule::Indicator), -1.0);
        assert_eq!(limit_grad(GradMode::HalfY, 3.0, -1.0, TieRule::Midpoint), 0.5);
    }
}
