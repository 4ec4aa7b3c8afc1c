use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::activation::{activation, activation_with_prime, softplus, ActivationConfig};
use super::data::{check_label, Dataset};
use super::params::{InitSnapshot, Params};
use crate::error::{Error, Result};
use crate::scaling::{Anchors, Hyperparams};

/// Rows per block when evaluating many inputs at once.
const EVAL_CHUNK: usize = 256;

fn check_dim(p: &Params, d_x: usize) -> Result<()> {
    if d_x != p.input_dim() {
        return Err(Error::Shape(format!(
            "input has dimension {d_x}, network expects {}",
            p.input_dim()
        )));
    }
    Ok(())
}

/// Hidden-layer activations `φ(ŵ_r·x_b)` and slopes `φ'(ŵ_r·x_b)` for a block of inputs (rows).
pub(crate) struct Features {
    pub phi: Array2<f64>,
    pub dphi: Array2<f64>,
}

impl Features {
    pub(crate) fn compute(p: &Params, xs: ArrayView2<'_, f64>, cfg: ActivationConfig) -> Self {
        let mut phi = xs.dot(p.w_hat());
        let mut dphi = Array2::zeros(phi.raw_dim());
        let alpha = cfg.alpha();
        Zip::from(&mut phi).and(&mut dphi).for_each(|z, dz| {
            let (v, dv) = activation_with_prime(*z, alpha);
            *z = v;
            *dz = dv;
        });
        Self { phi, dphi }
    }

    /// `Σ_r â_r φ(ŵ_r·x_b)` per row.
    pub(crate) fn readout(&self, a_hat: &Array1<f64>) -> Array1<f64> {
        self.phi.dot(a_hat)
    }
}

/// `Σ_r â_r φ(ŵ_r·x)` for every row of `xs`, without the output scale.
pub(crate) fn raw_readout(p: &Params, xs: ArrayView2<'_, f64>, cfg: ActivationConfig) -> Array1<f64> {
    let mut out = Array1::zeros(xs.nrows());
    for (chunk, mut dst) in xs
        .axis_chunks_iter(Axis(0), EVAL_CHUNK)
        .zip(out.axis_chunks_iter_mut(Axis(0), EVAL_CHUNK))
    {
        let mut z = chunk.dot(p.w_hat());
        z.mapv_inplace(|v| activation(v, cfg));
        dst.assign(&z.dot(p.a_hat()));
    }
    out
}

/// Applies one simultaneous update from precomputed features and per-sample loss gradients:
/// `Δâ = -coef_a · mean_b g_b φ(ŵ·x_b)` and `Δŵ = -coef_w · mean_b g_b â φ'(ŵ·x_b) x_b`.
pub(crate) fn apply_update(
    p: &mut Params,
    coef_a: f64,
    coef_w: f64,
    feats_a: &Features,
    grads_a: &[f64],
    xs_w: ArrayView2<'_, f64>,
    feats_w: &Features,
    grads_w: &[f64],
) {
    let ga = ArrayView1::from(grads_a);
    let gw = ArrayView1::from(grads_w);
    let delta_a = feats_a.phi.t().dot(&ga) * (-coef_a / grads_a.len() as f64);

    let a_hat = p.a_hat().clone();
    let mut m = feats_w.dphi.clone();
    Zip::from(m.rows_mut()).and(&gw).for_each(|mut row, &g| {
        Zip::from(&mut row).and(&a_hat).for_each(|v, &a| *v *= g * a);
    });
    let delta_w = xs_w.t().dot(&m) * (-coef_w / grads_w.len() as f64);

    let mut a = p.a_hat_mut();
    a += &delta_a;
    let mut w = p.w_hat_mut();
    w += &delta_w;
}

/// `σ Σ_r â_r φ(ŵ_r·x)`.
pub fn forward(p: &Params, sigma: f64, x: &[f64], cfg: ActivationConfig) -> Result<f64> {
    check_dim(p, x.len())?;
    let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(sigma * raw_readout(p, xs, cfg)[0])
}

/// Logits for every row of `xs`.
pub fn logits(p: &Params, sigma: f64, xs: ArrayView2<'_, f64>, cfg: ActivationConfig) -> Result<Array1<f64>> {
    check_dim(p, xs.ncols())?;
    Ok(raw_readout(p, xs, cfg) * sigma)
}

/// Cross-entropy `ln(1 + e^{-y f})`.
pub fn loss_value(y: f64, f: f64) -> Result<f64> {
    check_label(y)?;
    Ok(softplus(-y * f))
}

/// `∂ℓ/∂f = -y / (1 + e^{y f})`.
pub fn loss_grad(y: f64, f: f64) -> Result<f64> {
    check_label(y)?;
    Ok(grad_unchecked(y, f))
}

#[inline]
pub(crate) fn grad_unchecked(y: f64, f: f64) -> f64 {
    let t = y * f;
    // -y σ(-t), arranged so neither branch overflows.
    if t >= 0.0 {
        let e = (-t).exp();
        -y * e / (1.0 + e)
    } else {
        -y / (1.0 + t.exp())
    }
}

/// Mean cross-entropy of `logits` against `labels`.
pub fn mean_loss(labels: &[f64], logits: &[f64]) -> f64 {
    let n = labels.len().max(1) as f64;
    labels.iter().zip(logits).map(|(&y, &f)| softplus(-y * f)).sum::<f64>() / n
}

fn check_batch(p: &Params, batch: &Dataset) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_dim(p, batch.input_dim())
}

/// One SGD step on the hatted parameters, returning the updated copy.
pub fn sgd_step(
    p: &Params,
    hp: &Hyperparams,
    batch_a: &Dataset,
    batch_w: &Dataset,
    cfg: ActivationConfig,
) -> Result<Params> {
    let mut next = p.clone();
    sgd_step_in_place(&mut next, hp, batch_a, batch_w, cfg)?;
    Ok(next)
}

/// One SGD step with logits `scale · Σ â φ + offset(batch)`; returns the logits seen on `batch_a`.
fn step_with_logits(
    p: &mut Params,
    scale: f64,
    coef_a: f64,
    coef_w: f64,
    batch_a: &Dataset,
    batch_w: &Dataset,
    cfg: ActivationConfig,
    offset: impl Fn(&Dataset) -> Result<Option<Array1<f64>>>,
) -> Result<Array1<f64>> {
    check_batch(p, batch_a)?;
    check_batch(p, batch_w)?;
    let logits_of = |feats: &Features, batch: &Dataset| -> Result<Array1<f64>> {
        let mut f = feats.readout(p.a_hat()) * scale;
        if let Some(off) = offset(batch)? {
            f += &off;
        }
        Ok(f)
    };
    let grads = |f: &Array1<f64>, batch: &Dataset| -> Vec<f64> {
        f.iter().zip(batch.labels()).map(|(&f, &y)| grad_unchecked(y, f)).collect()
    };

    let feats_a = Features::compute(p, batch_a.inputs(), cfg);
    let f_a = logits_of(&feats_a, batch_a)?;
    let g_a = grads(&f_a, batch_a);
    if std::ptr::eq(batch_a, batch_w) {
        apply_update(p, coef_a, coef_w, &feats_a, &g_a, batch_w.inputs(), &feats_a, &g_a);
    } else {
        let feats_w = Features::compute(p, batch_w.inputs(), cfg);
        let f_w = logits_of(&feats_w, batch_w)?;
        let g_w = grads(&f_w, batch_w);
        apply_update(p, coef_a, coef_w, &feats_a, &g_a, batch_w.inputs(), &feats_w, &g_w);
    }
    Ok(f_a)
}

/// In-place [`sgd_step`]. Passing the same batch twice shares the forward pass.
pub fn sgd_step_in_place(
    p: &mut Params,
    hp: &Hyperparams,
    batch_a: &Dataset,
    batch_w: &Dataset,
    cfg: ActivationConfig,
) -> Result<()> {
    let s = hp.sigma;
    step_with_logits(p, s, hp.eta_hat_a * s, hp.eta_hat_w * s, batch_a, batch_w, cfg, |_| Ok(None))?;
    Ok(())
}

fn check_snapshot(p: &Params, snap: &InitSnapshot) -> Result<()> {
    let s = snap.params();
    if s.width() != p.width() || s.input_dim() != p.input_dim() {
        return Err(Error::Shape(format!(
            "snapshot is {}x{}, parameters are {}x{}",
            s.input_dim(),
            s.width(),
            p.input_dim(),
            p.width()
        )));
    }
    Ok(())
}

/// Output scale of the trained part of the IC-MF model, `σ* (d/d*)^{-1}`.
fn icmf_trained_scale(sigma_star: f64, d_star: usize, d: usize) -> f64 {
    sigma_star * (d as f64 / d_star as f64).powi(-1)
}

/// Coefficient of the frozen initial readout, `σ* ((d/d*)^{-1/2} - (d/d*)^{-1})`.
fn icmf_frozen_scale(sigma_star: f64, d_star: usize, d: usize) -> f64 {
    let ratio = d as f64 / d_star as f64;
    sigma_star * (ratio.powf(-0.5) - ratio.powi(-1))
}

/// Frozen correction term of the IC-MF model for every row of `xs`.
pub fn icmf_correction(
    snap: &InitSnapshot,
    sigma_star: f64,
    d_star: usize,
    xs: ArrayView2<'_, f64>,
    cfg: ActivationConfig,
) -> Result<Array1<f64>> {
    let s = snap.params();
    check_dim(s, xs.ncols())?;
    Ok(raw_readout(s, xs, cfg) * icmf_frozen_scale(sigma_star, d_star, s.width()))
}

/// Initialization-corrected mean-field logit:
/// `σ*(d/d*)^{-1} Σ â_r φ(ŵ_r·x) + σ*((d/d*)^{-1/2} - (d/d*)^{-1}) Σ â⁰_r φ(ŵ⁰_r·x)`.
pub fn icmf_forward(
    p: &Params,
    snap: &InitSnapshot,
    sigma_star: f64,
    d_star: usize,
    x: &[f64],
    cfg: ActivationConfig,
) -> Result<f64> {
    check_snapshot(p, snap)?;
    let d = p.width();
    let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    let trained = forward(p, icmf_trained_scale(sigma_star, d_star, d), x, cfg)?;
    Ok(trained + icmf_correction(snap, sigma_star, d_star, xs, cfg)?[0])
}

/// IC-MF logits for every row of `xs`.
pub fn icmf_logits(
    p: &Params,
    snap: &InitSnapshot,
    anchors: &Anchors,
    xs: ArrayView2<'_, f64>,
    cfg: ActivationConfig,
) -> Result<Array1<f64>> {
    check_snapshot(p, snap)?;
    let scale = icmf_trained_scale(anchors.sigma_star, anchors.d_star, p.width());
    Ok(logits(p, scale, xs, cfg)? + icmf_correction(snap, anchors.sigma_star, anchors.d_star, xs, cfg)?)
}

/// SGD step of the IC-MF model. The trained part uses output scale `σ*(d/d*)^{-1}` and the
/// hatted learning rates in `hp` (mean-field rates); the loss gradient sees the full IC-MF logit.
pub fn icmf_sgd_step_in_place(
    p: &mut Params,
    snap: &InitSnapshot,
    hp: &Hyperparams,
    anchors: &Anchors,
    batch_a: &Dataset,
    batch_w: &Dataset,
    cfg: ActivationConfig,
) -> Result<()> {
    check_snapshot(p, snap)?;
    let s = icmf_trained_scale(anchors.sigma_star, anchors.d_star, p.width());
    let offset = |b: &Dataset| icmf_correction(snap, anchors.sigma_star, anchors.d_star, b.inputs(), cfg).map(Some);
    step_with_logits(p, s, hp.eta_hat_a * s, hp.eta_hat_w * s, batch_a, batch_w, cfg, offset)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{init_params, InitDist};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CFG: ActivationConfig = ActivationConfig::DEFAULT;

    fn naive_forward(p: &Params, sigma: f64, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for r in 0..p.width() {
            let mut z = 0.0;
            for i in 0..x.len() {
                z += p.w_hat()[[i, r]] * x[i];
            }
            let phi = (1.0 + z.exp()).ln() - 0.2 * (1.0 + (-z).exp()).ln();
            total += p.a_hat()[r] * phi;
        }
        sigma * total
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d_x: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, d_x), |_| rng.random_range(-1.0..1.0));
        let y = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        Dataset::new("rand", "none", x, y).unwrap()
    }

    #[test]
    fn forward_examples() {
        let p = Params::new(array![1.0], Array2::zeros((3, 1))).unwrap();
        assert_abs_diff_eq!(forward(&p, 1.0, &[0.3, -2.0, 5.0], CFG).unwrap(), 0.8 * 2f64.ln(), epsilon = 1e-15);
        let p = Params::new(array![1.0, -1.0], array![[0.4, 0.4], [-1.0, -1.0]]).unwrap();
        assert_eq!(forward(&p, 2.0, &[0.7, 0.1], CFG).unwrap(), 0.0);
        let p = init_params(3, 4, 5, InitDist::Gaussian).unwrap();
        let x = [0.3, -0.2, 0.9, 1.4];
        assert_abs_diff_eq!(forward(&p, 0.7, &x, CFG).unwrap(), naive_forward(&p, 0.7, &x), epsilon = 1e-12);
        assert!(matches!(forward(&p, 0.7, &x[..3], CFG), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_grad(1.0, 0.0).unwrap(), -0.5);
        assert_abs_diff_eq!(loss_grad(1.0, 3f64.ln()).unwrap(), -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(loss_value(1.0, 0.0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert!(matches!(loss_grad(0.0, 1.0), Err(Error::InvalidLabel(_))));
        assert!(loss_value(1.0, -1e6).unwrap().is_finite());
        assert_eq!(loss_value(1.0, 1e6).unwrap(), 0.0);
        assert!(loss_grad(-1.0, 1e6).unwrap() > 0.99);
    }

    #[test]
    fn single_neuron_step() {
        let p = Params::new(array![1.0], array![[0.0]]).unwrap();
        let hp = Hyperparams { sigma: 1.0, eta_hat_a: 1.0, eta_hat_w: 1.0, width: 1 };
        let b = Dataset::new("one", "none", array![[1.0]], vec![1.0]).unwrap();
        let q = sgd_step(&p, &hp, &b, &b, CFG).unwrap();
        assert_abs_diff_eq!(q.a_hat()[0] - 1.0, 0.2022974413707004, epsilon = 1e-15);
        assert_abs_diff_eq!(q.w_hat()[[0, 0]], 0.21889013658752648, epsilon = 1e-15);
        // A structurally equal but distinct batch takes the uncoupled path and agrees.
        let b2 = b.clone();
        assert_eq!(sgd_step(&p, &hp, &b, &b2, CFG).unwrap(), q);
    }

    #[test]
    fn zero_rates_leave_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_params(5, 3, 1, InitDist::Gaussian).unwrap();
        let b = random_dataset(&mut rng, 4, 3);
        let hp = Hyperparams { sigma: 0.3, eta_hat_a: 0.0, eta_hat_w: 0.0, width: 5 };
        assert_eq!(sgd_step(&p, &hp, &b, &b, CFG).unwrap(), p);
    }

    #[test]
    fn empty_batch_rejected() {
        let p = init_params(2, 1, 1, InitDist::Gaussian).unwrap();
        let empty = Dataset::new("e", "none", Array2::zeros((0, 1)), vec![]).unwrap();
        let hp = Hyperparams { sigma: 1.0, eta_hat_a: 1.0, eta_hat_w: 1.0, width: 2 };
        assert!(matches!(sgd_step(&p, &hp, &empty, &empty, CFG), Err(Error::EmptyBatch)));
    }

    #[test]
    fn icmf_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (sigma_star, d_star) = (0.3, 8);

        let p0 = init_params(8, 3, 2, InitDist::Gaussian).unwrap();
        let snap = InitSnapshot::capture(&p0);
        let mut p = p0.clone();
        p.a_hat_mut()[0] += 0.5;
        assert_eq!(
            icmf_forward(&p, &snap, sigma_star, d_star, &x, CFG).unwrap(),
            forward(&p, sigma_star, &x, CFG).unwrap()
        );

        let p0 = init_params(32, 3, 2, InitDist::Gaussian).unwrap();
        let snap = InitSnapshot::capture(&p0);
        let ntk_scaled = forward(&p0, sigma_star * 4f64.powf(-0.5), &x, CFG).unwrap();
        assert_abs_diff_eq!(icmf_forward(&p0, &snap, sigma_star, d_star, &x, CFG).unwrap(), ntk_scaled, epsilon = 1e-12);

        let mut p = p0.clone();
        p.w_hat_mut()[[1, 3]] -= 0.25;
        let oracle = naive_forward(&p, sigma_star / 4.0, &x) + naive_forward(&p0, sigma_star * (0.5 - 0.25), &x);
        assert_abs_diff_eq!(icmf_forward(&p, &snap, sigma_star, d_star, &x, CFG).unwrap(), oracle, epsilon = 1e-12);

        let other = InitSnapshot::capture(&init_params(16, 3, 2, InitDist::Gaussian).unwrap());
        assert!(icmf_forward(&p, &other, sigma_star, d_star, &x, CFG).is_err());
    }

    /// Mean loss over a batch for given flat parameters.
    fn batch_loss(p: &Params, sigma: f64, b: &Dataset) -> f64 {
        let f = logits(p, sigma, b.inputs(), CFG).unwrap();
        mean_loss(b.labels(), f.as_slice().unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn increments_match_finite_differences(seed in 0u64..10_000, d in 1usize..=8, d_x in 1usize..=4, n in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = init_params(d, d_x, seed, InitDist::Gaussian).unwrap();
            let b = random_dataset(&mut rng, n, d_x);
            let hp = Hyperparams { sigma: 0.7, eta_hat_a: 0.3, eta_hat_w: 0.2, width: d };
            let q = sgd_step(&p, &hp, &b, &b, CFG).unwrap();
            let h = 1e-5;
            let mut got = Vec::new();
            let mut want = Vec::new();
            for r in 0..d {
                let mut hi = p.clone();
                hi.a_hat_mut()[r] += h;
                let mut lo = p.clone();
                lo.a_hat_mut()[r] -= h;
                let g = (batch_loss(&hi, hp.sigma, &b) - batch_loss(&lo, hp.sigma, &b)) / (2.0 * h);
                want.push(-hp.eta_hat_a * g);
                got.push(q.a_hat()[r] - p.a_hat()[r]);
                for i in 0..d_x {
                    let mut hi = p.clone();
                    hi.w_hat_mut()[[i, r]] += h;
                    let mut lo = p.clone();
                    lo.w_hat_mut()[[i, r]] -= h;
                    let g = (batch_loss(&hi, hp.sigma, &b) - batch_loss(&lo, hp.sigma, &b)) / (2.0 * h);
                    want.push(-hp.eta_hat_w * g);
                    got.push(q.w_hat()[[i, r]] - p.w_hat()[[i, r]]);
                }
            }
            let diff: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(diff <= 1e-5 * norm, "rel err {}", diff / norm);
        }

        #[test]
        fn sign_of_logit_survives_positive_rescaling(seed in 0u64..1000, c in 1e-3f64..1e3) {
            let p = init_params(6, 2, seed, InitDist::Gaussian).unwrap();
            let x = [0.4, -0.9];
            let f = forward(&p, 1.0, &x, CFG).unwrap();
            let g = forward(&p, c, &x, CFG).unwrap();
            prop_assert_eq!(f > 0.0, g > 0.0);
        }
    }
}
