use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::netcore::{activation_with_prime, init_params, raw_readout, ActivationConfig, InitDist, Params};
use crate::scaling::Anchors;

/// Which limit kernel to estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    A,
    W,
}

fn check_samples(m: usize) -> Result<()> {
    if m == 0 {
        Err(Error::InvalidParameter("Monte-Carlo sample count must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// `M` unit-gaussian draws of `(â, ŵ)`, laid out like a width-`M` network.
fn draws(m: usize, d_x: usize, seed: u64) -> Result<Params> {
    check_samples(m)?;
    init_params(m, d_x, seed, InitDist::Gaussian)
}

/// Draws with `â` negated on the second half, so `Σ â φ(ŵ·x)` cancels in pairs.
pub(crate) fn antithetic_draws(m: usize, d_x: usize, seed: u64) -> Result<Params> {
    if m % 2 != 0 {
        return Err(Error::InvalidParameter(format!("antithetic sampling needs an even count, got {m}")));
    }
    let half = draws(m / 2, d_x, seed)?;
    let a = ndarray::concatenate![ndarray::Axis(0), half.a_hat().view(), half.a_hat().mapv(|v| -v).view()];
    let w = ndarray::concatenate![ndarray::Axis(1), half.w_hat().view(), half.w_hat().view()];
    Params::new(a, w)
}

pub(crate) fn sample_cloud(m: usize, d_x: usize, seed: u64, antithetic: bool) -> Result<Params> {
    if antithetic {
        antithetic_draws(m, d_x, seed)
    } else {
        draws(m, d_x, seed)
    }
}

/// Estimate of `E_{ŵ~N(0,I)} φ²(ŵ·x)` from `M` draws.
pub fn mc_init_variance(x: &[f64], m: usize, seed: u64, cfg: ActivationConfig) -> Result<f64> {
    let w = draws(m, x.len().max(1), seed)?;
    let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    let phi = xs.dot(w.w_hat()).mapv(|z| activation_with_prime(z, cfg.alpha()).0);
    Ok(phi.mapv(|v| v * v).mean().expect("m >= 1"))
}

/// Estimate of the limit normalized kernel `σ*² d* E[φ(ŵ·x) φ(ŵ·x')]` (kind `A`) or
/// `σ*² d* E[â² φ'(ŵ·x) φ'(ŵ·x')] x·x'` (kind `W`).
pub fn mc_limit_kernel(
    x: &[f64],
    x2: &[f64],
    m: usize,
    seed: u64,
    which: KernelKind,
    anchors: &Anchors,
    cfg: ActivationConfig,
) -> Result<f64> {
    if x.len() != x2.len() {
        return Err(Error::Shape("kernel inputs differ in dimension".into()));
    }
    let p = draws(m, x.len(), seed)?;
    let w = p.w_hat();
    let z = w.t().dot(&ArrayView1::from(x));
    let z2 = w.t().dot(&ArrayView1::from(x2));
    let scale = anchors.sigma_star.powi(2) * anchors.d_star as f64;
    let alpha = cfg.alpha();
    let mean = match which {
        KernelKind::A => Zip::from(&z)
            .and(&z2)
            .map_collect(|&u, &v| activation_with_prime(u, alpha).0 * activation_with_prime(v, alpha).0)
            .mean(),
        KernelKind::W => {
            let xx: f64 = x.iter().zip(x2).map(|(a, b)| a * b).sum();
            Zip::from(&z)
                .and(&z2)
                .and(p.a_hat())
                .map_collect(|&u, &v, &a| activation_with_prime(u, alpha).1 * activation_with_prime(v, alpha).1 * (a * a))
                .mean()
                .map(|s| s * xx)
        }
    };
    Ok(scale * mean.expect("m >= 1"))
}

/// One joint draw of the initial logit field `σ* d*^{1/2} N(0, σ⁰(x)²)` over the rows of `tracked`,
/// realized as `σ* (M d*)^{1/2} (1/M) Σ_r â_r φ(ŵ_r·x)`.
pub fn sample_init_bias(
    tracked: ArrayView2<'_, f64>,
    m: usize,
    seed: u64,
    anchors: &Anchors,
    cfg: ActivationConfig,
) -> Result<Array1<f64>> {
    let p = draws(m, tracked.ncols(), seed)?;
    Ok(init_field(&p, tracked, anchors, cfg))
}

pub(crate) fn init_field(p: &Params, tracked: ArrayView2<'_, f64>, anchors: &Anchors, cfg: ActivationConfig) -> Array1<f64> {
    let m = p.width() as f64;
    raw_readout(p, tracked, cfg) * (anchors.sigma_star * (anchors.d_star as f64 / m).sqrt())
}

/// Monte-Carlo limit kernels and initial standard deviations over a fixed set of inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitKernelTable {
    k_a: Array2<f64>,
    k_w: Array2<f64>,
    init_std: Array1<f64>,
    samples: usize,
    seed: u64,
}

fn symmetrize(k: &mut Array2<f64>) {
    let n = k.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (k[[i, j]] + k[[j, i]]);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
}

impl LimitKernelTable {
    pub fn build(
        tracked: ArrayView2<'_, f64>,
        m: usize,
        seed: u64,
        anchors: &Anchors,
        cfg: ActivationConfig,
    ) -> Result<Self> {
        let p = draws(m, tracked.ncols(), seed)?;
        let mut phi = tracked.dot(p.w_hat());
        let mut scaled = Array2::zeros(phi.raw_dim());
        let alpha = cfg.alpha();
        Zip::from(&mut phi).and(&mut scaled).for_each(|z, s| {
            let (v, dv) = activation_with_prime(*z, alpha);
            *z = v;
            *s = dv;
        });
        for mut row in scaled.rows_mut() {
            Zip::from(&mut row).and(p.a_hat()).for_each(|v, &a| *v *= a);
        }
        let scale = anchors.sigma_star.powi(2) * anchors.d_star as f64 / m as f64;
        let mut k_a = phi.dot(&phi.t()) * scale;
        let mut k_w = scaled.dot(&scaled.t()) * scale;
        k_w *= &tracked.dot(&tracked.t());
        symmetrize(&mut k_a);
        symmetrize(&mut k_w);
        let init_std = phi.map_axis(ndarray::Axis(1), |row| (row.mapv(|v| v * v).sum() / m as f64).sqrt());
        Ok(Self {
            k_a,
            k_w,
            init_std,
            samples: m,
            seed,
        })
    }

    /// Table from explicit matrices, mainly for hand-built examples.
    pub fn from_parts(k_a: Array2<f64>, k_w: Array2<f64>, init_std: Array1<f64>) -> Result<Self> {
        let n = init_std.len();
        if k_a.dim() != (n, n) || k_w.dim() != (n, n) {
            return Err(Error::Shape("kernel tables must be square over the tracked inputs".into()));
        }
        if k_a != k_a.t() || k_w != k_w.t() {
            return Err(Error::InvalidParameter("kernel tables must be symmetric".into()));
        }
        if init_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidParameter("initial standard deviations must be non-negative".into()));
        }
        Ok(Self {
            k_a,
            k_w,
            init_std,
            samples: 0,
            seed: 0,
        })
    }

    pub fn k_a(&self) -> &Array2<f64> {
        &self.k_a
    }

    pub fn k_w(&self) -> &Array2<f64> {
        &self.k_w
    }

    /// `σ⁰(x)` per tracked input.
    pub fn init_std(&self) -> &Array1<f64> {
        &self.init_std
    }

    pub fn len(&self) -> usize {
        self.init_std.len()
    }

    pub fn is_empty(&self) -> bool {
        self.init_std.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}
