//! Tangent kernels of the finite network and their first-order increments.
//!
//! Learning-rate growth factors are folded into the kernels:
//! `K_a(x,x') = (d/d*)^{q̃_a} σ² Σ_r φ(ŵ_r·x) φ(ŵ_r·x')` and
//! `K_w(x,x') = (d/d*)^{q̃_w} σ² Σ_r â_r² φ'(ŵ_r·x) φ'(ŵ_r·x') x·x'`,
//! so that one SGD step changes the logit by `-η̂*_a ∇ℓ K_a - η̂*_w ∇ℓ K_w` to first order.
//! Callers must not multiply by `(d/d*)^{q̃}` again.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::netcore::{
    activation, activation_prime, activation_second, forward, grad_unchecked, ActivationConfig, Params,
};
use crate::scaling::{hyperparams_at, Anchors, Hyperparams, ScalingExponents, SIGN_TOL};

/// Everything needed to evaluate kernels of one network state.
#[derive(Clone, Copy, Debug)]
pub struct KernelContext<'a> {
    pub params: &'a Params,
    pub hyper: Hyperparams,
    pub anchors: Anchors,
    pub exponents: ScalingExponents,
    pub activation: ActivationConfig,
}

impl<'a> KernelContext<'a> {
    /// Context with hyperparameters derived from `(exponents, anchors, params.width())`.
    pub fn new(
        params: &'a Params,
        exponents: ScalingExponents,
        anchors: Anchors,
        activation: ActivationConfig,
    ) -> Result<Self> {
        let hyper = hyperparams_at(&exponents, &anchors, params.width())?;
        Ok(Self {
            params,
            hyper,
            anchors,
            exponents,
            activation,
        })
    }

    fn ratio(&self) -> f64 {
        self.anchors.width_ratio(self.params.width())
    }

    fn prefactor_a(&self) -> f64 {
        self.ratio().powf(self.exponents.q_tilde_a) * self.hyper.sigma.powi(2)
    }

    fn prefactor_w(&self) -> f64 {
        self.ratio().powf(self.exponents.q_tilde_w) * self.hyper.sigma.powi(2)
    }

    /// `σ³ (d/d*)^{q̃_a + q̃_w}`-style prefactor of increments mixing the two layers' rates.
    fn increment_prefactor(&self, q_first: f64, q_second: f64) -> Result<f64> {
        self.check_increment_scaling()?;
        Ok(self.ratio().powf(q_first + q_second) * self.hyper.sigma.powi(3))
    }

    fn check_increment_scaling(&self) -> Result<()> {
        let e = &self.exponents;
        if e.is_symmetric(SIGN_TOL) || e.is_default() {
            Ok(())
        } else {
            Err(Error::NonSymmetricScaling {
                q_tilde_a: e.q_tilde_a,
                q_tilde_w: e.q_tilde_w,
            })
        }
    }

    /// Factors `(d/d*)^{-1-q̃-2q_σ}` turning `(K_a, K_w)` into normalized kernels.
    pub fn normalization(&self) -> Result<(f64, f64)> {
        self.check_increment_scaling()?;
        let e = &self.exponents;
        let r = self.ratio();
        Ok((
            r.powf(-1.0 - e.q_tilde_a - 2.0 * e.q_sigma),
            r.powf(-1.0 - e.q_tilde_w - 2.0 * e.q_sigma),
        ))
    }

    fn preacts(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.params.input_dim() {
            return Err(Error::Shape(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.params.input_dim()
            )));
        }
        Ok(self.params.w_hat().t().dot(&ArrayView1::from(x)))
    }

    fn phi(&self, z: &Array1<f64>) -> Array1<f64> {
        z.mapv(|v| activation(v, self.activation))
    }

    fn dphi(&self, z: &Array1<f64>) -> Array1<f64> {
        z.mapv(|v| activation_prime(v, self.activation))
    }

    fn ddphi(&self, z: &Array1<f64>) -> Array1<f64> {
        z.mapv(|v| activation_second(v, self.activation))
    }

    /// Raw kernel Gram matrices `(K_a, K_w)` over the rows of `xs`.
    pub fn gram(&self, xs: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if xs.ncols() != self.params.input_dim() {
            return Err(Error::Shape("probe inputs do not match network input dimension".into()));
        }
        let z = xs.dot(self.params.w_hat());
        let phi = z.mapv(|v| activation(v, self.activation));
        let mut scaled = z.mapv(|v| activation_prime(v, self.activation));
        let a = self.params.a_hat();
        for mut row in scaled.rows_mut() {
            Zip::from(&mut row).and(a).for_each(|v, &a| *v *= a);
        }
        let ka = phi.dot(&phi.t()) * self.prefactor_a();
        let mut kw = scaled.dot(&scaled.t()) * self.prefactor_w();
        kw *= &xs.dot(&xs.t());
        Ok((ka, kw))
    }

    /// `η̂*_a K̃_a + η̂*_w K̃_w` over the rows of `xs`.
    pub fn normalized_gram(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (ka, kw) = self.gram(xs)?;
        let (na, nw) = self.normalization()?;
        Ok(ka * (na * self.anchors.eta_hat_a_star) + kw * (nw * self.anchors.eta_hat_w_star))
    }
}

/// An input with its label and the loss gradient at the current logit.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub x: Vec<f64>,
    pub y: f64,
    pub grad: f64,
}

impl GradSample {
    /// Evaluates `∇ℓ` at the context's current logit for `(x, y)`.
    pub fn at(ctx: &KernelContext<'_>, x: &[f64], y: f64) -> Result<Self> {
        crate::netcore::loss_grad(y, 0.0)?;
        let f = forward(ctx.params, ctx.hyper.sigma, x, ctx.activation)?;
        Ok(Self {
            x: x.to_vec(),
            y,
            grad: grad_unchecked(y, f),
        })
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn kernel_a(ctx: &KernelContext<'_>, x: &[f64], x2: &[f64]) -> Result<f64> {
    let (z, z2) = (ctx.preacts(x)?, ctx.preacts(x2)?);
    Ok(ctx.prefactor_a() * ctx.phi(&z).dot(&ctx.phi(&z2)))
}

pub fn kernel_w(ctx: &KernelContext<'_>, x: &[f64], x2: &[f64]) -> Result<f64> {
    let (z, z2) = (ctx.preacts(x)?, ctx.preacts(x2)?);
    let a2 = ctx.params.a_hat().mapv(|a| a * a);
    let s = (ctx.dphi(&z) * ctx.dphi(&z2) * a2).sum();
    Ok(ctx.prefactor_w() * s * dot(x, x2))
}

/// `(K̃_a, K̃_w)`: kernels rescaled by `(d/d*)^{-1-q̃-2q_σ}` so they have finite limits.
pub fn normalized_kernels(ctx: &KernelContext<'_>, x: &[f64], x2: &[f64]) -> Result<(f64, f64)> {
    let (na, nw) = ctx.normalization()?;
    Ok((na * kernel_a(ctx, x, x2)?, nw * kernel_w(ctx, x, x2)?))
}

/// Linear parts `(Δf'_a, Δf'_w)` of the one-step logit change at `x`.
pub fn delta_f_prime(
    ctx: &KernelContext<'_>,
    gs_a: &GradSample,
    gs_w: &GradSample,
    x: &[f64],
) -> Result<(f64, f64)> {
    Ok((
        -gs_a.grad * kernel_a(ctx, x, &gs_a.x)?,
        -gs_w.grad * kernel_w(ctx, x, &gs_w.x)?,
    ))
}

/// Derivative of the one-step change of `K_a(x,x')` with respect to `η̂*_w`.
pub fn delta_k_aw_prime(ctx: &KernelContext<'_>, gs_w: &GradSample, x: &[f64], x2: &[f64]) -> Result<f64> {
    let pre = ctx.increment_prefactor(ctx.exponents.q_tilde_a, ctx.exponents.q_tilde_w)?;
    let (z, z2, zw) = (ctx.preacts(x)?, ctx.preacts(x2)?, ctx.preacts(&gs_w.x)?);
    let (xw, x2w) = (dot(x, &gs_w.x), dot(x2, &gs_w.x));
    let bracket = ctx.dphi(&z) * ctx.phi(&z2) * xw + ctx.phi(&z) * ctx.dphi(&z2) * x2w;
    let s = (ctx.params.a_hat() * &ctx.dphi(&zw) * bracket).sum();
    Ok(-pre * gs_w.grad * s)
}

/// Derivative of the one-step change of `K_w(x,x')` with respect to `η̂*_w`.
pub fn delta_k_ww_prime(ctx: &KernelContext<'_>, gs_w: &GradSample, x: &[f64], x2: &[f64]) -> Result<f64> {
    let pre = ctx.increment_prefactor(ctx.exponents.q_tilde_w, ctx.exponents.q_tilde_w)?;
    let (z, z2, zw) = (ctx.preacts(x)?, ctx.preacts(x2)?, ctx.preacts(&gs_w.x)?);
    let (xw, x2w) = (dot(x, &gs_w.x), dot(x2, &gs_w.x));
    let bracket = ctx.ddphi(&z) * ctx.dphi(&z2) * xw + ctx.dphi(&z) * ctx.ddphi(&z2) * x2w;
    let a3 = ctx.params.a_hat().mapv(|a| a * a * a);
    let s = (a3 * ctx.dphi(&zw) * bracket).sum();
    Ok(-pre * gs_w.grad * s * dot(x, x2))
}

/// Derivative of the one-step change of `K_w(x,x')` with respect to `η̂*_a`.
pub fn delta_k_wa_prime(ctx: &KernelContext<'_>, gs_a: &GradSample, x: &[f64], x2: &[f64]) -> Result<f64> {
    let pre = ctx.increment_prefactor(ctx.exponents.q_tilde_a, ctx.exponents.q_tilde_w)?;
    let (z, z2, za) = (ctx.preacts(x)?, ctx.preacts(x2)?, ctx.preacts(&gs_a.x)?);
    let s = (ctx.params.a_hat() * &ctx.dphi(&z) * ctx.dphi(&z2) * ctx.phi(&za)).sum();
    Ok(-pre * gs_a.grad * 2.0 * s * dot(x, x2))
}

/// `K_a` does not depend on `â`, so its change is driven by `η̂*_w` alone.
pub fn delta_k_aa_prime(_ctx: &KernelContext<'_>, _gs_a: &GradSample, _x: &[f64], _x2: &[f64]) -> f64 {
    0.0
}

/// Mean over `sample` of `η̂*_a K_a(x,x) + η̂*_w K_w(x,x)`.
pub fn kernel_diag_summary(ctx: &KernelContext<'_>, sample: ArrayView2<'_, f64>) -> Result<f64> {
    if sample.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    let mut total = 0.0;
    for row in sample.rows() {
        let x = row.to_vec();
        total += ctx.anchors.eta_hat_a_star * kernel_a(ctx, &x, &x)? + ctx.anchors.eta_hat_w_star * kernel_w(ctx, &x, &x)?;
    }
    Ok(total / sample.nrows() as f64)
}
