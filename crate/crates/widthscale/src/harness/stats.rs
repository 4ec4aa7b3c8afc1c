use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to a fitted variance that comes out exactly zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// `KL(N(m0, v0) || N(m1, v1))`.
pub fn kl_gaussian(m0: f64, v0: f64, m1: f64, v1: f64) -> Result<f64> {
    for v in [v0, v1] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::DegenerateGaussian(v));
        }
    }
    let r = (v0 + (m0 - m1).powi(2)) / v1;
    Ok(0.5 * ((r - 1.0) + (v1 / v0).ln()))
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((m, v))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    /// Number of gaussian fits whose variance was raised to [`VARIANCE_FLOOR`].
    pub floored: usize,
}

/// Average over inputs of `KL(fit(limit[i]) || fit(reference[i]))`, where `limit[i]` and
/// `reference[i]` hold one logit per seed for input `i`.
pub fn logits_kl(limit: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<KlEstimate> {
    if limit.len() != reference.len() {
        return Err(Error::Shape(format!(
            "{} limit inputs vs {} reference inputs",
            limit.len(),
            reference.len()
        )));
    }
    if limit.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut floored = 0;
    let mut fit = |xs: &[f64]| -> Result<(f64, f64)> {
        let (m, v) = mean_var(xs)?;
        if v <= 0.0 {
            floored += 1;
            Ok((m, VARIANCE_FLOOR))
        } else {
            Ok((m, v))
        }
    };
    let mut total = 0.0;
    for (l, r) in limit.iter().zip(reference) {
        let (m0, v0) = fit(l)?;
        let (m1, v1) = fit(r)?;
        total += kl_gaussian(m0, v0, m1, v1)?;
    }
    if floored > 0 {
        log::warn!("{floored} gaussian fit(s) had zero variance; floored to {VARIANCE_FLOOR:e}");
    }
    Ok(KlEstimate {
        value: total / limit.len() as f64,
        floored,
    })
}

/// Power-law fit `value ≈ e^intercept · width^slope`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub n_points: usize,
}

/// Ordinary least squares of `ln value` on `ln width`.
pub fn estimate_exponent(widths: &[f64], values: &[f64]) -> Result<ExponentFit> {
    if widths.len() != values.len() {
        return Err(Error::Shape(format!("{} widths vs {} values", widths.len(), values.len())));
    }
    if widths.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: widths.len(),
        });
    }
    let mut xs = Vec::with_capacity(widths.len());
    let mut ys = Vec::with_capacity(values.len());
    for (&w, &v) in widths.iter().zip(values) {
        if !(w > 0.0) {
            return Err(Error::LogDomain(w));
        }
        if !(v > 0.0) {
            return Err(Error::LogDomain(v));
        }
        xs.push(w.ln());
        ys.push(v.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("widths must not all be equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (sse / (n - 2.0) / sxx).sqrt();
    Ok(ExponentFit {
        slope,
        intercept,
        stderr,
        n_points: xs.len(),
    })
}
