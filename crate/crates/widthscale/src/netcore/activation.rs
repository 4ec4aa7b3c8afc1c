use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Leak coefficient of the leaky softplus `φ(z) = ln(1+e^z) - α ln(1+e^{-z})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ActivationConfig {
    alpha: f64,
}

impl ActivationConfig {
    pub const DEFAULT: Self = Self { alpha: 0.2 };

    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self { alpha })
        } else {
            Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<f64> for ActivationConfig {
    type Error = Error;
    fn try_from(alpha: f64) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<ActivationConfig> for f64 {
    fn from(cfg: ActivationConfig) -> f64 {
        cfg.alpha
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic sigmoid `1 / (1 + e^{-z})`.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    if z >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    }
}

/// `φ(z)`, using `softplus(-z) = softplus(z) - z` so only one softplus is evaluated.
#[inline]
pub fn activation(z: f64, cfg: ActivationConfig) -> f64 {
    let a = cfg.alpha;
    (1.0 - a) * softplus(z) + a * z
}

/// `φ'(z) = σ(z) + α σ(-z)`.
#[inline]
pub fn activation_prime(z: f64, cfg: ActivationConfig) -> f64 {
    let a = cfg.alpha;
    (1.0 - a) * sigmoid(z) + a
}

/// `φ''(z) = (1-α) σ(z) σ(-z)`.
#[inline]
pub fn activation_second(z: f64, cfg: ActivationConfig) -> f64 {
    let s = sigmoid(z);
    (1.0 - cfg.alpha) * s * (1.0 - s)
}

/// `(φ(z), φ'(z))` sharing one exponential.
#[inline]
pub(crate) fn activation_with_prime(z: f64, alpha: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    let sp = z.max(0.0) + e.ln_1p();
    let sig = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    ((1.0 - alpha) * sp + alpha * z, (1.0 - alpha) * sig + alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const CFG: ActivationConfig = ActivationConfig::DEFAULT;

    #[test]
    fn values_at_origin() {
        assert_abs_diff_eq!(activation(0.0, CFG), 0.5545177444479562, epsilon = 1e-15);
        assert_abs_diff_eq!(activation_prime(0.0, CFG), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(activation_second(0.0, CFG), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn asymptotes() {
        assert_abs_diff_eq!(activation(50.0, CFG), 50.0, epsilon = 1e-9);
        assert_abs_diff_eq!(activation(-50.0, CFG), -10.0, epsilon = 1e-9);
        assert!(activation(1e6, CFG).is_finite() && activation(-1e6, CFG).is_finite());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        let z = 0.7;
        let fd = (activation(z + h, CFG) - activation(z - h, CFG)) / (2.0 * h);
        assert_abs_diff_eq!(fd, activation_prime(z, CFG), epsilon = 1e-7);
        let fd2 = (activation_prime(z + h, CFG) - activation_prime(z - h, CFG)) / (2.0 * h);
        assert_abs_diff_eq!(fd2, activation_second(z, CFG), epsilon = 1e-7);
    }

    #[test]
    fn alpha_is_validated() {
        assert!(ActivationConfig::new(0.0).is_err());
        assert!(ActivationConfig::new(1.0).is_err());
        assert!(ActivationConfig::new(0.5).is_ok());
    }

    proptest! {
        #[test]
        fn matches_two_softplus_form(z in -30.0f64..30.0, alpha in 0.01f64..0.99) {
            let cfg = ActivationConfig::new(alpha).unwrap();
            let direct = (1.0 + z.exp()).ln() - alpha * (1.0 + (-z).exp()).ln();
            prop_assert!((activation(z, cfg) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
            let (p, dp) = activation_with_prime(z, alpha);
            prop_assert_eq!(p, activation(z, cfg));
            prop_assert!((dp - activation_prime(z, cfg)).abs() <= 1e-15);
        }
    }
}
