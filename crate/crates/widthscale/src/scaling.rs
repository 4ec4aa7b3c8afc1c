//! Power-law hyperparameter scalings and the taxonomy of their infinite-width limits.
//!
//! A scaling fixes how the output std `σ` and the hatted learning rates `η̂_a`, `η̂_w`
//! grow with width `d` relative to a reference model of width `d*`. Four exponent
//! combinations (the condition values `s1..s4`) decide which limit a scaling has;
//! inside the stability band `s4 ∈ [-1/2, 0]` their signs cut out 13 regions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for snapping condition values to zero.
pub const SIGN_TOL: f64 = 1e-9;

/// Width exponents of `σ`, `η̂_a` and `η̂_w`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents {
    pub q_sigma: f64,
    pub q_tilde_a: f64,
    pub q_tilde_w: f64,
}

impl ScalingExponents {
    pub fn new(q_sigma: f64, q_tilde_a: f64, q_tilde_w: f64) -> Result<Self> {
        let s = Self {
            q_sigma,
            q_tilde_a,
            q_tilde_w,
        };
        s.validate()?;
        Ok(s)
    }

    /// Equal learning-rate exponents for both layers.
    pub fn symmetric(q_sigma: f64, q_tilde: f64) -> Result<Self> {
        Self::new(q_sigma, q_tilde, q_tilde)
    }

    pub fn ntk() -> Self {
        Self::symmetric(-0.5, 0.0).expect("finite")
    }

    pub fn mean_field() -> Self {
        Self::symmetric(-1.0, 1.0).expect("finite")
    }

    pub fn sym_default() -> Self {
        Self::symmetric(-0.5, 0.5).expect("finite")
    }

    /// Constant learning rates in the original parameterization with standard init.
    pub fn default_scaling() -> Self {
        Self::new(-0.5, 1.0, 0.0).expect("finite")
    }

    /// Looks up a named scaling: `ntk`, `mf`, `sym-default`, `default`, or `icmf` (which trains at `mf`).
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "ntk" => Some(Self::ntk()),
            "mf" | "icmf" => Some(Self::mean_field()),
            "sym-default" => Some(Self::sym_default()),
            "default" => Some(Self::default_scaling()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("q_sigma", self.q_sigma),
            ("q_tilde_a", self.q_tilde_a),
            ("q_tilde_w", self.q_tilde_w),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.q_tilde_a - self.q_tilde_w).abs() <= tol
    }

    pub fn is_default(&self) -> bool {
        *self == Self::default_scaling()
    }

    /// The single learning-rate exponent used by the taxonomy.
    ///
    /// The default scaling is accepted and mapped to the mean of its two exponents,
    /// which places it at the sym-default vertex it shares its limit dynamics with.
    pub fn taxonomy_q_tilde(&self) -> Result<f64> {
        if self.is_symmetric(SIGN_TOL) {
            Ok(self.q_tilde_a)
        } else if self.is_default() {
            Ok(0.5 * (self.q_tilde_a + self.q_tilde_w))
        } else {
            Err(Error::NonSymmetricScaling {
                q_tilde_a: self.q_tilde_a,
                q_tilde_w: self.q_tilde_w,
            })
        }
    }
}

/// Reference-model constants that pin a scaling family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub d_star: usize,
    pub sigma_star: f64,
    pub eta_hat_a_star: f64,
    pub eta_hat_w_star: f64,
}

impl Default for Anchors {
    /// `d* = 128`, `σ* = 1/√d*` and original learning rates of 0.02 for both layers.
    fn default() -> Self {
        let d_star = 128usize;
        let sigma_star = 1.0 / (d_star as f64).sqrt();
        Self {
            d_star,
            sigma_star,
            eta_hat_a_star: 0.02 / (sigma_star * sigma_star),
            eta_hat_w_star: 0.02,
        }
    }
}

impl Anchors {
    pub fn new(d_star: usize, sigma_star: f64, eta_hat_a_star: f64, eta_hat_w_star: f64) -> Result<Self> {
        let a = Self {
            d_star,
            sigma_star,
            eta_hat_a_star,
            eta_hat_w_star,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_star == 0 {
            return Err(Error::InvalidParameter("d_star must be at least 1".into()));
        }
        for (name, v) in [
            ("sigma_star", self.sigma_star),
            ("eta_hat_a_star", self.eta_hat_a_star),
            ("eta_hat_w_star", self.eta_hat_w_star),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `d / d*` as a real number.
    pub fn width_ratio(&self, d: usize) -> f64 {
        d as f64 / self.d_star as f64
    }
}

/// Concrete hyperparameters of a width-`d` network.
///
/// Fields are public and unchecked so that callers may probe the update equations
/// at arbitrary (including negative) learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub sigma: f64,
    pub eta_hat_a: f64,
    pub eta_hat_w: f64,
    pub width: usize,
}

pub fn hyperparams_at(exp: &ScalingExponents, anch: &Anchors, d: usize) -> Result<Hyperparams> {
    if d == 0 {
        return Err(Error::InvalidParameter("width must be at least 1".into()));
    }
    let ratio = anch.width_ratio(d);
    Ok(Hyperparams {
        sigma: anch.sigma_star * ratio.powf(exp.q_sigma),
        eta_hat_a: anch.eta_hat_a_star * ratio.powf(exp.q_tilde_a),
        eta_hat_w: anch.eta_hat_w_star * ratio.powf(exp.q_tilde_w),
        width: d,
    })
}

/// Learning rates `(η_a, η_w)` of the original parameterization, with `σ_w = 1`.
pub fn original_learning_rates(hp: &Hyperparams) -> (f64, f64) {
    (hp.eta_hat_a * hp.sigma * hp.sigma, hp.eta_hat_w)
}

/// The four separating condition values.
///
/// * `s1 = q_σ + 1/2`: initial logits stay finite when zero.
/// * `s2 = 2q_σ + q̃ + 1`: initial tangent kernels stay finite when zero.
/// * `s3 = q_σ + q̃ + 1/2`: the first logit increment is comparable to the initial logit when zero.
/// * `s4 = q_σ + q̃`: kernels evolve when zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionValues {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
}

impl ConditionValues {
    pub fn as_array(&self) -> [f64; 4] {
        [self.s1, self.s2, self.s3, self.s4]
    }

    pub fn signs(&self, tol: f64) -> [Sign; 4] {
        self.as_array().map(|s| Sign::snap(s, tol))
    }
}

pub fn condition_values(exp: &ScalingExponents) -> Result<ConditionValues> {
    let q_tilde = exp.taxonomy_q_tilde()?;
    // Built from s1 and s4 so that s2 - s3 = s1 and s3 - s4 = 1/2 hold to rounding.
    let s1 = exp.q_sigma + 0.5;
    let s4 = exp.q_sigma + q_tilde;
    let s3 = s4 + 0.5;
    let s2 = s1 + s3;
    Ok(ConditionValues { s1, s2, s3, s4 })
}

pub fn is_dynamically_stable(exp: &ScalingExponents, tol: f64) -> Result<bool> {
    if tol < 0.0 || tol.is_nan() {
        return Err(Error::InvalidTolerance(tol));
    }
    let s4 = condition_values(exp)?.s4;
    Ok((-0.5 - tol..=tol).contains(&s4))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Neg,
    Zero,
    Pos,
}

impl Sign {
    pub fn snap(v: f64, tol: f64) -> Self {
        if v.abs() <= tol {
            Sign::Zero
        } else if v > 0.0 {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }

    fn symbol(self) -> char {
        match self {
            Sign::Neg => '-',
            Sign::Zero => '0',
            Sign::Pos => '+',
        }
    }
}

/// The 13 regions of the stability band, named by their place in the `(q_σ, q̃)` plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionId {
    Ntk,
    MeanField,
    SymDefault,
    LowerLeftOfNtk,
    LowerRightOfNtk,
    UpperLeftOfMf,
    UpperBetweenMfAndSymDefault,
    UpperRightOfSymDefault,
    FiniteLogitLine,
    FiniteKernelLine,
    LeftFace,
    MiddleFace,
    RightFace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionKind {
    Vertex,
    Edge,
    Face,
}

impl RegionId {
    pub const ALL: [RegionId; 13] = [
        RegionId::Ntk,
        RegionId::MeanField,
        RegionId::SymDefault,
        RegionId::LowerLeftOfNtk,
        RegionId::LowerRightOfNtk,
        RegionId::UpperLeftOfMf,
        RegionId::UpperBetweenMfAndSymDefault,
        RegionId::UpperRightOfSymDefault,
        RegionId::FiniteLogitLine,
        RegionId::FiniteKernelLine,
        RegionId::LeftFace,
        RegionId::MiddleFace,
        RegionId::RightFace,
    ];

    /// Signs of `(s1, s2, s3, s4)` inside the region.
    pub fn sign_pattern(self) -> [Sign; 4] {
        use Sign::{Neg as N, Pos as P, Zero as Z};
        match self {
            RegionId::RightFace => [P, P, P, N],
            RegionId::FiniteLogitLine => [Z, P, P, N],
            RegionId::MiddleFace => [N, P, P, N],
            RegionId::FiniteKernelLine => [N, Z, P, N],
            RegionId::LeftFace => [N, N, P, N],
            RegionId::LowerRightOfNtk => [P, P, Z, N],
            RegionId::Ntk => [Z, Z, Z, N],
            RegionId::LowerLeftOfNtk => [N, N, Z, N],
            RegionId::UpperRightOfSymDefault => [P, P, P, Z],
            RegionId::SymDefault => [Z, P, P, Z],
            RegionId::UpperBetweenMfAndSymDefault => [N, P, P, Z],
            RegionId::MeanField => [N, Z, P, Z],
            RegionId::UpperLeftOfMf => [N, N, P, Z],
        }
    }

    pub fn from_pattern(pattern: [Sign; 4]) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.sign_pattern() == pattern)
    }

    pub fn kind(self) -> RegionKind {
        let zeros = self.sign_pattern().iter().filter(|s| **s == Sign::Zero).count();
        match (zeros, self) {
            (_, RegionId::Ntk | RegionId::MeanField | RegionId::SymDefault) => RegionKind::Vertex,
            (0, _) => RegionKind::Face,
            _ => RegionKind::Edge,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionId::Ntk => "NTK",
            RegionId::MeanField => "MF",
            RegionId::SymDefault => "SymDefault",
            RegionId::LowerLeftOfNtk => "LowerLeftOfNTK",
            RegionId::LowerRightOfNtk => "LowerRightOfNTK",
            RegionId::UpperLeftOfMf => "UpperLeftOfMF",
            RegionId::UpperBetweenMfAndSymDefault => "UpperBetweenMFAndSymDefault",
            RegionId::UpperRightOfSymDefault => "UpperRightOfSymDefault",
            RegionId::FiniteLogitLine => "FiniteLogitLine",
            RegionId::FiniteKernelLine => "FiniteKernelLine",
            RegionId::LeftFace => "LeftFace",
            RegionId::MiddleFace => "MiddleFace",
            RegionId::RightFace => "RightFace",
        }
    }

    pub fn pattern_string(self) -> String {
        let p = self.sign_pattern();
        format!("({},{},{},{})", p[0].symbol(), p[1].symbol(), p[2].symbol(), p[3].symbol())
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn classify_region(exp: &ScalingExponents, tol: f64) -> Result<RegionId> {
    if !is_dynamically_stable(exp, tol)? {
        return Err(Error::OutsideStabilityBand(condition_values(exp)?.s4));
    }
    let cv = condition_values(exp)?;
    RegionId::from_pattern(cv.signs(tol)).ok_or(Error::InconsistentSigns(cv.as_array()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelMode {
    Constant,
    Evolving,
}

/// Law of the normalized initial logit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InitLogitMode {
    Zero,
    Gaussian,
}

/// Limit form of the loss gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GradMode {
    /// Logits vanish: `-y/2`.
    HalfY,
    /// Logits finite: `-y / (1 + exp(f y))`.
    Sigmoid,
    /// Logits diverge: `-y [f y < 0]`.
    Sign,
}

impl GradMode {
    fn from_sign(s: Sign) -> Self {
        match s {
            Sign::Neg => GradMode::HalfY,
            Sign::Zero => GradMode::Sigmoid,
            Sign::Pos => GradMode::Sign,
        }
    }
}

/// Recipe for simulating the limit dynamics of a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GradientRegime {
    pub kernel_mode: KernelMode,
    pub init_logit_mode: InitLogitMode,
    pub init_grad_mode: GradMode,
    pub late_grad_mode: GradMode,
}

pub fn gradient_regime(region: RegionId) -> GradientRegime {
    let [s1, s2, s3, s4] = region.sign_pattern();
    GradientRegime {
        kernel_mode: if s4 == Sign::Zero {
            KernelMode::Evolving
        } else {
            KernelMode::Constant
        },
        init_logit_mode: if s3 == Sign::Zero {
            InitLogitMode::Gaussian
        } else {
            InitLogitMode::Zero
        },
        init_grad_mode: GradMode::from_sign(s1),
        late_grad_mode: GradMode::from_sign(s2),
    }
}
