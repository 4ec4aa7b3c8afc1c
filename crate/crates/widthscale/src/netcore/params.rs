use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-variance symmetric distribution for initial hatted weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitDist {
    #[default]
    Gaussian,
    /// Uniform on `[-√3, √3]`.
    UniformSymmetric,
}

impl InitDist {
    pub(crate) fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            InitDist::Gaussian => rng.sample(StandardNormal),
            InitDist::UniformSymmetric => rng.random_range(-1.0..1.0) * 3f64.sqrt(),
        }
    }
}

/// Hatted weights of a one-hidden-layer net: `â ∈ R^d` and `Ŵ ∈ R^{d_x × d}` with column `r` equal to `ŵ_r`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    a_hat: Array1<f64>,
    w_hat: Array2<f64>,
}

impl Params {
    pub fn new(a_hat: Array1<f64>, w_hat: Array2<f64>) -> Result<Self> {
        if w_hat.ncols() != a_hat.len() {
            return Err(Error::Shape(format!(
                "a_hat has {} entries but w_hat has {} columns",
                a_hat.len(),
                w_hat.ncols()
            )));
        }
        if a_hat.is_empty() || w_hat.nrows() == 0 {
            return Err(Error::Shape("width and input dimension must be at least 1".into()));
        }
        if a_hat.iter().chain(w_hat.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite".into()));
        }
        Ok(Self { a_hat, w_hat })
    }

    pub fn width(&self) -> usize {
        self.a_hat.len()
    }

    pub fn input_dim(&self) -> usize {
        self.w_hat.nrows()
    }

    pub fn a_hat(&self) -> &Array1<f64> {
        &self.a_hat
    }

    pub fn w_hat(&self) -> &Array2<f64> {
        &self.w_hat
    }

    pub fn a_hat_mut(&mut self) -> ndarray::ArrayViewMut1<'_, f64> {
        self.a_hat.view_mut()
    }

    pub fn w_hat_mut(&mut self) -> ndarray::ArrayViewMut2<'_, f64> {
        self.w_hat.view_mut()
    }

    pub fn is_finite(&self) -> bool {
        self.a_hat.iter().chain(self.w_hat.iter()).all(|v| v.is_finite())
    }
}

/// Frozen copy of the parameters at step 0.
#[derive(Clone, Debug, PartialEq)]
pub struct InitSnapshot(Params);

impl InitSnapshot {
    pub fn capture(p: &Params) -> Self {
        Self(p.clone())
    }

    pub fn params(&self) -> &Params {
        &self.0
    }
}

/// Draws i.i.d. unit-variance initial weights; `â` first, then `Ŵ` column by column.
pub fn init_params(d: usize, d_x: usize, seed: u64, dist: InitDist) -> Result<Params> {
    if d == 0 || d_x == 0 {
        return Err(Error::Shape("width and input dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_hat = Array1::from_shape_fn(d, |_| dist.sample(&mut rng));
    let mut w_hat = Array2::zeros((d_x, d));
    for r in 0..d {
        for i in 0..d_x {
            w_hat[[i, r]] = dist.sample(&mut rng);
        }
    }
    Params::new(a_hat, w_hat)
}
