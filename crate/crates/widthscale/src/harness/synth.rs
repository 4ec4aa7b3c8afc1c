use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::netcore::Dataset;
use crate::seed::{stream_seed, Stream};

/// Two isotropic unit-variance gaussian classes with means `±mu e1` (label `+1` at `+mu e1`),
/// features scaled by `1/√d_x`. Labels are fair coin flips.
pub fn synth_dataset(d_x: usize, n_train: usize, n_test: usize, mu: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if d_x == 0 || n_train == 0 || n_test == 0 {
        return Err(Error::InvalidParameter("synthetic data needs d_x, n_train, n_test >= 1".into()));
    }
    if !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("separation must be finite, got {mu}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, Stream::Data));
    let pre = format!("gaussian blobs mu={mu}, scaled by 1/sqrt({d_x})");
    let mut draw = |n: usize, name: &str| {
        let scale = (d_x as f64).sqrt().recip();
        let mut xs = Array2::<f64>::zeros((n, d_x));
        let mut ys = Vec::with_capacity(n);
        for mut row in xs.rows_mut() {
            let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
            for (j, v) in row.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                let mean = if j == 0 { y * mu } else { 0.0 };
                *v = (z + mean) * scale;
            }
            ys.push(y);
        }
        Dataset::new(name, pre.clone(), xs, ys)
    };
    let train = draw(n_train, "synthetic-train")?;
    let test = draw(n_test, "synthetic-test")?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(synth_dataset(5, 10, 7, 1.5, 3).unwrap(), synth_dataset(5, 10, 7, 1.5, 3).unwrap());
        assert_ne!(synth_dataset(5, 10, 7, 1.5, 3).unwrap(), synth_dataset(5, 10, 7, 1.5, 4).unwrap());
    }

    #[test]
    fn class_means_split_on_first_feature() {
        let (train, _) = synth_dataset(20, 1024, 1, 1.5, 0).unwrap();
        let (mut pos, mut neg, mut np, mut nn) = (0.0, 0.0, 0, 0);
        for i in 0..train.len() {
            if train.y(i) > 0.0 {
                pos += train.x(i)[0];
                np += 1;
            } else {
                neg += train.x(i)[0];
                nn += 1;
            }
        }
        let (mp, mn) = (pos / np as f64, neg / nn as f64);
        // Each class mean has standard error below (1/√20)/√(~400); four of those sit well inside 1.5/√20.
        let se = (20f64).sqrt().recip() / (np.min(nn) as f64).sqrt();
        assert!(mp > 4.0 * se && mn < -4.0 * se, "{mp} {mn}");
        assert!(np > 400 && nn > 400);
    }

    #[test]
    fn rejects_empty_splits() {
        assert!(synth_dataset(3, 0, 1, 1.0, 0).is_err());
        assert!(synth_dataset(0, 1, 1, 1.0, 0).is_err());
    }
}
