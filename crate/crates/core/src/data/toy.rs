use rand_distr::{Distribution, StandardNormal};

use super::LabeledDataset;
use crate::error::{invalid, Result};
use crate::matrix::Matrix;
use crate::seed::rng_from_seed;

/// Two unit-variance 2D Gaussians centred at (-1,-1) (class 0) and (1,1)
/// (class 1), `n/2` points each, classes interleaved.
pub fn gen_toy_gaussians(n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(invalid(format!("toy dataset size must be even and positive, got {n}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let centre = if class == 0 { -1.0 } else { 1.0 };
        for _ in 0..2 {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(centre + z);
        }
        labels.push(class);
    }
    LabeledDataset::new(format!("toy{n}"), Matrix::from_vec(n, 2, data)?, labels, 2)
}

/// Bayes posterior `p(y=1 | x)` for the toy problem: `sigmoid(2 (x + y))`.
pub fn toy_bayes_probability(x: &[f64]) -> f64 {
    1.0 / (1.0 + (-2.0 * (x[0] + x[1])).exp())
}
