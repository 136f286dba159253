//! Datasets, loaders, subsampling and gradient-budget schedules.

mod augment;
mod budget;
mod csv;
mod idx;
mod toy;

pub use augment::{
    adjust_brightness, adjust_contrast, augment_batch, flip_horizontal, pad_and_crop, AugmentKind, ImageShape,
};
pub use budget::{schedule_for_budget, BudgetSchedule};
pub use csv::{read_csv, write_csv};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use toy::{gen_toy_gaussians, toy_bayes_probability};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::seed::rng_from_seed;

/// Features, integer labels and optional per-class labeller counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Raw labeller tallies, `n x C`.
    pub counts: Option<Matrix>,
    pub num_classes: usize,
    /// Set for image data; enables augmentation.
    pub image_shape: Option<ImageShape>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            features,
            labels,
            counts: None,
            num_classes,
            image_shape: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_counts(mut self, counts: Matrix) -> Result<Self> {
        self.counts = Some(counts);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(invalid("dataset must contain at least one example"));
        }
        if self.num_classes < 2 {
            return Err(invalid("num_classes must be >= 2"));
        }
        if self.features.rows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: self.features.rows(),
                context: "feature rows vs labels",
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(invalid(format!("label {bad} outside [0, {})", self.num_classes)));
        }
        if let Some(counts) = &self.counts {
            if counts.rows() != n || counts.cols() != self.num_classes {
                return Err(invalid(format!(
                    "counts must be {n}x{}, got {}x{}",
                    self.num_classes,
                    counts.rows(),
                    counts.cols()
                )));
            }
            for (i, row) in counts.row_iter().enumerate() {
                if row.iter().any(|&c| c < 0.0 || c.fract() != 0.0) {
                    return Err(invalid(format!("counts row {i} must be nonnegative integers")));
                }
                if row.iter().sum::<f64>() < 1.0 {
                    return Err(invalid(format!("counts row {i} sums to zero")));
                }
            }
        }
        if let Some(shape) = self.image_shape {
            if shape.len() != self.features.cols() {
                return Err(invalid("image shape does not match feature width"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows `indices` as a new dataset, in the given order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> LabeledDataset {
        LabeledDataset {
            name: name.into(),
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            counts: self.counts.as_ref().map(|c| c.select_rows(indices)),
            num_classes: self.num_classes,
            image_shape: self.image_shape,
        }
    }

    /// Per-class frequencies of the integer labels.
    pub fn class_frequencies(&self) -> Vec<f64> {
        let mut freq = vec![0.0; self.num_classes];
        for &y in &self.labels {
            freq[y] += 1.0;
        }
        let n = self.len() as f64;
        freq.iter_mut().for_each(|f| *f /= n);
        freq
    }
}

/// Uniform subsample of `m` examples without replacement.
pub fn subsample(dataset: &LabeledDataset, m: usize, seed: u64) -> Result<LabeledDataset> {
    let n = dataset.len();
    if m == 0 || m > n {
        return Err(invalid(format!("subsample size {m} must lie in [1, {n}]")));
    }
    let mut rng = rng_from_seed(seed);
    let idx = sample(&mut rng, n, m).into_vec();
    Ok(dataset.select(&idx, format!("{}[sub{m}]", dataset.name)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(n: usize) -> LabeledDataset {
        let features = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledDataset::new("ramp", features, (0..n).map(|i| i % 3).collect(), 3).unwrap()
    }

    #[test]
    fn subsample_full_size_is_a_permutation() {
        let ds = labelled(50);
        let sub = subsample(&ds, 50, 1).unwrap();
        let mut seen: Vec<usize> = sub.features.as_slice().iter().map(|&v| v as usize).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn subsample_is_seeded_and_bounded() {
        let ds = labelled(40);
        assert_eq!(subsample(&ds, 10, 3).unwrap(), subsample(&ds, 10, 3).unwrap());
        assert!(subsample(&ds, 41, 3).is_err());
        assert!(subsample(&ds, 0, 3).is_err());
        let sub = subsample(&ds, 10, 3).unwrap();
        // labels stay attached to their features
        for (x, &y) in sub.features.as_slice().iter().zip(&sub.labels) {
            assert_eq!(*x as usize % 3, y);
        }
    }

    #[test]
    fn subsample_preserves_class_frequencies_in_expectation() {
        let features = Matrix::zeros(1000, 1);
        let labels: Vec<usize> = (0..1000).map(|i| usize::from(i % 10 < 3)).collect();
        let ds = LabeledDataset::new("skew", features, labels, 2).unwrap();
        let m = 100;
        let seeds = 200;
        let mean_freq: f64 = (0..seeds)
            .map(|s| subsample(&ds, m, s).unwrap().class_frequencies()[1])
            .sum::<f64>()
            / seeds as f64;
        // binomial standard error of the averaged frequency
        let se = (0.3 * 0.7 / (m as f64 * seeds as f64)).sqrt();
        assert!((mean_freq - 0.3).abs() <= 3.0 * se, "{mean_freq}");
    }

    #[test]
    fn validation_rejects_bad_labels_and_counts() {
        let features = Matrix::zeros(2, 1);
        assert!(LabeledDataset::new("x", features.clone(), vec![0, 2], 2).is_err());
        assert!(LabeledDataset::new("x", Matrix::zeros(0, 1), vec![], 2).is_err());
        let ds = LabeledDataset::new("x", features, vec![0, 1], 2).unwrap();
        let zero_row = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(ds.clone().with_counts(zero_row).is_err());
        let ok = Matrix::from_vec(2, 2, vec![1.0, 2.0, 0.0, 3.0]).unwrap();
        assert!(ds.with_counts(ok).is_ok());
    }
}
