//! Potential energy `U(theta) = -sum_i log p(y_i | x_i, theta) - log p(theta)`
//! with a Gaussian prior and several likelihood variants.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{invalid, Result};
use crate::matrix::Matrix;
use crate::nn::{grad_loglik, loglik, GradVector, MlpSpec, Targets};

/// Isotropic Gaussian prior `N(0, std^2 I)` over all weights and biases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub std: f64,
}

impl PriorConfig {
    pub fn new(std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() {
            return Err(invalid(format!("prior std must be > 0, got {std}")));
        }
        Ok(Self { std })
    }
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { std: 1.0 }
    }
}

/// How the supervision of an example enters the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LikelihoodKind {
    /// `log f_i[y_i]`.
    Categorical,
    /// `y_i^T log f_i` with raw labeller counts `y_i`.
    Counts,
    /// `(y_i / S)^T log f_i`. With `labellers: None`, `S` is each example's own
    /// count total.
    CountsSmoothed { labellers: Option<u32> },
    /// Target `1 - alpha` on the label and `alpha / C` on every other class.
    LabelSmoothing { alpha: f64 },
}

impl LikelihoodKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LikelihoodKind::LabelSmoothing { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                Err(invalid(format!("label smoothing alpha must lie in (0,1), got {alpha}")))
            }
            LikelihoodKind::CountsSmoothed { labellers: Some(0) } => Err(invalid("number of labellers must be >= 1")),
            _ => Ok(()),
        }
    }

    pub fn needs_counts(&self) -> bool {
        matches!(self, LikelihoodKind::Counts | LikelihoodKind::CountsSmoothed { .. })
    }
}

/// Sum of a label-smoothing target vector, `1 - alpha + (C - 1) alpha / C`.
/// Equals one only in the limit `alpha -> 0`.
pub fn label_smoothing_target_sum(alpha: f64, num_classes: usize) -> f64 {
    1.0 - alpha + (num_classes as f64 - 1.0) * alpha / num_classes as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperMode {
    /// Target `exp(-U / T)`: prior and likelihood both tempered.
    Joint,
    /// Target `exp(log lik / T + log prior)`.
    LikelihoodOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperScales {
    pub lik_scale: f64,
    pub prior_scale: f64,
    pub noise_temp: f64,
}

/// Joint tempering is carried entirely by the sampler noise temperature;
/// likelihood-only tempering rescales the likelihood gradient and runs at unit
/// noise temperature.
pub fn effective_scales(temperature: f64, mode: TemperMode) -> Result<TemperScales> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(invalid(format!("temperature must be > 0, got {temperature}")));
    }
    Ok(match mode {
        TemperMode::Joint => TemperScales {
            lik_scale: 1.0,
            prior_scale: 1.0,
            noise_temp: temperature,
        },
        TemperMode::LikelihoodOnly => TemperScales {
            lik_scale: 1.0 / temperature,
            prior_scale: 1.0,
            noise_temp: 1.0,
        },
    })
}

/// `log N(theta; 0, std^2 I)` and its gradient `-theta / std^2`.
pub fn log_prior(params: &[f64], prior: &PriorConfig) -> (f64, GradVector) {
    let var = prior.std * prior.std;
    let d = params.len() as f64;
    let sq: f64 = params.iter().map(|v| v * v).sum();
    let value = -sq / (2.0 * var) - 0.5 * d * (2.0 * PI * var).ln();
    let grad = params.iter().map(|v| -v / var).collect();
    (value, GradVector(grad))
}

enum TargetBuf {
    Labels(Vec<usize>),
    Weights(Matrix),
}

impl TargetBuf {
    fn as_targets(&self) -> Targets<'_> {
        match self {
            TargetBuf::Labels(l) => Targets::Labels(l),
            TargetBuf::Weights(w) => Targets::Weights(w),
        }
    }
}

fn batch_targets(dataset: &LabeledDataset, indices: &[usize], kind: LikelihoodKind) -> Result<TargetBuf> {
    kind.validate()?;
    let c = dataset.num_classes;
    let counts = || {
        dataset.counts.as_ref().ok_or_else(|| {
            invalid(format!(
                "likelihood {kind:?} needs label counts on dataset `{}`",
                dataset.name
            ))
        })
    };
    Ok(match kind {
        LikelihoodKind::Categorical => TargetBuf::Labels(indices.iter().map(|&i| dataset.labels[i]).collect()),
        LikelihoodKind::Counts => TargetBuf::Weights(counts()?.select_rows(indices)),
        LikelihoodKind::CountsSmoothed { labellers } => {
            let mut w = counts()?.select_rows(indices);
            for r in 0..w.rows() {
                let row = w.row_mut(r);
                let s = match labellers {
                    Some(s) => f64::from(s),
                    None => row.iter().sum(),
                };
                if s > 0.0 {
                    row.iter_mut().for_each(|v| *v /= s);
                }
            }
            TargetBuf::Weights(w)
        }
        LikelihoodKind::LabelSmoothing { alpha } => {
            let off = alpha / c as f64;
            let mut w = Matrix::from_vec(indices.len(), c, vec![off; indices.len() * c])?;
            for (r, &i) in indices.iter().enumerate() {
                w.set(r, dataset.labels[i], 1.0 - alpha);
            }
            TargetBuf::Weights(w)
        }
    })
}

fn check_indices(dataset: &LabeledDataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(invalid("batch must contain at least one index"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(invalid(format!(
            "batch index {bad} outside dataset of size {}",
            dataset.len()
        )));
    }
    Ok(())
}

/// Un-scaled log-likelihood of the selected examples and its gradient.
pub fn batch_loglik_grad(
    spec: &MlpSpec,
    params: &[f64],
    dataset: &LabeledDataset,
    indices: &[usize],
    kind: LikelihoodKind,
) -> Result<(f64, GradVector)> {
    check_indices(dataset, indices)?;
    let inputs = dataset.features.select_rows(indices);
    let targets = batch_targets(dataset, indices, kind)?;
    grad_loglik(spec, params, &inputs, targets.as_targets())
}

/// Log-likelihood of the selected examples.
pub fn batch_loglik(
    spec: &MlpSpec,
    params: &[f64],
    dataset: &LabeledDataset,
    indices: &[usize],
    kind: LikelihoodKind,
) -> Result<f64> {
    check_indices(dataset, indices)?;
    let inputs = dataset.features.select_rows(indices);
    let targets = batch_targets(dataset, indices, kind)?;
    loglik(spec, params, &inputs, targets.as_targets())
}

fn all_indices(dataset: &LabeledDataset) -> Result<Vec<usize>> {
    if dataset.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    Ok((0..dataset.len()).collect())
}

/// Exact full-batch potential energy.
pub fn full_energy(
    spec: &MlpSpec,
    params: &[f64],
    dataset: &LabeledDataset,
    likelihood: LikelihoodKind,
    prior: &PriorConfig,
) -> Result<f64> {
    let ll = batch_loglik(spec, params, dataset, &all_indices(dataset)?, likelihood)?;
    Ok(-ll - log_prior(params, prior).0)
}

/// Exact full-batch potential energy and its gradient.
pub fn full_energy_grad(
    spec: &MlpSpec,
    params: &[f64],
    dataset: &LabeledDataset,
    likelihood: LikelihoodKind,
    prior: &PriorConfig,
) -> Result<(f64, GradVector)> {
    minibatch_energy_grad_weighted(spec, params, dataset, &all_indices(dataset)?, likelihood, prior, 1.0)
        .map(|e| (e.energy, e.grad))
}

/// Minibatch estimate of `U` and `grad U`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEstimate {
    pub energy: f64,
    pub grad: GradVector,
}

/// Unbiased estimate `-(n/B) sum_batch grad log p(y|x,theta) - grad log p(theta)`,
/// with `B` the actual batch size.
pub fn minibatch_energy_grad(
    spec: &MlpSpec,
    params: &[f64],
    dataset: &LabeledDataset,
    batch_indices: &[usize],
    likelihood: LikelihoodKind,
    prior: &PriorConfig,
) -> Result<EnergyEstimate> {
    minibatch_energy_grad_weighted(spec, params, dataset, batch_indices, likelihood, prior, 1.0)
}

/// As [`minibatch_energy_grad`] with the likelihood term multiplied by
/// `lik_weight` (likelihood-only tempering, likelihood over-weighting).
pub fn minibatch_energy_grad_weighted(
    spec: &MlpSpec,
    params: &[f64],
    dataset: &LabeledDataset,
    batch_indices: &[usize],
    likelihood: LikelihoodKind,
    prior: &PriorConfig,
    lik_weight: f64,
) -> Result<EnergyEstimate> {
    let (ll, mut grad) = batch_loglik_grad(spec, params, dataset, batch_indices, likelihood)?;
    let scale = lik_weight * dataset.len() as f64 / batch_indices.len() as f64;
    let (lp, gp) = log_prior(params, prior);
    for (g, p) in grad.iter_mut().zip(gp.iter()) {
        *g = -scale * *g - p;
    }
    Ok(EnergyEstimate {
        energy: -scale * ll - lp,
        grad,
    })
}
