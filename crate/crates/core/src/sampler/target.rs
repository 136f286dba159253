use crate::data::{augment_batch, AugmentKind, LabeledDataset};
use crate::energy::{log_prior, minibatch_energy_grad_weighted, EnergyEstimate, LikelihoodKind, PriorConfig};
use crate::error::{invalid, Result};
use crate::nn::{GradVector, MlpSpec};
use crate::seed::Rng;

/// Source of minibatch potential-energy estimates for a sampler.
pub trait GradientTarget: Sync {
    /// Number of data points `n` (the sampler batches over `0..n`).
    fn num_data(&self) -> usize;

    fn dim(&self) -> usize;

    /// Estimate of `U` and `grad U` from the examples in `batch`, with the
    /// likelihood term multiplied by `lik_scale`. `rng` drives any
    /// target-side randomness such as data augmentation.
    fn estimate(&self, params: &[f64], batch: &[usize], lik_scale: f64, rng: &mut Rng) -> Result<EnergyEstimate>;
}

/// Posterior of an MLP classifier under a Gaussian prior.
#[derive(Debug, Clone)]
pub struct BnnPosterior<'a> {
    pub spec: &'a MlpSpec,
    pub dataset: &'a LabeledDataset,
    pub likelihood: LikelihoodKind,
    pub prior: PriorConfig,
    /// Extra multiplier on the likelihood (over-weighting); 1 for the plain posterior.
    pub likelihood_weight: f64,
    pub augment: Option<AugmentKind>,
}

impl<'a> BnnPosterior<'a> {
    pub fn new(
        spec: &'a MlpSpec,
        dataset: &'a LabeledDataset,
        likelihood: LikelihoodKind,
        prior: PriorConfig,
    ) -> Result<Self> {
        spec.validate()?;
        likelihood.validate()?;
        if dataset.dim() != spec.input_dim || dataset.num_classes != spec.num_classes {
            return Err(invalid(format!(
                "dataset `{}` ({} features, {} classes) does not fit the network ({} inputs, {} classes)",
                dataset.name,
                dataset.dim(),
                dataset.num_classes,
                spec.input_dim,
                spec.num_classes
            )));
        }
        if likelihood.needs_counts() && dataset.counts.is_none() {
            return Err(invalid(format!("dataset `{}` has no label counts", dataset.name)));
        }
        Ok(Self {
            spec,
            dataset,
            likelihood,
            prior,
            likelihood_weight: 1.0,
            augment: None,
        })
    }

    pub fn with_likelihood_weight(mut self, weight: f64) -> Self {
        self.likelihood_weight = weight;
        self
    }

    pub fn with_augmentation(mut self, kind: Option<AugmentKind>) -> Self {
        self.augment = kind;
        self
    }
}

impl GradientTarget for BnnPosterior<'_> {
    fn num_data(&self) -> usize {
        self.dataset.len()
    }

    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn estimate(&self, params: &[f64], batch: &[usize], lik_scale: f64, rng: &mut Rng) -> Result<EnergyEstimate> {
        let weight = lik_scale * self.likelihood_weight;
        let Some(kind) = self.augment else {
            return minibatch_energy_grad_weighted(
                self.spec,
                params,
                self.dataset,
                batch,
                self.likelihood,
                &self.prior,
                weight,
            );
        };
        let mut inputs = self.dataset.features.select_rows(batch);
        augment_batch(&mut inputs, self.dataset.image_shape, kind, rng)?;
        let sub = LabeledDataset {
            features: inputs,
            ..self.dataset.select(batch, "augmented-batch")
        };
        let all: Vec<usize> = (0..batch.len()).collect();
        let scale = weight * self.dataset.len() as f64 / batch.len() as f64;
        // the sub-dataset has n = B, so rescale its full-batch likelihood by n/B
        let est = minibatch_energy_grad_weighted(self.spec, params, &sub, &all, self.likelihood, &self.prior, 1.0)?;
        let (lp, gp) = log_prior(params, &self.prior);
        let grad: Vec<f64> = est
            .grad
            .iter()
            .zip(gp.iter())
            .map(|(g, p)| (g + p) * scale - p)
            .collect();
        Ok(EnergyEstimate {
            energy: (est.energy + lp) * scale - lp,
            grad: GradVector(grad),
        })
    }
}

/// Gaussian-mean model: prior `theta ~ N(0, prior_std^2)`, observations
/// `x_i ~ N(theta, noise_std^2)`. The posterior is Gaussian in closed form.
#[derive(Debug, Clone)]
pub struct GaussianMeanModel {
    pub observations: Vec<f64>,
    pub prior_std: f64,
    pub noise_std: f64,
}

impl GaussianMeanModel {
    pub fn new(observations: Vec<f64>, prior_std: f64, noise_std: f64) -> Result<Self> {
        if observations.is_empty() {
            return Err(invalid("need at least one observation"));
        }
        if !(prior_std > 0.0) || !(noise_std > 0.0) {
            return Err(invalid("standard deviations must be positive"));
        }
        Ok(Self {
            observations,
            prior_std,
            noise_std,
        })
    }

    pub fn posterior_precision(&self) -> f64 {
        1.0 / self.prior_std.powi(2) + self.observations.len() as f64 / self.noise_std.powi(2)
    }

    pub fn posterior_mean(&self) -> f64 {
        self.observations.iter().sum::<f64>() / self.noise_std.powi(2) / self.posterior_precision()
    }

    pub fn posterior_variance(&self) -> f64 {
        1.0 / self.posterior_precision()
    }

    /// Variance of `p(theta | D)^{1/T}`.
    pub fn tempered_variance(&self, temperature: f64) -> f64 {
        temperature * self.posterior_variance()
    }
}

impl GradientTarget for GaussianMeanModel {
    fn num_data(&self) -> usize {
        self.observations.len()
    }

    fn dim(&self) -> usize {
        1
    }

    fn estimate(&self, params: &[f64], batch: &[usize], lik_scale: f64, _rng: &mut Rng) -> Result<EnergyEstimate> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let theta = params[0];
        let s2 = self.noise_std.powi(2);
        let scale = lik_scale * self.observations.len() as f64 / batch.len() as f64;
        let (mut u_lik, mut g_lik) = (0.0, 0.0);
        for &i in batch {
            let r = theta - self.observations[i];
            u_lik += r * r / (2.0 * s2);
            g_lik += r / s2;
        }
        let p2 = self.prior_std.powi(2);
        Ok(EnergyEstimate {
            energy: scale * u_lik + theta * theta / (2.0 * p2),
            grad: GradVector(vec![scale * g_lik + theta / p2]),
        })
    }
}
