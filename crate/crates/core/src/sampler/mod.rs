//! Stochastic-gradient MCMC: SGLD and SG-HMC with a cyclical cosine step size,
//! burn-in, one sample per cycle and temperature handling.
//!
//! Chains are generic over a [`GradientTarget`], which supplies minibatch
//! estimates of the potential energy `U` and its gradient. [`BnnPosterior`] is
//! the MLP posterior; [`GaussianMeanModel`] is a conjugate model with a
//! closed-form posterior used to check tempering.

mod optim;
mod target;

pub use optim::{adam_step, sgd_step, AdamConfig, AdamState};
pub use target::{BnnPosterior, GaussianMeanModel, GradientTarget};

use std::f64::consts::PI;

use log::debug;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{BudgetSchedule, LabeledDataset};
use crate::energy::{effective_scales, LikelihoodKind, PriorConfig, TemperMode};
use crate::error::{invalid, Error, Result};
use crate::nn::{init_params, MlpSpec, ParamVector};
use crate::seed::{derive_rng, derive_seed, Rng};

/// Potential-energy magnitude treated as divergence.
pub const DIVERGENCE_ENERGY: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Sgld,
    Sghmc,
}

/// How the scheduled learning rate `lr_t` maps to the integrator step `eps_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepConvention {
    /// `eps_t = lr_t`.
    Direct,
    /// Learning rate per example: SG-HMC uses `eps_t = sqrt(lr_t / n)`, SGLD
    /// uses `eps_t = lr_t / n`. Keeps the dynamics stable as `U` grows with `n`.
    PerExample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub temperature: f64,
    pub base_step: f64,
    pub batch_size: usize,
    pub burn_in_epochs: usize,
    pub cycle_epochs: usize,
    pub total_epochs: usize,
    /// SG-HMC friction coefficient; per-step friction is `eps_t * momentum_weight`.
    pub momentum_weight: f64,
    pub temper_mode: TemperMode,
    pub step_convention: StepConvention,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Sghmc,
            temperature: 1.0,
            base_step: 0.1,
            batch_size: 128,
            burn_in_epochs: 500,
            cycle_epochs: 75,
            total_epochs: 2000,
            momentum_weight: 0.9,
            temper_mode: TemperMode::Joint,
            step_convention: StepConvention::PerExample,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(invalid(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.base_step > 0.0) || !self.base_step.is_finite() {
            return Err(invalid(format!("base step must be > 0, got {}", self.base_step)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        if self.cycle_epochs == 0 {
            return Err(invalid("cycle length must be >= 1 epoch"));
        }
        if self.total_epochs <= self.burn_in_epochs {
            return Err(invalid(format!(
                "total epochs ({}) must exceed burn-in ({}) by at least one cycle",
                self.total_epochs, self.burn_in_epochs
            )));
        }
        if !(self.total_epochs - self.burn_in_epochs).is_multiple_of(self.cycle_epochs) {
            return Err(invalid(format!(
                "epochs after burn-in ({}) must be a whole number of {}-epoch cycles",
                self.total_epochs - self.burn_in_epochs,
                self.cycle_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.momentum_weight) {
            return Err(invalid(format!(
                "momentum weight must lie in [0, 1), got {}",
                self.momentum_weight
            )));
        }
        Ok(())
    }

    /// Number of posterior samples a completed chain returns.
    pub fn samples_per_chain(&self) -> usize {
        (self.total_epochs - self.burn_in_epochs) / self.cycle_epochs
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// Copies epoch counts and batch size from a budget schedule.
    pub fn with_schedule(mut self, schedule: &BudgetSchedule) -> Self {
        self.batch_size = schedule.batch_size;
        self.total_epochs = schedule.epochs;
        self.burn_in_epochs = schedule.burn_in_epochs;
        self.cycle_epochs = schedule.cycle_epochs;
        self
    }
}

/// Position, momentum and step counter of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub params: ParamVector,
    pub momentum: Vec<f64>,
    pub step: u64,
}

impl ChainState {
    pub fn new(params: ParamVector) -> Self {
        let d = params.len();
        Self {
            params,
            momentum: vec![0.0; d],
            step: 0,
        }
    }

    /// `m^T m / d`.
    pub fn kinetic_temperature(&self) -> f64 {
        kinetic_energy_per_dim(&self.momentum)
    }
}

fn kinetic_energy_per_dim(m: &[f64]) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.iter().map(|v| v * v).sum::<f64>() / m.len() as f64
}

/// Average of `m^T m / d` over a set of momentum vectors.
pub fn kinetic_temperature<M: AsRef<[f64]>>(momenta: &[M]) -> f64 {
    if momenta.is_empty() {
        return 0.0;
    }
    momenta.iter().map(|m| kinetic_energy_per_dim(m.as_ref())).sum::<f64>() / momenta.len() as f64
}

/// Cosine schedule `lr0/2 * (cos(pi * (t mod c) / c) + 1)`: starts each
/// cycle at `lr0` and decays towards zero.
pub fn cyclical_step(t: u64, steps_per_cycle: u64, base_step: f64) -> f64 {
    let c = steps_per_cycle.max(1);
    let phase = (t % c) as f64 / c as f64;
    0.5 * base_step * ((PI * phase).cos() + 1.0)
}

fn check_grad(state: &ChainState, grad: &[f64]) -> Result<()> {
    if grad.len() != state.params.len() {
        return Err(Error::DimensionMismatch {
            expected: state.params.len(),
            actual: grad.len(),
            context: "gradient vs parameters",
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            step: state.step,
            reason: "non-finite gradient".into(),
        });
    }
    Ok(())
}

fn check_state(state: &ChainState) -> Result<()> {
    if !state.params.is_finite() || state.momentum.iter().any(|m| !m.is_finite()) {
        return Err(Error::Diverged {
            step: state.step,
            reason: "non-finite parameters after update".into(),
        });
    }
    Ok(())
}

/// `theta <- theta - (eps/2) grad U + N(0, eps * T)`.
pub fn sgld_step(state: &mut ChainState, grad: &[f64], step_size: f64, noise_temp: f64, rng: &mut Rng) -> Result<()> {
    check_grad(state, grad)?;
    let noise_sd = (step_size * noise_temp).sqrt();
    for (p, g) in state.params.iter_mut().zip(grad) {
        let z: f64 = StandardNormal.sample(rng);
        *p += -0.5 * step_size * g + noise_sd * z;
    }
    state.step += 1;
    check_state(state)
}

/// `m <- (1 - eps a) m - eps grad U + sqrt(2 a eps T) xi`, then
/// `theta <- theta + eps m`, with `a` the friction (momentum weight).
pub fn sghmc_step(
    state: &mut ChainState,
    grad: &[f64],
    step_size: f64,
    momentum_weight: f64,
    noise_temp: f64,
    rng: &mut Rng,
) -> Result<()> {
    check_grad(state, grad)?;
    let decay = 1.0 - step_size * momentum_weight;
    if decay < 0.0 {
        return Err(invalid(format!(
            "step {step_size} times friction {momentum_weight} exceeds 1"
        )));
    }
    let noise_sd = (2.0 * momentum_weight * step_size * noise_temp).sqrt();
    for ((p, m), g) in state.params.iter_mut().zip(state.momentum.iter_mut()).zip(grad) {
        let z: f64 = StandardNormal.sample(rng);
        *m = decay * *m - step_size * g + noise_sd * z;
        *p += step_size * *m;
    }
    state.step += 1;
    check_state(state)
}

/// Where and how a posterior sample was collected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub cycle: usize,
    pub epoch: usize,
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEnsemble {
    pub samples: Vec<ParamVector>,
    pub meta: Vec<SampleMeta>,
}

impl PosteriorEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn from_samples(samples: Vec<ParamVector>) -> Self {
        let meta = (0..samples.len())
            .map(|cycle| SampleMeta {
                cycle,
                epoch: 0,
                step_size: 0.0,
            })
            .collect();
        Self { samples, meta }
    }
}

/// Per-cycle progress record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub epoch: usize,
    pub step_size: f64,
    pub energy: f64,
    pub kinetic_temp: f64,
    pub burn_in: bool,
}

impl std::fmt::Display for CycleRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "cycle={} epoch={} eps={:.6e} U={:.6} kinetic_T={:.6} burn_in={}",
            self.cycle, self.epoch, self.step_size, self.energy, self.kinetic_temp, self.burn_in
        )
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub ensemble: PosteriorEnsemble,
    /// Momenta at the collected samples (empty for SGLD).
    pub momenta: Vec<Vec<f64>>,
    pub gradient_evals: u64,
    pub cycle_log: Vec<CycleRecord>,
    pub final_state: ChainState,
}

impl ChainOutput {
    /// Kinetic temperature averaged over collected states.
    pub fn kinetic_temperature(&self) -> Option<f64> {
        (!self.momenta.is_empty()).then(|| kinetic_temperature(&self.momenta))
    }
}

/// Observer hook called after every step (for diagnostics and oracle tests).
pub trait StepObserver {
    fn observe(&mut self, state: &ChainState, burn_in: bool);
}

impl StepObserver for () {
    fn observe(&mut self, _: &ChainState, _: bool) {}
}

impl<F: FnMut(&ChainState, bool)> StepObserver for F {
    fn observe(&mut self, state: &ChainState, burn_in: bool) {
        self(state, burn_in)
    }
}

/// Runs one chain from `init` over `target`.
///
/// Each epoch reshuffles the data and takes one step per minibatch (the last
/// batch may be partial). The cosine schedule is phased so that every cycle
/// after burn-in ends on its smallest step; the state after that step is the
/// cycle's sample.
pub fn run_sampler<T, O>(target: &T, init: ParamVector, config: &SamplerConfig, observer: &mut O) -> Result<ChainOutput>
where
    T: GradientTarget + ?Sized,
    O: StepObserver + ?Sized,
{
    config.validate()?;
    if init.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            actual: init.len(),
            context: "initial parameters",
        });
    }
    let n = target.num_data();
    if n == 0 {
        return Err(invalid("target has no data"));
    }
    let scales = effective_scales(config.temperature, config.temper_mode)?;
    let batch = config.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch) as u64;
    let steps_per_cycle = steps_per_epoch * config.cycle_epochs as u64;
    let burn_in_steps = steps_per_epoch * config.burn_in_epochs as u64;

    let mut noise_rng = derive_rng(config.seed, "sampler-noise", 0);
    let mut shuffle_rng = derive_rng(config.seed, "sampler-shuffle", 0);
    let mut aux_rng = derive_rng(config.seed, "sampler-aux", 0);

    let mut state = ChainState::new(init);
    let mut order: Vec<usize> = (0..n).collect();
    let mut samples = Vec::with_capacity(config.samples_per_chain());
    let mut meta = Vec::with_capacity(config.samples_per_chain());
    let mut momenta = Vec::new();
    let mut cycle_log = Vec::new();
    let mut gradient_evals = 0u64;

    for epoch in 0..config.total_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch) {
            let t = state.step;
            let phase = (t as i64 - burn_in_steps as i64).rem_euclid(steps_per_cycle as i64) as u64;
            let lr = cyclical_step(phase, steps_per_cycle, config.base_step);
            let eps = match (config.step_convention, config.kind) {
                (StepConvention::Direct, _) => lr,
                (StepConvention::PerExample, SamplerKind::Sghmc) => (lr / n as f64).sqrt(),
                (StepConvention::PerExample, SamplerKind::Sgld) => lr / n as f64,
            };
            let est = target.estimate(&state.params, chunk, scales.lik_scale, &mut aux_rng)?;
            gradient_evals += 1;
            if !est.energy.is_finite() || est.energy.abs() > DIVERGENCE_ENERGY {
                return Err(Error::Diverged {
                    step: t,
                    reason: format!("minibatch energy estimate {:e} at epoch {epoch}", est.energy),
                });
            }
            match config.kind {
                SamplerKind::Sgld => sgld_step(&mut state, &est.grad, eps, scales.noise_temp, &mut noise_rng)?,
                SamplerKind::Sghmc => sghmc_step(
                    &mut state,
                    &est.grad,
                    eps,
                    config.momentum_weight,
                    scales.noise_temp,
                    &mut noise_rng,
                )?,
            }
            let burn_in = state.step <= burn_in_steps;
            observer.observe(&state, burn_in);

            if phase + 1 == steps_per_cycle {
                let record = CycleRecord {
                    cycle: cycle_log.len(),
                    epoch,
                    step_size: eps,
                    energy: est.energy,
                    kinetic_temp: state.kinetic_temperature(),
                    burn_in,
                };
                debug!("seed={} T={} {record}", config.seed, config.temperature);
                cycle_log.push(record);
                if !burn_in {
                    meta.push(SampleMeta {
                        cycle: samples.len(),
                        epoch,
                        step_size: eps,
                    });
                    samples.push(state.params.clone());
                    if config.kind == SamplerKind::Sghmc {
                        momenta.push(state.momentum.clone());
                    }
                }
            }
        }
    }

    Ok(ChainOutput {
        ensemble: PosteriorEnsemble { samples, meta },
        momenta,
        gradient_evals,
        cycle_log,
        final_state: state,
    })
}

/// Samples a fresh chain over the MLP posterior, initialised by a draw from
/// the prior seeded from `config.seed`.
pub fn run_chain(
    spec: &MlpSpec,
    dataset: &LabeledDataset,
    likelihood: LikelihoodKind,
    prior: &PriorConfig,
    config: &SamplerConfig,
) -> Result<ChainOutput> {
    let target = BnnPosterior::new(spec, dataset, likelihood, *prior)?;
    let init = init_params(spec, prior.std, derive_seed(config.seed, "chain-init", 0))?;
    run_sampler(&target, init, config, &mut ())
}
