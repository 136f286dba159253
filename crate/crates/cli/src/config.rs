//! Experiment configuration document.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use coldpost::curation::CurationConfig;
use coldpost::data::AugmentKind;
use coldpost::energy::{LikelihoodKind, PriorConfig};
use coldpost::eval::{GridBounds, DEFAULT_ECE_BINS};
use coldpost::sampler::SamplerConfig;
use coldpost::MlpSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Fresh toy data at each size, template schedule at every size.
    ToyCpe,
    /// Random subsets of a fixed training set under a fixed gradient budget.
    Subsample,
    /// One condition per labeller count `S`.
    CurationSweep,
    /// Curate once, then subsample the curated set under a fixed budget.
    CurateAndSubsample,
    /// One condition per likelihood variant on label-count data.
    CountsLosses,
    /// Plain sweep that also writes kinetic-temperature diagnostics.
    Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Toy {
        #[serde(default = "default_toy_test_size")]
        test_size: usize,
        /// Size of the fixed training pool for kinds that subsample or curate.
        #[serde(default = "default_toy_pool")]
        pool_size: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        num_classes: Option<usize>,
    },
}

fn default_toy_test_size() -> usize {
    10_000
}

fn default_toy_pool() -> usize {
    4096
}

impl DatasetSource {
    fn files(&self) -> Vec<&Path> {
        match self {
            DatasetSource::Toy { .. } => Vec::new(),
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => vec![train_images, train_labels, test_images, test_labels],
            DatasetSource::Csv { train, test, .. } => vec![train, test],
        }
    }
}

/// Curation settings plus the list of labeller counts to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationPlan {
    #[serde(flatten)]
    pub config: CurationConfig,
    /// Labeller counts for `curation_sweep`; defaults to `[num_labellers]`.
    #[serde(default)]
    pub labeller_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub curate_test: bool,
}

impl CurationPlan {
    pub fn labeller_grid(&self) -> Vec<usize> {
        self.labeller_grid
            .clone()
            .unwrap_or_else(|| vec![self.config.num_labellers])
    }
}

/// Reference point of the gradient-budget protocol. The sampler template's
/// epochs, burn-in and cycle length are read as the schedule at `n_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReference {
    pub n_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dataset: DatasetSource,
    pub model: MlpSpec,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default = "default_likelihood")]
    pub likelihood: LikelihoodKind,
    /// Variants compared by `counts_losses`.
    #[serde(default)]
    pub likelihoods: Option<Vec<LikelihoodKind>>,
    #[serde(default = "default_weight")]
    pub likelihood_weight: f64,
    #[serde(default)]
    pub augment: Option<AugmentKind>,
    /// Template; `temperature` and `seed` are set per chain.
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_temperature_grid")]
    pub temperatures: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub budget: Option<BudgetReference>,
    #[serde(default)]
    pub curation: Option<CurationPlan>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    #[serde(default)]
    pub grid_bounds: GridBounds,
    /// Excluded from the checksum.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_likelihood() -> LikelihoodKind {
    LikelihoodKind::Categorical
}

fn default_weight() -> f64 {
    1.0
}

fn default_bins() -> usize {
    DEFAULT_ECE_BINS
}

fn default_grid_resolution() -> usize {
    50
}

/// Six log-spaced temperatures `10^(-3 + 3k/5)`, `k = 0..=5`.
pub fn default_temperature_grid() -> Vec<f64> {
    (0..6)
        .map(|k| if k == 5 { 1.0 } else { 10f64.powf(-3.0 + 0.6 * k as f64) })
        .collect()
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // relative data paths are resolved against the config file
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSource::Toy { .. } => {}
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    fix(p);
                }
            }
            DatasetSource::Csv { train, test, .. } => {
                fix(train);
                fix(test);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        PriorConfig::new(self.prior.std)?;
        self.likelihood.validate()?;
        ensure!(!self.seeds.is_empty(), "seed list is empty");
        ensure!(!self.temperatures.is_empty(), "temperature grid is empty");
        ensure!(
            self.temperatures.iter().all(|&t| t > 0.0 && t.is_finite()),
            "temperatures must be positive and finite"
        );
        ensure!(
            self.temperatures.iter().any(|&t| (t - 1.0).abs() < 1e-12),
            "temperature grid must contain 1.0"
        );
        ensure!(
            self.likelihood_weight > 0.0 && self.likelihood_weight.is_finite(),
            "likelihood weight must be positive"
        );
        ensure!(self.ece_bins > 0, "ece_bins must be positive");
        let mut probe = self.sampler.clone();
        probe.temperature = 1.0;
        probe.validate()?;
        for f in self.dataset.files() {
            ensure!(f.exists(), "referenced file {} does not exist", f.display());
        }
        if let Some(sizes) = &self.sizes {
            ensure!(!sizes.is_empty(), "size list is empty");
            ensure!(sizes.iter().all(|&n| n > 0), "sizes must be positive");
        }
        if let Some(b) = self.budget {
            ensure!(b.n_ref > 0, "n_ref must be positive");
        }
        if let Some(plan) = &self.curation {
            plan.config.validate()?;
            ensure!(
                plan.labeller_grid().iter().all(|&s| s > 0),
                "labeller counts must be positive"
            );
            ensure!(
                plan.config.labeller_arch.input_dim == self.model.input_dim
                    && plan.config.labeller_arch.num_classes == self.model.num_classes,
                "labeller architecture must match the model's input and output sizes"
            );
        }
        if let Some(ls) = &self.likelihoods {
            ensure!(!ls.is_empty(), "likelihood list is empty");
            for l in ls {
                l.validate()?;
            }
        }
        let toy = matches!(self.dataset, DatasetSource::Toy { .. });
        if toy {
            ensure!(
                self.model.input_dim == 2 && self.model.num_classes == 2,
                "toy data need a model with 2 inputs and 2 classes"
            );
        }
        match self.kind {
            ExperimentKind::ToyCpe => {
                ensure!(toy, "toy_cpe needs the toy dataset source");
                let sizes = self.sizes.as_deref().unwrap_or_default();
                ensure!(!sizes.is_empty(), "toy_cpe needs a list of sizes");
                ensure!(sizes.iter().all(|n| n % 2 == 0), "toy sizes must be even");
            }
            ExperimentKind::Subsample => {
                ensure!(self.sizes.is_some(), "subsample needs a list of sizes");
            }
            ExperimentKind::CurationSweep => {
                ensure!(self.curation.is_some(), "curation_sweep needs a curation section");
            }
            ExperimentKind::CurateAndSubsample => {
                ensure!(self.curation.is_some(), "curate_and_subsample needs a curation section");
                ensure!(self.sizes.is_some(), "curate_and_subsample needs a list of sizes");
            }
            ExperimentKind::CountsLosses => {
                let needs_labeller = !matches!(self.dataset, DatasetSource::Csv { .. });
                if needs_labeller && self.curation.is_none() {
                    bail!("counts_losses on data without counts needs a curation section to simulate labellers");
                }
            }
            ExperimentKind::Diagnostics => {}
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring `out_dir`.
    pub fn checksum(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }

    /// Adds `offset` to every seed.
    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        for s in &mut self.seeds {
            *s = s.wrapping_add(offset);
        }
        self
    }
}
