//! Simulated dataset curation.
//!
//! A probabilistic classifier trained on a held-out split plays the role of
//! the labelling population. Each point receives `S` i.i.d. labels drawn from
//! the (optionally flattened) classifier distribution and is kept only when
//! all `S` agree.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{subsample, write_csv, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::eval::argmax;
use crate::matrix::Matrix;
use crate::nn::{grad_loglik, init_params, predict_proba, MlpSpec, ParamVector, Targets};
use crate::sampler::{AdamConfig, AdamState};
use crate::seed::{derive_rng, derive_seed};

/// A source of categorical label distributions.
pub trait Labeller: Sync {
    fn num_classes(&self) -> usize;

    /// Row-stochastic `n x C` matrix of label probabilities.
    fn probabilities(&self, inputs: &Matrix) -> Result<Matrix>;

    /// Hex digest identifying the labeller, recorded in provenance files.
    fn checksum(&self) -> String;
}

/// Softmax output of a trained MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLabeller {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

impl Labeller for MlpLabeller {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn probabilities(&self, inputs: &Matrix) -> Result<Matrix> {
        predict_proba(&self.spec, &self.params, inputs)
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).unwrap_or_default());
        for v in self.params.iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Same label distribution for every input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantLabeller {
    pub probs: Vec<f64>,
}

impl ConstantLabeller {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.len() < 2 || probs.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "constant labeller needs a probability vector over >= 2 classes",
            ));
        }
        Ok(Self { probs })
    }
}

impl Labeller for ConstantLabeller {
    fn num_classes(&self) -> usize {
        self.probs.len()
    }

    fn probabilities(&self, inputs: &Matrix) -> Result<Matrix> {
        let c = self.probs.len();
        let mut out = Matrix::zeros(inputs.rows(), c);
        for i in 0..inputs.rows() {
            out.row_mut(i).copy_from_slice(&self.probs);
        }
        Ok(out)
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.probs {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// `q_c = p_c^alpha / sum_j p_j^alpha`.
pub fn flatten_probs(p: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("flattening exponent must lie in (0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(p.to_vec());
    }
    let powered: Vec<f64> = p.iter().map(|&v| v.max(0.0).powf(alpha)).collect();
    let z: f64 = powered.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(invalid("cannot flatten a vector with zero mass"));
    }
    Ok(powered.into_iter().map(|v| v / z).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelMode {
    /// Retained points take the unanimous label.
    ConsensusLabel,
    /// Retained points keep their original label.
    OriginalLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSampling {
    /// Labeller slot `s` of point `i` always consumes the same uniform draw,
    /// whatever `S` is. Retention is then monotone in `S`.
    #[default]
    SharedUniform,
    /// Fresh draws for every value of `S`.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabellerTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Standard deviation of the Gaussian initialisation.
    pub init_std: f64,
}

impl Default for LabellerTraining {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            adam: AdamConfig::default(),
            init_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub num_labellers: usize,
    pub flatten_alpha: f64,
    pub pretrain_fraction: f64,
    pub labeller_arch: MlpSpec,
    #[serde(default)]
    pub labeller_train: LabellerTraining,
    #[serde(default)]
    pub sampling: LabelSampling,
    pub seed: u64,
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_labellers == 0 {
            return Err(invalid("need at least one labeller"));
        }
        if !(self.flatten_alpha > 0.0 && self.flatten_alpha <= 1.0) {
            return Err(invalid(format!(
                "flatten_alpha must lie in (0, 1], got {}",
                self.flatten_alpha
            )));
        }
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction < 1.0) {
            return Err(invalid(format!(
                "pretrain_fraction must lie in (0, 1), got {}",
                self.pretrain_fraction
            )));
        }
        self.labeller_arch.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationResult {
    pub curated: LabeledDataset,
    pub retained_mask: Vec<bool>,
    pub retention_rate: f64,
    /// Fraction of retained points whose consensus label equals the original one.
    pub consensus_vs_original_agreement: f64,
}

/// Disjoint, covering random split into `(D_pre, D_tr)` with
/// `round(fraction * n)` points in `D_pre`.
pub fn split_pretrain(dataset: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid(format!("pretrain fraction must lie in (0, 1), got {fraction}")));
    }
    let n = dataset.len();
    let n_pre = (fraction * n as f64).round() as usize;
    if n_pre == 0 || n_pre == n {
        return Err(invalid(format!(
            "split of {n} points at fraction {fraction} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derive_rng(seed, "split-pretrain", 0));
    let (pre, tr) = idx.split_at(n_pre);
    Ok((
        dataset.select(pre, format!("{}[pre]", dataset.name)),
        dataset.select(tr, format!("{}[tr]", dataset.name)),
    ))
}

/// Trains an MLP labeller by Adam on mean cross-entropy.
pub fn train_labeller(
    d_pre: &LabeledDataset,
    arch: &MlpSpec,
    training: &LabellerTraining,
    seed: u64,
) -> Result<MlpLabeller> {
    arch.validate()?;
    if d_pre.dim() != arch.input_dim || d_pre.num_classes != arch.num_classes {
        return Err(invalid("labeller architecture does not fit the pre-training data"));
    }
    if training.batch_size == 0 {
        return Err(invalid("labeller batch size must be >= 1"));
    }
    let mut params = init_params(arch, training.init_std, derive_seed(seed, "labeller-init", 0))?;
    let mut adam = AdamState::new(params.len());
    let mut rng = derive_rng(seed, "labeller-shuffle", 0);
    let mut order: Vec<usize> = (0..d_pre.len()).collect();
    for epoch in 0..training.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(training.batch_size) {
            let x = d_pre.features.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| d_pre.labels[i]).collect();
            let (_, grad) = grad_loglik(arch, &params, &x, Targets::Labels(&y))?;
            let scale = -1.0 / batch.len() as f64;
            let loss_grad: Vec<f64> = grad.iter().map(|g| g * scale).collect();
            adam.step(&mut params, &loss_grad, &training.adam)?;
            if !params.is_finite() {
                return Err(Error::Diverged {
                    step: adam.t,
                    reason: format!("labeller training diverged in epoch {epoch}"),
                });
            }
        }
    }
    Ok(MlpLabeller {
        spec: arch.clone(),
        params,
    })
}

fn inverse_cdf(q: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (c, &p) in q.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    // rounding left u above the total mass: take the last class with mass
    q.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws `num_labellers` labels per point and keeps unanimous points.
pub fn curate(
    dataset: &LabeledDataset,
    labeller: &dyn Labeller,
    num_labellers: usize,
    flatten_alpha: f64,
    seed: u64,
    relabel_mode: RelabelMode,
    sampling: LabelSampling,
) -> Result<CurationResult> {
    if num_labellers == 0 {
        return Err(invalid("need at least one labeller"));
    }
    if labeller.num_classes() != dataset.num_classes {
        return Err(invalid("labeller and dataset disagree on the number of classes"));
    }
    let probs = labeller.probabilities(&dataset.features)?;
    let stream = match sampling {
        LabelSampling::SharedUniform => seed,
        LabelSampling::Independent => derive_seed(seed, "curate-labellers", num_labellers as u64),
    };
    let mut mask = Vec::with_capacity(dataset.len());
    let mut kept = Vec::new();
    let mut labels = Vec::new();
    let mut agree = 0usize;
    for i in 0..dataset.len() {
        let q = flatten_probs(probs.row(i), flatten_alpha)?;
        let mut rng = derive_rng(stream, "curate-point", i as u64);
        let first = inverse_cdf(&q, rng.random::<f64>());
        let unanimous = (1..num_labellers).all(|_| inverse_cdf(&q, rng.random::<f64>()) == first);
        mask.push(unanimous);
        if unanimous {
            kept.push(i);
            agree += usize::from(first == dataset.labels[i]);
            labels.push(match relabel_mode {
                RelabelMode::ConsensusLabel => first,
                RelabelMode::OriginalLabel => dataset.labels[i],
            });
        }
    }
    let retention_rate = kept.len() as f64 / dataset.len() as f64;
    let consensus_vs_original_agreement = if kept.is_empty() {
        0.0
    } else {
        agree as f64 / kept.len() as f64
    };
    let mut curated = dataset.select(&kept, format!("{}[cur S={num_labellers}]", dataset.name));
    curated.labels = labels;
    Ok(CurationResult {
        curated,
        retained_mask: mask,
        retention_rate,
        consensus_vs_original_agreement,
    })
}

/// Curates the training set; the test set is either curated with the same
/// `S` or only relabelled by one draw from the labeller.
#[allow(clippy::too_many_arguments)]
pub fn curate_split(
    train: &LabeledDataset,
    test: &LabeledDataset,
    labeller: &dyn Labeller,
    num_labellers: usize,
    flatten_alpha: f64,
    seed: u64,
    sampling: LabelSampling,
    curate_test: bool,
) -> Result<(CurationResult, CurationResult)> {
    let train_cur = curate(
        train,
        labeller,
        num_labellers,
        flatten_alpha,
        derive_seed(seed, "curate-train", 0),
        RelabelMode::ConsensusLabel,
        sampling,
    )?;
    let test_s = if curate_test { num_labellers } else { 1 };
    let test_out = curate(
        test,
        labeller,
        test_s,
        flatten_alpha,
        derive_seed(seed, "curate-test", 0),
        RelabelMode::ConsensusLabel,
        sampling,
    )?;
    Ok((train_cur, test_out))
}

/// Curates, then subsamples the curated set to `target_size` points.
#[allow(clippy::too_many_arguments)]
pub fn curate_to_size(
    dataset: &LabeledDataset,
    labeller: &dyn Labeller,
    num_labellers: usize,
    flatten_alpha: f64,
    seed: u64,
    relabel_mode: RelabelMode,
    sampling: LabelSampling,
    target_size: usize,
) -> Result<CurationResult> {
    let mut res = curate(
        dataset,
        labeller,
        num_labellers,
        flatten_alpha,
        seed,
        relabel_mode,
        sampling,
    )?;
    if res.curated.len() < target_size {
        return Err(invalid(format!(
            "curation kept {} points, fewer than the requested {target_size}",
            res.curated.len()
        )));
    }
    res.curated = subsample(&res.curated, target_size, derive_seed(seed, "curate-subsample", 0))?;
    Ok(res)
}

/// Draws `num_labellers` labels per point and stores their histogram as label
/// counts. Every point is kept; its label becomes the plurality vote (lowest
/// class index on ties).
pub fn simulate_label_counts(
    dataset: &LabeledDataset,
    labeller: &dyn Labeller,
    num_labellers: usize,
    flatten_alpha: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_labellers == 0 {
        return Err(invalid("need at least one labeller"));
    }
    if labeller.num_classes() != dataset.num_classes {
        return Err(invalid("labeller and dataset disagree on the number of classes"));
    }
    let probs = labeller.probabilities(&dataset.features)?;
    let c = dataset.num_classes;
    let mut counts = Matrix::zeros(dataset.len(), c);
    let mut labels = Vec::with_capacity(dataset.len());
    for i in 0..dataset.len() {
        let q = flatten_probs(probs.row(i), flatten_alpha)?;
        let mut rng = derive_rng(seed, "label-counts", i as u64);
        let row = counts.row_mut(i);
        for _ in 0..num_labellers {
            row[inverse_cdf(&q, rng.random::<f64>())] += 1.0;
        }
        labels.push(argmax(row));
    }
    let mut out = dataset.clone();
    out.name = format!("{}[counts S={num_labellers}]", dataset.name);
    out.labels = labels;
    out.with_counts(counts)
}

/// Sidecar describing how a curated dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationProvenance {
    pub num_labellers: usize,
    pub flatten_alpha: f64,
    pub labeller_checksum: String,
    pub retention_rate: f64,
    pub consensus_vs_original_agreement: f64,
    pub seed: u64,
}

/// Writes `path` (CSV) and `path.provenance.json`; returns the sidecar path.
pub fn write_curated(path: &Path, result: &CurationResult, provenance: &CurationProvenance) -> Result<PathBuf> {
    let file = std::fs::File::create(path)?;
    write_csv(std::io::BufWriter::new(file), &result.curated)?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".provenance.json");
    let sidecar = PathBuf::from(sidecar);
    let mut f = std::fs::File::create(&sidecar)?;
    f.write_all(serde_json::to_string_pretty(provenance)?.as_bytes())?;
    Ok(sidecar)
}
