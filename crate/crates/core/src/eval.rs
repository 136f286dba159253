//! Posterior-predictive evaluation: cross-entropy, accuracy, ECE, CPER and
//! decision-boundary grids.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{predict_proba, MlpSpec};
use crate::sampler::PosteriorEnsemble;

/// Probability floor applied before taking logs in [`test_ce`].
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_ECE_BINS: usize = 15;

/// Mean of the per-sample softmax outputs.
pub fn posterior_predictive(spec: &MlpSpec, ensemble: &PosteriorEnsemble, inputs: &Matrix) -> Result<Matrix> {
    if ensemble.is_empty() {
        return Err(invalid("posterior ensemble is empty"));
    }
    let mut acc = Matrix::zeros(inputs.rows(), spec.num_classes);
    for theta in &ensemble.samples {
        let p = predict_proba(spec, theta, inputs)?;
        acc.as_mut_slice()
            .iter_mut()
            .zip(p.as_slice())
            .for_each(|(a, v)| *a += v);
    }
    let k = ensemble.len() as f64;
    acc.as_mut_slice().iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}

fn check_probs(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: probs.rows(),
            context: "prediction rows vs labels",
        });
    }
    if labels.is_empty() {
        return Err(invalid("no predictions to evaluate"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= probs.cols()) {
        return Err(invalid(format!("label {bad} outside [0, {})", probs.cols())));
    }
    Ok(())
}

/// Cross-entropy in nats plus the number of rows whose true-class
/// probability had to be floored at [`PROB_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropy {
    pub value: f64,
    pub floored: usize,
}

pub fn test_ce(probs: &Matrix, labels: &[usize]) -> Result<CrossEntropy> {
    check_probs(probs, labels)?;
    let mut floored = 0;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = probs.get(i, y);
        if p < PROB_FLOOR {
            floored += 1;
        }
        total -= p.max(PROB_FLOOR).ln();
    }
    Ok(CrossEntropy {
        value: total / labels.len() as f64,
        floored,
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_probs(probs, labels)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(probs.row(i)) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Expected calibration error over `n_bins` equal-width bins of the
/// max-probability confidence. Bin `b` covers `(b/n, (b+1)/n]`; confidence 0
/// falls in the first bin.
pub fn ece(probs: &Matrix, labels: &[usize], n_bins: usize) -> Result<f64> {
    check_probs(probs, labels)?;
    if n_bins == 0 {
        return Err(invalid("ECE needs at least one bin"));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    for (i, &y) in labels.iter().enumerate() {
        let row = probs.row(i);
        let pred = argmax(row);
        let conf = row[pred];
        let b = ((conf * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        count[b] += 1;
        conf_sum[b] += conf;
        correct[b] += usize::from(pred == y);
    }
    let n = labels.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (correct[b] as f64 / c - conf_sum[b] / c).abs()
        })
        .sum())
}

/// Test metrics of one chain at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub dataset: String,
    pub n_train: usize,
    pub seed: u64,
    pub temperature: f64,
    pub ensemble_size: usize,
    pub test_ce: f64,
    pub accuracy: f64,
    pub ece: f64,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        let finite = self.test_ce.is_finite() && self.accuracy.is_finite() && self.ece.is_finite();
        if !finite || self.test_ce < 0.0 || !(0.0..=1.0).contains(&self.accuracy) || !(0.0..=1.0).contains(&self.ece) {
            return Err(invalid(format!("metrics out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Evaluates an ensemble on a labelled test set.
pub fn evaluate(
    spec: &MlpSpec,
    ensemble: &PosteriorEnsemble,
    inputs: &Matrix,
    labels: &[usize],
    n_bins: usize,
) -> Result<(f64, f64, f64)> {
    let probs = posterior_predictive(spec, ensemble, inputs)?;
    Ok((
        test_ce(&probs, labels)?.value,
        accuracy(&probs, labels)?,
        ece(&probs, labels, n_bins)?,
    ))
}

/// Seed-averaged statistics at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSummary {
    pub temperature: f64,
    pub seeds: usize,
    pub mean_ce: f64,
    pub se_ce: f64,
    pub mean_accuracy: f64,
    pub se_accuracy: f64,
    pub mean_ece: f64,
    pub se_ece: f64,
}

/// CPER summary of a temperature sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cper: f64,
    pub t_star: f64,
    /// Mean over seeds of the per-seed CPER.
    pub cper_per_seed_mean: f64,
    pub per_temperature: Vec<TemperatureSummary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<MetricsRecord>,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn is_unit(t: f64) -> bool {
    (t - 1.0).abs() < 1e-12
}

fn temperature_key(t: f64) -> u64 {
    t.to_bits()
}

fn cper_of_curve(curve: &[(f64, f64)]) -> Result<(f64, f64)> {
    let l1 = curve
        .iter()
        .find(|(t, _)| is_unit(*t))
        .map(|&(_, l)| l)
        .ok_or_else(|| invalid("temperature grid must contain T = 1"))?;
    // ties resolve towards T = 1, then towards the warmer temperature
    let mut best = (1.0, l1);
    for &(t, l) in curve {
        if l < best.1 || (l == best.1 && !is_unit(best.0) && t > best.0) {
            best = (t, l);
        }
    }
    if !(l1 > 0.0) {
        return Ok((1.0, 1.0));
    }
    Ok((best.1 / l1, best.0))
}

impl SweepResult {
    pub fn new(records: Vec<MetricsRecord>) -> Self {
        Self { records }
    }

    /// Per-temperature seed means and standard errors, ordered by temperature.
    pub fn per_temperature(&self) -> Vec<TemperatureSummary> {
        let mut groups: BTreeMap<u64, Vec<&MetricsRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry(temperature_key(r.temperature)).or_default().push(r);
        }
        groups
            .into_values()
            .map(|rs| {
                let col = |f: fn(&MetricsRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
                let (mean_ce, se_ce) = mean_se(&col(|r| r.test_ce));
                let (mean_accuracy, se_accuracy) = mean_se(&col(|r| r.accuracy));
                let (mean_ece, se_ece) = mean_se(&col(|r| r.ece));
                TemperatureSummary {
                    temperature: rs[0].temperature,
                    seeds: rs.len(),
                    mean_ce,
                    se_ce,
                    mean_accuracy,
                    se_accuracy,
                    mean_ece,
                    se_ece,
                }
            })
            .collect()
    }

    /// CPER on the seed-averaged curve, plus the mean of per-seed CPERs.
    pub fn summary(&self) -> Result<SweepSummary> {
        if self.records.is_empty() {
            return Err(invalid("sweep has no records"));
        }
        let per_temperature = self.per_temperature();
        let curve: Vec<(f64, f64)> = per_temperature.iter().map(|s| (s.temperature, s.mean_ce)).collect();
        let (cper, t_star) = cper_of_curve(&curve)?;

        let mut by_seed: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
        for r in &self.records {
            by_seed.entry(r.seed).or_default().push((r.temperature, r.test_ce));
        }
        let per_seed: Vec<f64> = by_seed
            .values()
            .filter_map(|c| cper_of_curve(c).ok().map(|(v, _)| v))
            .collect();
        let cper_per_seed_mean = if per_seed.is_empty() {
            cper
        } else {
            per_seed.iter().sum::<f64>() / per_seed.len() as f64
        };
        Ok(SweepSummary {
            cper,
            t_star,
            cper_per_seed_mean,
            per_temperature,
        })
    }
}

/// `l(T*) / l(T=1)` on the seed-averaged test cross-entropy curve.
pub fn cper(sweep: &SweepResult) -> Result<f64> {
    sweep.summary().map(|s| s.cper)
}

pub fn write_metrics_csv<W: Write>(mut w: W, records: &[MetricsRecord]) -> Result<()> {
    writeln!(w, "dataset,n,seed,T,K,ce,acc,ece")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{:?},{},{:?},{:?},{:?}",
            r.dataset, r.n_train, r.seed, r.temperature, r.ensemble_size, r.test_ce, r.accuracy, r.ece
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Default for GridBounds {
    fn default() -> Self {
        Self {
            xmin: -3.0,
            xmax: 3.0,
            ymin: -3.0,
            ymax: 3.0,
        }
    }
}

/// Posterior-mean class-1 probability on a regular grid. Row-major with rows
/// indexed by `y` and columns by `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub prob1: Vec<f64>,
}

impl DecisionGrid {
    pub fn resolution(&self) -> usize {
        self.xs.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.ys.iter().enumerate().flat_map(move |(r, &y)| {
            self.xs
                .iter()
                .enumerate()
                .map(move |(c, &x)| (x, y, self.prob1[r * self.xs.len() + c]))
        })
    }

    /// Grid with `prob1` supplied by a closure of the cell centre.
    pub fn from_fn(bounds: GridBounds, resolution: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (xs, ys) = grid_axes(bounds, resolution)?;
        let prob1 = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Ok(Self { xs, ys, prob1 })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,prob1")?;
        for (x, y, p) in self.cells() {
            writeln!(w, "{x:?},{y:?},{p:?}")?;
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn grid_axes(bounds: GridBounds, resolution: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if resolution == 0 {
        return Err(invalid("grid resolution must be >= 1"));
    }
    if !(bounds.xmax > bounds.xmin && bounds.ymax > bounds.ymin) {
        return Err(invalid("grid bounds must be increasing"));
    }
    Ok((
        linspace(bounds.xmin, bounds.xmax, resolution),
        linspace(bounds.ymin, bounds.ymax, resolution),
    ))
}

pub fn decision_grid(
    spec: &MlpSpec,
    ensemble: &PosteriorEnsemble,
    bounds: GridBounds,
    resolution: usize,
) -> Result<DecisionGrid> {
    if spec.input_dim != 2 {
        return Err(invalid(format!(
            "decision grids need 2D inputs, model has {}",
            spec.input_dim
        )));
    }
    let (xs, ys) = grid_axes(bounds, resolution)?;
    let mut pts = Vec::with_capacity(2 * resolution * resolution);
    for &y in &ys {
        for &x in &xs {
            pts.push(x);
            pts.push(y);
        }
    }
    let inputs = Matrix::from_vec(resolution * resolution, 2, pts)?;
    let probs = posterior_predictive(spec, ensemble, &inputs)?;
    let prob1 = (0..probs.rows()).map(|i| probs.get(i, 1)).collect();
    Ok(DecisionGrid { xs, ys, prob1 })
}

/// Fraction of cells where `prob1 >= 0.5` agrees with the Bayes rule
/// "class 1 iff x + y >= 0".
pub fn boundary_agreement(grid: &DecisionGrid) -> f64 {
    let total = grid.prob1.len();
    if total == 0 {
        return 0.0;
    }
    let agree = grid.cells().filter(|&(x, y, p)| (p >= 0.5) == (x + y >= 0.0)).count();
    agree as f64 / total as f64
}
