//! Fully connected ReLU networks with a softmax output.
//!
//! Parameters live in one flat vector. Each dense layer contributes its
//! `out x in` weight matrix (row-major) followed by its `out` biases, layers in
//! input-to-output order.

use std::ops::{Deref, DerefMut};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::seed::rng_from_seed;

/// Architecture of a ReLU MLP with a softmax output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_widths,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(invalid("input_dim must be >= 1"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(invalid("hidden widths must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(invalid("num_classes must be >= 2"));
        }
        Ok(())
    }

    /// `(in, out)` for every dense layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.num_classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total parameter count `d = sum over layers of (in + 1) * out`.
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o)| (i + 1) * o).sum()
    }
}

macro_rules! flat_vector {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(len: usize) -> Self {
                Self(vec![0.0; len])
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }
    };
}

flat_vector!(ParamVector);
flat_vector!(GradVector);

/// One dense layer in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Supervision for a batch: integer labels or per-class weights (label counts,
/// smoothed targets). The log-likelihood of a row is `w^T log softmax(z)`.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Labels(&'a [usize]),
    Weights(&'a Matrix),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Weights(w) => w.rows(),
        }
    }

    fn check(&self, n: usize, classes: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: self.len(),
                context: "targets vs inputs",
            });
        }
        match self {
            Targets::Labels(labels) => {
                if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
                    return Err(invalid(format!("label {bad} outside [0, {classes})")));
                }
            }
            Targets::Weights(w) => {
                if w.cols() != classes {
                    return Err(Error::DimensionMismatch {
                        expected: classes,
                        actual: w.cols(),
                        context: "target weight columns",
                    });
                }
                if w.as_slice().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(invalid("target weights must be finite and nonnegative"));
                }
            }
        }
        Ok(())
    }
}

fn check_params(spec: &MlpSpec, params: &[f64]) -> Result<()> {
    let d = spec.param_count();
    if params.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: params.len(),
            context: "parameter vector",
        });
    }
    Ok(())
}

fn check_inputs(spec: &MlpSpec, inputs: &Matrix) -> Result<()> {
    if inputs.cols() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            actual: inputs.cols(),
            context: "input features",
        });
    }
    Ok(())
}

pub fn flatten(spec: &MlpSpec, layers: &[DenseLayer]) -> Result<ParamVector> {
    let shapes = spec.layer_shapes();
    if layers.len() != shapes.len() {
        return Err(Error::DimensionMismatch {
            expected: shapes.len(),
            actual: layers.len(),
            context: "layer count",
        });
    }
    let mut out = Vec::with_capacity(spec.param_count());
    for (layer, &(i, o)) in layers.iter().zip(&shapes) {
        if layer.in_dim != i || layer.out_dim != o || layer.weights.len() != i * o || layer.biases.len() != o {
            return Err(invalid(format!(
                "layer shape mismatch: expected {i}->{o}, got {}->{}",
                layer.in_dim, layer.out_dim
            )));
        }
        out.extend_from_slice(&layer.weights);
        out.extend_from_slice(&layer.biases);
    }
    Ok(ParamVector(out))
}

pub fn unflatten(spec: &MlpSpec, params: &[f64]) -> Result<Vec<DenseLayer>> {
    check_params(spec, params)?;
    let mut offset = 0;
    let layers = spec
        .layer_shapes()
        .into_iter()
        .map(|(i, o)| {
            let weights = params[offset..offset + i * o].to_vec();
            offset += i * o;
            let biases = params[offset..offset + o].to_vec();
            offset += o;
            DenseLayer {
                in_dim: i,
                out_dim: o,
                weights,
                biases,
            }
        })
        .collect();
    Ok(layers)
}

/// Draws every parameter i.i.d. from `N(0, prior_std^2)`.
pub fn init_params(spec: &MlpSpec, prior_std: f64, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    if !(prior_std > 0.0) || !prior_std.is_finite() {
        return Err(invalid(format!("prior_std must be > 0, got {prior_std}")));
    }
    let normal = Normal::new(0.0, prior_std).map_err(|e| invalid(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    Ok(ParamVector(
        (0..spec.param_count()).map(|_| normal.sample(&mut rng)).collect(),
    ))
}

/// Layer views into a flat parameter slice.
struct LayerView<'a> {
    in_dim: usize,
    out_dim: usize,
    weights: &'a [f64],
    biases: &'a [f64],
    offset: usize,
}

fn layer_views<'a>(spec: &MlpSpec, params: &'a [f64]) -> Vec<LayerView<'a>> {
    let mut offset = 0;
    spec.layer_shapes()
        .into_iter()
        .map(|(i, o)| {
            let start = offset;
            let weights = &params[start..start + i * o];
            let biases = &params[start + i * o..start + i * o + o];
            offset += (i + 1) * o;
            LayerView {
                in_dim: i,
                out_dim: o,
                weights,
                biases,
                offset: start,
            }
        })
        .collect()
}

fn affine(layer: &LayerView<'_>, input: &Matrix, relu: bool) -> Matrix {
    let n = input.rows();
    let mut out = Matrix::zeros(n, layer.out_dim);
    for s in 0..n {
        let a = input.row(s);
        let z = out.row_mut(s);
        for (o, zo) in z.iter_mut().enumerate() {
            let w = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = layer.biases[o];
            for (wi, ai) in w.iter().zip(a) {
                acc += wi * ai;
            }
            *zo = if relu && acc <= 0.0 { 0.0 } else { acc };
        }
    }
    out
}

/// Runs the network and keeps every layer's (post-activation) output.
fn forward_trace(spec: &MlpSpec, params: &[f64], inputs: &Matrix) -> Vec<Matrix> {
    let views = layer_views(spec, params);
    let last = views.len() - 1;
    let mut acts: Vec<Matrix> = Vec::with_capacity(views.len());
    for (l, view) in views.iter().enumerate() {
        let next = affine(view, acts.last().unwrap_or(inputs), l < last);
        acts.push(next);
    }
    acts
}

/// Logits `n x C` for the given inputs.
pub fn forward(spec: &MlpSpec, params: &[f64], inputs: &Matrix) -> Result<Matrix> {
    check_params(spec, params)?;
    check_inputs(spec, inputs)?;
    let mut acts = forward_trace(spec, params, inputs);
    Ok(acts.pop().expect("at least one layer"))
}

/// Writes `log softmax(z)` into `out`, returning the log-normaliser.
pub fn log_softmax_into(z: &[f64], out: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    for (o, &v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
    lse
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let row = out.row_mut(i);
        log_softmax_into(logits.row(i), row);
        row.iter_mut().for_each(|v| *v = v.exp());
    }
    out
}

/// Class probabilities `n x C`.
pub fn predict_proba(spec: &MlpSpec, params: &[f64], inputs: &Matrix) -> Result<Matrix> {
    forward(spec, params, inputs).map(|z| softmax_rows(&z))
}

fn row_loglik(log_p: &[f64], targets: &Targets<'_>, s: usize) -> f64 {
    match targets {
        Targets::Labels(l) => log_p[l[s]],
        Targets::Weights(w) => w
            .row(s)
            .iter()
            .zip(log_p)
            .filter(|(&wc, _)| wc != 0.0)
            .map(|(wc, lp)| wc * lp)
            .sum(),
    }
}

/// `sum_i w_i^T log softmax(f(x_i; theta))` without the gradient.
pub fn loglik(spec: &MlpSpec, params: &[f64], inputs: &Matrix, targets: Targets<'_>) -> Result<f64> {
    check_params(spec, params)?;
    check_inputs(spec, inputs)?;
    targets.check(inputs.rows(), spec.num_classes)?;
    let logits = forward_trace(spec, params, inputs).pop().expect("layer");
    let mut log_p = vec![0.0; spec.num_classes];
    let mut total = 0.0;
    for s in 0..logits.rows() {
        log_softmax_into(logits.row(s), &mut log_p);
        total += row_loglik(&log_p, &targets, s);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("log-likelihood"));
    }
    Ok(total)
}

/// Log-likelihood of the batch and its exact gradient with respect to the
/// flat parameter vector, by reverse accumulation.
pub fn grad_loglik(spec: &MlpSpec, params: &[f64], inputs: &Matrix, targets: Targets<'_>) -> Result<(f64, GradVector)> {
    check_params(spec, params)?;
    check_inputs(spec, inputs)?;
    targets.check(inputs.rows(), spec.num_classes)?;

    let n = inputs.rows();
    let c = spec.num_classes;
    let views = layer_views(spec, params);
    let acts = forward_trace(spec, params, inputs);
    let logits = acts.last().expect("layer");

    // d loglik / d logits = w - (sum w) softmax
    let mut total = 0.0;
    let mut delta = Matrix::zeros(n, c);
    let mut log_p = vec![0.0; c];
    for s in 0..n {
        log_softmax_into(logits.row(s), &mut log_p);
        total += row_loglik(&log_p, &targets, s);
        let d = delta.row_mut(s);
        match targets {
            Targets::Labels(l) => {
                for (dk, lp) in d.iter_mut().zip(&log_p) {
                    *dk = -lp.exp();
                }
                d[l[s]] += 1.0;
            }
            Targets::Weights(w) => {
                let wr = w.row(s);
                let mass: f64 = wr.iter().sum();
                for ((dk, lp), wk) in d.iter_mut().zip(&log_p).zip(wr) {
                    *dk = wk - mass * lp.exp();
                }
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("log-likelihood"));
    }

    let mut grad = vec![0.0; params.len()];
    for l in (0..views.len()).rev() {
        let view = &views[l];
        let input = if l == 0 { inputs } else { &acts[l - 1] };
        let (gw, gb) =
            grad[view.offset..view.offset + (view.in_dim + 1) * view.out_dim].split_at_mut(view.in_dim * view.out_dim);
        for s in 0..n {
            let a = input.row(s);
            for (o, &dz) in delta.row(s).iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                gb[o] += dz;
                let row = &mut gw[o * view.in_dim..(o + 1) * view.in_dim];
                for (g, ai) in row.iter_mut().zip(a) {
                    *g += dz * ai;
                }
            }
        }
        if l == 0 {
            break;
        }
        // propagate to the previous layer's pre-activations; ReLU'(0) = 0
        let mut prev = Matrix::zeros(n, view.in_dim);
        for s in 0..n {
            let a = input.row(s);
            let dz = delta.row(s);
            let dp = prev.row_mut(s);
            for (o, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let w = &view.weights[o * view.in_dim..(o + 1) * view.in_dim];
                for (p, wi) in dp.iter_mut().zip(w) {
                    *p += d * wi;
                }
            }
            for (p, &ai) in dp.iter_mut().zip(a) {
                if ai <= 0.0 {
                    *p = 0.0;
                }
            }
        }
        delta = prev;
    }

    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("log-likelihood gradient"));
    }
    Ok((total, GradVector(grad)))
}

/// Central differences of `f` around `x`; coordinate `i` uses the step
/// `h * (1 + |x_i|)`.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let step = h * (1.0 + x[i].abs());
        probe[i] = x[i] + step;
        let up = f(&probe)?;
        probe[i] = x[i] - step;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Finite-difference gradient of [`loglik`], used as a test oracle.
pub fn finite_diff_grad(
    spec: &MlpSpec,
    params: &[f64],
    inputs: &Matrix,
    targets: Targets<'_>,
    h: f64,
) -> Result<GradVector> {
    check_params(spec, params)?;
    central_difference(|p| loglik(spec, p, inputs, targets), params, h).map(GradVector)
}
