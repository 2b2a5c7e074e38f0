//! A small multilayer perceptron with hand-written reverse-mode gradients.
//!
//! # Parameter layout
//!
//! All weights and biases live in one flat [`ParamVector`], layer by layer.
//! For a layer mapping `fan_in -> fan_out` the block is
//!
//! ```text
//! W[0][0] .. W[0][fan_out-1]  W[1][0] ..  W[fan_in-1][fan_out-1]   b[0] .. b[fan_out-1]
//! ```
//!
//! i.e. the weight matrix is stored row-major with shape `fan_in x fan_out`
//! (so a batch computes `Z = A W + b`), followed by the bias. Hidden layers
//! apply the activation; the last layer feeds a softmax.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{self, Mat64};

/// Log-probabilities are clamped from below at this value.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given the pre-activation `z` and the activation `a`.
    /// The ReLU subgradient at exactly zero is zero.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Layer sizes `[d_in, h_1, .., h_L, K]` and the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArch {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

impl MlpArch {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidHyperparameter(format!(
                "an MLP needs at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidHyperparameter(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        Ok(MlpArch {
            layer_sizes,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn spans(&self) -> Vec<LayerSpan> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let span = LayerSpan {
                    fan_in: w[0],
                    fan_out: w[1],
                    w: offset,
                    b: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                span
            })
            .collect()
    }
}

/// Flat view of every weight and bias of an [`MlpArch`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        tensor::norm(&self.0)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// He-normal weights (`N(0, 2 / fan_in)`), zero biases.
pub fn init_params(arch: &MlpArch, rng: &mut Rng) -> ParamVector {
    let mut p = ParamVector::zeros(arch.num_params());
    for span in arch.spans() {
        let std = (2.0 / span.fan_in as f64).sqrt();
        for v in &mut p[span.w..span.b] {
            *v = std * rng.normal();
        }
    }
    p
}

fn check_params(params: &[f64], arch: &MlpArch) -> Result<()> {
    if params.len() != arch.num_params() {
        return Err(Error::shape(format!(
            "parameter vector has {} entries, architecture needs {}",
            params.len(),
            arch.num_params()
        )));
    }
    Ok(())
}

/// Pre-activations and activations of every layer for one batch.
/// `acts[0]` is the input, `acts[L]` the softmax output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pre: Vec<Mat64>,
    acts: Vec<Mat64>,
}

impl ForwardCache {
    pub fn probs(&self) -> &Mat64 {
        self.acts.last().unwrap()
    }

    pub fn into_probs(mut self) -> Mat64 {
        self.acts.pop().unwrap()
    }

    pub fn batch_size(&self) -> usize {
        self.acts[0].rows()
    }

    /// Pre-activations of every hidden layer (the ReLU kink locations).
    pub fn hidden_preactivations(&self) -> impl Iterator<Item = &Mat64> {
        let n = self.pre.len();
        self.pre.iter().take(n.saturating_sub(1))
    }
}

pub fn forward_cache(params: &[f64], arch: &MlpArch, inputs: &Mat64) -> Result<ForwardCache> {
    check_params(params, arch)?;
    if inputs.cols() != arch.input_dim() {
        return Err(Error::shape(format!(
            "inputs have {} features, network expects {}",
            inputs.cols(),
            arch.input_dim()
        )));
    }
    let spans = arch.spans();
    let n = inputs.rows();
    let mut pre = Vec::with_capacity(spans.len());
    let mut acts = Vec::with_capacity(spans.len() + 1);
    acts.push(inputs.clone());
    for (l, span) in spans.iter().enumerate() {
        let a = acts.last().unwrap();
        let w = &params[span.w..span.b];
        let b = &params[span.b..span.b + span.fan_out];
        let mut z = Mat64::zeros(n, span.fan_out);
        for r in 0..n {
            let zr = z.row_mut(r);
            zr.copy_from_slice(b);
            for (i, &ai) in a.row(r).iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let wrow = &w[i * span.fan_out..(i + 1) * span.fan_out];
                for (zo, &wio) in zr.iter_mut().zip(wrow) {
                    *zo += ai * wio;
                }
            }
        }
        let mut out = z.clone();
        if l + 1 == spans.len() {
            for r in 0..n {
                tensor::softmax_in_place(out.row_mut(r));
            }
        } else {
            let act = arch.activation();
            for r in 0..n {
                for v in out.row_mut(r) {
                    *v = act.apply(*v);
                }
            }
        }
        pre.push(z);
        acts.push(out);
    }
    Ok(ForwardCache { pre, acts })
}

/// Softmax class probabilities, one row per input row.
pub fn forward(params: &[f64], arch: &MlpArch, inputs: &Mat64) -> Result<Mat64> {
    Ok(forward_cache(params, arch, inputs)?.into_probs())
}

/// `-sum_k y_k ln(max(p_k, 1e-12))`.
pub fn cross_entropy(probs: &[f64], soft_label: &[f64]) -> Result<f64> {
    if probs.len() != soft_label.len() {
        return Err(Error::shape(format!(
            "probabilities have {} classes, label has {}",
            probs.len(),
            soft_label.len()
        )));
    }
    Ok(cross_entropy_unchecked(probs, soft_label))
}

fn cross_entropy_unchecked(probs: &[f64], y: &[f64]) -> f64 {
    let mut loss = 0.0;
    for (&p, &yk) in probs.iter().zip(y) {
        if yk != 0.0 {
            loss -= yk * p.max(PROB_FLOOR).ln();
        }
    }
    loss
}

/// Gradient of the clamped cross-entropy with respect to the logits.
/// Classes whose probability sits below the clamp contribute nothing.
fn cross_entropy_dlogits(probs: &[f64], y: &[f64], out: &mut [f64]) {
    let mut active_mass = 0.0;
    for (&p, &yk) in probs.iter().zip(y) {
        if p >= PROB_FLOOR {
            active_mass += yk;
        }
    }
    for ((o, &p), &yk) in out.iter_mut().zip(probs).zip(y) {
        *o = active_mass * p - if p >= PROB_FLOOR { yk } else { 0.0 };
    }
}

/// Walks the network backwards for row `row` starting from `dlogits`,
/// calling `visit(span_index, activation_row, delta)` for every layer from the
/// output down.
fn backprop_row(
    params: &[f64],
    arch: &MlpArch,
    spans: &[LayerSpan],
    cache: &ForwardCache,
    row: usize,
    dlogits: &[f64],
    mut visit: impl FnMut(usize, &[f64], &[f64]),
) {
    let mut delta = dlogits.to_vec();
    let mut prev = Vec::new();
    for l in (0..spans.len()).rev() {
        let span = spans[l];
        let a = cache.acts[l].row(row);
        visit(l, a, &delta);
        if l == 0 {
            break;
        }
        let w = &params[span.w..span.b];
        prev.clear();
        prev.resize(span.fan_in, 0.0);
        for (i, pi) in prev.iter_mut().enumerate() {
            let wrow = &w[i * span.fan_out..(i + 1) * span.fan_out];
            *pi = tensor::dot_unchecked(wrow, &delta);
        }
        let z = cache.pre[l - 1].row(row);
        let act = arch.activation();
        for ((pi, &zi), &ai) in prev.iter_mut().zip(z).zip(a) {
            *pi *= act.derivative(zi, ai);
        }
        std::mem::swap(&mut delta, &mut prev);
    }
}

fn accumulate(grad: &mut [f64], span: LayerSpan, a: &[f64], delta: &[f64], coef: f64) {
    for (i, &ai) in a.iter().enumerate() {
        let c = coef * ai;
        if c == 0.0 {
            continue;
        }
        let g = &mut grad[span.w + i * span.fan_out..span.w + (i + 1) * span.fan_out];
        for (gi, &d) in g.iter_mut().zip(delta) {
            *gi += c * d;
        }
    }
    let gb = &mut grad[span.b..span.b + span.fan_out];
    for (gi, &d) in gb.iter_mut().zip(delta) {
        *gi += coef * d;
    }
}

/// Gradient of `sum_j coef_j * f_j` where `dlogits.row(j)` holds `df_j / dz_j`.
pub fn backward(
    params: &[f64],
    arch: &MlpArch,
    cache: &ForwardCache,
    dlogits: &Mat64,
) -> Result<ParamVector> {
    check_params(params, arch)?;
    if dlogits.rows() != cache.batch_size() || dlogits.cols() != arch.num_classes() {
        return Err(Error::shape(
            "logit gradient does not match the cached batch",
        ));
    }
    let spans = arch.spans();
    let mut grad = ParamVector::zeros(params.len());
    for r in 0..cache.batch_size() {
        backprop_row(params, arch, &spans, cache, r, dlogits.row(r), |l, a, d| {
            accumulate(&mut grad, spans[l], a, d, 1.0)
        });
    }
    Ok(grad)
}

fn check_labels(arch: &MlpArch, inputs: &Mat64, labels: &Mat64) -> Result<()> {
    if labels.rows() != inputs.rows() || labels.cols() != arch.num_classes() {
        return Err(Error::shape(format!(
            "labels are {}x{}, expected {}x{}",
            labels.rows(),
            labels.cols(),
            inputs.rows(),
            arch.num_classes()
        )));
    }
    Ok(())
}

/// Cross-entropy of every row.
pub fn per_sample_losses(
    params: &[f64],
    arch: &MlpArch,
    inputs: &Mat64,
    labels: &Mat64,
) -> Result<Vec<f64>> {
    check_labels(arch, inputs, labels)?;
    let cache = forward_cache(params, arch, inputs)?;
    Ok(losses_from_cache(&cache, labels))
}

fn losses_from_cache(cache: &ForwardCache, labels: &Mat64) -> Vec<f64> {
    cache
        .probs()
        .row_iter()
        .zip(labels.row_iter())
        .map(|(p, y)| cross_entropy_unchecked(p, y))
        .collect()
}

/// Loss `sum_j w_j L_j` and its exact gradient.
pub fn grad_weighted_loss(
    params: &[f64],
    arch: &MlpArch,
    inputs: &Mat64,
    labels: &Mat64,
    weights: &[f64],
) -> Result<(f64, ParamVector)> {
    check_labels(arch, inputs, labels)?;
    if weights.len() != inputs.rows() {
        return Err(Error::shape(format!(
            "{} weights for a batch of {}",
            weights.len(),
            inputs.rows()
        )));
    }
    let cache = forward_cache(params, arch, inputs)?;
    let losses = losses_from_cache(&cache, labels);
    let loss = tensor::dot_unchecked(weights, &losses);
    let spans = arch.spans();
    let mut grad = ParamVector::zeros(params.len());
    let mut dz = vec![0.0; arch.num_classes()];
    for (r, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        cross_entropy_dlogits(cache.probs().row(r), labels.row(r), &mut dz);
        backprop_row(params, arch, &spans, &cache, r, &dz, |l, a, d| {
            accumulate(&mut grad, spans[l], a, d, w)
        });
    }
    Ok((loss, grad))
}

/// `out[j] = <ref_grad, grad_theta L_j>` for every row `j`.
///
/// Each sample's gradient is contracted against `ref_grad` layer by layer
/// while it is back-propagated, so no per-sample gradient is ever stored.
pub fn per_sample_grad_dots(
    params: &[f64],
    arch: &MlpArch,
    inputs: &Mat64,
    labels: &Mat64,
    ref_grad: &[f64],
) -> Result<Vec<f64>> {
    check_labels(arch, inputs, labels)?;
    if ref_grad.len() != params.len() {
        return Err(Error::shape(format!(
            "reference gradient has {} entries, parameters {}",
            ref_grad.len(),
            params.len()
        )));
    }
    let cache = forward_cache(params, arch, inputs)?;
    let spans = arch.spans();
    let mut dz = vec![0.0; arch.num_classes()];
    let mut out = Vec::with_capacity(inputs.rows());
    for r in 0..inputs.rows() {
        cross_entropy_dlogits(cache.probs().row(r), labels.row(r), &mut dz);
        let mut layer_dots = vec![0.0; spans.len()];
        backprop_row(params, arch, &spans, &cache, r, &dz, |l, a, d| {
            let span = spans[l];
            let mut s = 0.0;
            for (i, &ai) in a.iter().enumerate() {
                let rw = &ref_grad[span.w + i * span.fan_out..span.w + (i + 1) * span.fan_out];
                s += ai * tensor::dot_unchecked(rw, d);
            }
            s += tensor::dot_unchecked(&ref_grad[span.b..span.b + span.fan_out], d);
            layer_dots[l] = s;
        });
        out.push(layer_dots.iter().sum());
    }
    Ok(out)
}

/// Central differences `(f(θ + εe_i) - f(θ - εe_i)) / 2ε` for every coordinate.
pub fn finite_diff_grad(params: &[f64], f: impl Fn(&[f64]) -> f64, eps: f64) -> ParamVector {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = params.to_vec();
    let mut grad = ParamVector::zeros(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    grad
}
