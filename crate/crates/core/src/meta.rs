//! One-step meta-gradient reweighting of pseudo-labeled samples.
//!
//! Let `g_sup` be the gradient of the supervised loss summed over the mixed
//! labeled batch and `g_j` the gradient of sample `j`'s loss, both at the
//! current parameters. Differentiating the supervised loss after one virtual
//! SGD step of size `alpha` on `sum_j w_j L_j`, at `w = 0`, gives
//!
//! ```text
//! d/dw_j  G(θ - alpha * sum_k w_k g_k) |_{w=0}  =  -alpha * <g_sup, g_j>
//! ```
//!
//! and the same quantity after `M` virtual steps is exactly `M` times this,
//! so the one-step form decides the sign for any horizon. A sample is kept
//! (`w_j = 1`) iff its meta gradient is `<= 0`, i.e. iff its gradient points
//! within 90 degrees of the supervised gradient.

use crate::error::{Error, Result};
use crate::nn::{self, MlpArch, ParamVector};
use crate::tensor::Mat64;

/// Per-sample meta gradients together with the step size that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradients {
    pub g: Vec<f64>,
    pub alpha: f64,
}

/// `g_j = -alpha * dots_j`, where `dots_j = <g_sup, g_j>` comes from
/// [`nn::per_sample_grad_dots`] with `g_sup` as the reference gradient.
pub fn meta_gradients(dots: &[f64], alpha: f64) -> MetaGradients {
    MetaGradients {
        g: dots.iter().map(|&d| -alpha * d).collect(),
        alpha,
    }
}

/// How meta gradients turn into sample weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// `1` if the meta gradient is `<= 0`, else `0`.
    Meta,
    /// Every sample weighted `1`.
    Const1,
    /// `1` if the meta gradient is `<= 0`, else `-1`.
    PlusMinusOne,
}

/// Per-sample weights plus the rule that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub mode: WeightMode,
}

impl WeightVector {
    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }

    /// Share of samples with weight `+1`.
    pub fn selected_fraction(&self) -> f64 {
        if self.w.is_empty() {
            return 0.0;
        }
        self.w.iter().filter(|&&v| v == 1.0).count() as f64 / self.w.len() as f64
    }
}

/// A zero meta gradient counts as non-positive and keeps the sample.
pub fn assign_weights(mg: &MetaGradients, mode: WeightMode) -> WeightVector {
    let w = match mode {
        WeightMode::Const1 => vec![1.0; mg.g.len()],
        WeightMode::Meta => {
            mg.g.iter()
                .map(|&g| if g <= 0.0 { 1.0 } else { 0.0 })
                .collect()
        }
        WeightMode::PlusMinusOne => {
            mg.g.iter()
                .map(|&g| if g <= 0.0 { 1.0 } else { -1.0 })
                .collect()
        }
    };
    WeightVector { w, mode }
}

/// `sum_j w_j L_j / sum_j w_j`, defined as `0` when the weights sum to zero.
pub fn meta_loss(weights: &WeightVector, losses: &[f64]) -> Result<f64> {
    if weights.w.len() != losses.len() {
        return Err(Error::shape(format!(
            "{} weights for {} losses",
            weights.w.len(),
            losses.len()
        )));
    }
    let total = weights.total();
    if total == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (&w, &l) in weights.w.iter().zip(losses) {
        if w != 0.0 {
            acc += w * l;
        }
    }
    Ok(acc / total)
}

/// Gradient of [`meta_loss`] with respect to the parameters; the zero vector
/// when the weights sum to zero.
pub fn meta_loss_grad(
    params: &[f64],
    arch: &MlpArch,
    inputs: &Mat64,
    labels: &Mat64,
    weights: &WeightVector,
) -> Result<ParamVector> {
    if weights.w.len() != inputs.rows() {
        return Err(Error::shape(format!(
            "{} weights for a batch of {}",
            weights.w.len(),
            inputs.rows()
        )));
    }
    let total = weights.total();
    if total == 0.0 {
        return Ok(ParamVector::zeros(params.len()));
    }
    let (_, mut grad) = nn::grad_weighted_loss(params, arch, inputs, labels, &weights.w)?;
    crate::tensor::scale(1.0 / total, &mut grad);
    Ok(grad)
}
