//! Optional consistency regularizer added on top of the meta loss with a
//! coefficient: mean squared distance between the softmax outputs on a batch
//! and on a Gaussian-perturbed copy of it.

use crate::error::Result;
use crate::nn::{self, MlpArch, ParamVector};
use crate::rng::Rng;
use crate::tensor::{self, Mat64};

/// `(1/n) sum_j ||p(u_j) - p(u_j + noise_j)||²` and its gradient, which flows
/// through both the clean and the perturbed branch.
pub fn consistency_loss(
    params: &[f64],
    arch: &MlpArch,
    inputs: &Mat64,
    noise_std: f64,
    rng: &mut Rng,
) -> Result<(f64, ParamVector)> {
    let n = inputs.rows();
    if n == 0 {
        return Ok((0.0, ParamVector::zeros(params.len())));
    }
    let mut noisy = inputs.clone();
    if noise_std > 0.0 {
        for r in 0..n {
            for v in noisy.row_mut(r) {
                *v += noise_std * rng.normal();
            }
        }
    }
    let clean = nn::forward_cache(params, arch, inputs)?;
    let pert = nn::forward_cache(params, arch, &noisy)?;
    let k = arch.num_classes();
    let mut loss = 0.0;
    let mut dz_clean = Mat64::zeros(n, k);
    let mut dz_pert = Mat64::zeros(n, k);
    let scale = 2.0 / n as f64;
    for r in 0..n {
        let p = clean.probs().row(r);
        let q = pert.probs().row(r);
        let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
        loss += tensor::norm_sq(&diff);
        let g: Vec<f64> = diff.iter().map(|d| scale * d).collect();
        softmax_vjp(p, &g, dz_clean.row_mut(r));
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        softmax_vjp(q, &neg, dz_pert.row_mut(r));
    }
    let mut grad = nn::backward(params, arch, &clean, &dz_clean)?;
    let g2 = nn::backward(params, arch, &pert, &dz_pert)?;
    tensor::axpy(1.0, &g2, &mut grad);
    Ok((loss / n as f64, grad))
}

/// Pulls `dL/dp` back through `p = softmax(z)`: `dL/dz = p * (g - <g, p>)`.
fn softmax_vjp(p: &[f64], g: &[f64], out: &mut [f64]) {
    let s = tensor::dot_unchecked(g, p);
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(g) {
        *o = pi * (gi - s);
    }
}
