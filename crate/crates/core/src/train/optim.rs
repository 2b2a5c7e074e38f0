//! Learning-rate schedules and Nesterov SGD.

use super::config::Schedule;

/// Learning rate for iteration `t` of `total`.
///
/// The inverse-time schedule has `lim α^t = 0` and `Σ α^t = ∞`, the step-size
/// conditions of the convergence result, so the convergence checks use it.
pub fn lr_at(schedule: Schedule, alpha0: f64, t: usize, total: usize) -> f64 {
    let total = total.max(1) as f64;
    let t = t as f64;
    match schedule {
        Schedule::Cosine => alpha0 / 2.0 * (1.0 + (std::f64::consts::PI * t / total).cos()),
        Schedule::InvT => {
            let tau = (total / 10.0).max(1.0);
            alpha0 / (1.0 + t / tau)
        }
    }
}

/// One Nesterov momentum step with additive L2 weight decay:
///
/// ```text
/// d   = grad + weight_decay * θ
/// buf = momentum * buf + d
/// θ  -= lr * (d + momentum * buf)
/// ```
///
/// With `momentum = 0` and `weight_decay = 0` this is plain `θ -= lr * grad`.
pub fn sgd_step(
    params: &mut [f64],
    buf: &mut [f64],
    grad: &[f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    debug_assert!(params.len() == buf.len() && params.len() == grad.len());
    for ((p, b), &g) in params.iter_mut().zip(buf.iter_mut()).zip(grad) {
        let d = g + weight_decay * *p;
        *b = momentum * *b + d;
        *p -= lr * (d + momentum * *b);
    }
}
