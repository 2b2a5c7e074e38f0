use super::{LabeledExample, MixedBatch, Origin, PseudoLabeledExample, Source};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Convex combination of two annotated samples.
pub fn mixup_pair(
    a: (&[f64], &[f64]),
    b: (&[f64], &[f64]),
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lam) {
        return Err(Error::InvalidHyperparameter(format!(
            "mixup coefficient must lie in [0, 1], got {lam}"
        )));
    }
    if a.0.len() != b.0.len() || a.1.len() != b.1.len() {
        return Err(Error::shape(format!(
            "cannot mix ({}, {}) with ({}, {})",
            a.0.len(),
            a.1.len(),
            b.0.len(),
            b.1.len()
        )));
    }
    let mix = |p: &[f64], q: &[f64]| -> Vec<f64> {
        p.iter()
            .zip(q)
            .map(|(x, y)| lam * x + (1.0 - lam) * y)
            .collect()
    };
    Ok((mix(a.0, b.0), mix(a.1, b.1)))
}

/// Mixes `pool[i]` with `pool[perm[i]]` for a fresh uniform permutation.
fn mix_with_shuffle(
    pool: &[(&[f64], &[f64], Source)],
    lam: f64,
    rng: &mut Rng,
) -> Result<MixedBatch> {
    let perm = rng.permutation(pool.len());
    let mut examples = Vec::with_capacity(pool.len());
    let mut origins = Vec::with_capacity(pool.len());
    for (i, &j) in perm.iter().enumerate() {
        let (xa, ya, sa) = pool[i];
        let (xb, yb, sb) = pool[j];
        let (u, y_hat) = mixup_pair((xa, ya), (xb, yb), lam)?;
        examples.push(PseudoLabeledExample { u, y_hat });
        origins.push(Origin {
            primary: sa,
            partner: sb,
        });
    }
    Ok(MixedBatch {
        examples,
        origins,
        lambda: lam,
    })
}

fn labeled_pool(x: &[LabeledExample]) -> Vec<(&[f64], &[f64], Source)> {
    x.iter()
        .enumerate()
        .map(|(i, e)| (e.x.as_slice(), e.y.as_slice(), Source::Labeled(i)))
        .collect()
}

fn joint_pool<'a>(
    x: &'a [LabeledExample],
    u: &'a [PseudoLabeledExample],
) -> Vec<(&'a [f64], &'a [f64], Source)> {
    let mut pool = labeled_pool(x);
    pool.extend(
        u.iter()
            .enumerate()
            .map(|(j, e)| (e.u.as_slice(), e.y_hat.as_slice(), Source::Unlabeled(j))),
    );
    pool
}

/// `MixUp(X, Shuffle(X), λ₁)` with a single `λ₁ ~ Beta(beta, beta)` for the
/// whole batch. λ is drawn before the permutation.
pub fn make_labeled_batch(x: &[LabeledExample], beta: f64, rng: &mut Rng) -> Result<MixedBatch> {
    if x.is_empty() {
        return Err(Error::EmptyBatch("labeled mixup batch"));
    }
    let lam = rng.beta(beta)?;
    make_labeled_batch_with_lambda(x, lam, rng)
}

/// [`make_labeled_batch`] with a caller-chosen λ.
pub fn make_labeled_batch_with_lambda(
    x: &[LabeledExample],
    lam: f64,
    rng: &mut Rng,
) -> Result<MixedBatch> {
    if x.is_empty() {
        return Err(Error::EmptyBatch("labeled mixup batch"));
    }
    mix_with_shuffle(&labeled_pool(x), lam, rng)
}

/// `MixUp(W, Shuffle(W), λ₂)` with `W = Concat(X, U)`; the labeled part keeps
/// its one-hot labels, the unlabeled part carries soft pseudo labels.
pub fn make_unlabeled_batch(
    x: &[LabeledExample],
    u: &[PseudoLabeledExample],
    beta: f64,
    rng: &mut Rng,
) -> Result<MixedBatch> {
    if x.is_empty() && u.is_empty() {
        return Err(Error::EmptyBatch("unlabeled mixup batch"));
    }
    let lam = rng.beta(beta)?;
    make_unlabeled_batch_with_lambda(x, u, lam, rng)
}

pub fn make_unlabeled_batch_with_lambda(
    x: &[LabeledExample],
    u: &[PseudoLabeledExample],
    lam: f64,
    rng: &mut Rng,
) -> Result<MixedBatch> {
    if x.is_empty() && u.is_empty() {
        return Err(Error::EmptyBatch("unlabeled mixup batch"));
    }
    mix_with_shuffle(&joint_pool(x, u), lam, rng)
}

/// `X` passed through unchanged (MixUp disabled on the labeled stream).
pub fn unmixed_labeled_batch(x: &[LabeledExample]) -> MixedBatch {
    identity(&labeled_pool(x))
}

/// `Concat(X, U)` passed through unchanged (MixUp disabled on the unlabeled stream).
pub fn unmixed_unlabeled_batch(x: &[LabeledExample], u: &[PseudoLabeledExample]) -> MixedBatch {
    identity(&joint_pool(x, u))
}

fn identity(pool: &[(&[f64], &[f64], Source)]) -> MixedBatch {
    MixedBatch {
        examples: pool
            .iter()
            .map(|&(x, y, _)| PseudoLabeledExample {
                u: x.to_vec(),
                y_hat: y.to_vec(),
            })
            .collect(),
        origins: pool
            .iter()
            .map(|&(_, _, s)| Origin {
                primary: s,
                partner: s,
            })
            .collect(),
        lambda: 1.0,
    }
}
