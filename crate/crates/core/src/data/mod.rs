//! Datasets, labeled/unlabeled splits and MixUp batch construction.

mod idx;
mod mixup;
mod source;
mod synth;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, IdxImages};
pub use mixup::{
    make_labeled_batch, make_labeled_batch_with_lambda, make_unlabeled_batch,
    make_unlabeled_batch_with_lambda, mixup_pair, unmixed_labeled_batch, unmixed_unlabeled_batch,
};
pub use source::{build_dataset, load_csv, DatasetSource, DatasetSpec};
pub use synth::{gen_blobs, gen_two_moons};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{one_hot, Mat64};

/// A ground-truth example with a one-hot label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl LabeledExample {
    pub fn new(x: Vec<f64>, class: usize, num_classes: usize) -> Self {
        LabeledExample {
            x,
            y: one_hot(class, num_classes),
        }
    }

    pub fn class(&self) -> usize {
        crate::tensor::argmax(&self.y)
    }
}

/// Features paired with a soft label (a pseudo label or a mixed label).
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledExample {
    pub u: Vec<f64>,
    pub y_hat: Vec<f64>,
}

/// Where an entry of the concatenated MixUp pool came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Index into the labeled batch.
    Labeled(usize),
    /// Index into the pseudo-labeled batch.
    Unlabeled(usize),
}

/// Provenance of one mixed example: `lambda * primary + (1 - lambda) * partner`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Origin {
    pub primary: Source,
    pub partner: Source,
}

impl Origin {
    pub fn is_labeled_mix(&self) -> bool {
        matches!(self.primary, Source::Labeled(_))
    }
}

/// Output of one MixUp call. `lambda` is shared by every pair in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub examples: Vec<PseudoLabeledExample>,
    pub origins: Vec<Origin>,
    pub lambda: f64,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn inputs(&self) -> Mat64 {
        let rows: Vec<&[f64]> = self.examples.iter().map(|e| e.u.as_slice()).collect();
        Mat64::from_rows(&rows).expect("mixed examples share a feature width")
    }

    pub fn labels(&self) -> Mat64 {
        let rows: Vec<&[f64]> = self.examples.iter().map(|e| e.y_hat.as_slice()).collect();
        Mat64::from_rows(&rows).expect("mixed examples share a label width")
    }
}

/// Labeled, unlabeled, validation and test partitions of one dataset.
///
/// The true classes of the unlabeled pool are kept in `unlabeled_shadow` for
/// diagnostics; nothing on the training path reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<Vec<f64>>,
    pub unlabeled_shadow: Vec<usize>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub num_classes: usize,
    /// `(width, height)` when the features are flattened images.
    pub image_dims: Option<(usize, usize)>,
}

impl SplitDataset {
    pub fn input_dim(&self) -> usize {
        self.labeled
            .first()
            .map(|e| e.x.len())
            .or_else(|| self.unlabeled.first().map(Vec::len))
            .unwrap_or(0)
    }

    /// Applies `f` to every feature vector of every partition.
    pub fn map_features(&mut self, mut f: impl FnMut(&mut Vec<f64>)) {
        for e in &mut self.labeled {
            f(&mut e.x);
        }
        for u in &mut self.unlabeled {
            f(u);
        }
        for e in self.validation.iter_mut().chain(self.test.iter_mut()) {
            f(&mut e.x);
        }
    }
}

/// How many training examples per class keep their label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelBudget {
    PerClass(usize),
    /// Every training example stays labeled; the unlabeled pool is empty.
    All,
}

/// Holds out `val_fraction` of the data for validation, then keeps exactly
/// `labels_per_class` labels per class (sampled uniformly) and strips the
/// labels of everything else.
pub fn split_dataset(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    budget: LabelBudget,
    val_fraction: f64,
    rng: &mut Rng,
) -> Result<SplitDataset> {
    if features.len() != labels.len() {
        return Err(Error::Dataset(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidHyperparameter(format!(
            "validation fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Dataset(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let order = rng.permutation(features.len());
    let n_val = (val_fraction * features.len() as f64).round() as usize;
    let (val_idx, rest) = order.split_at(n_val);

    let validation = val_idx
        .iter()
        .map(|&i| LabeledExample::new(features[i].clone(), labels[i], num_classes))
        .collect();

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    let mut shadow = Vec::new();
    match budget {
        LabelBudget::All => {
            labeled = rest
                .iter()
                .map(|&i| LabeledExample::new(features[i].clone(), labels[i], num_classes))
                .collect();
        }
        LabelBudget::PerClass(per_class) => {
            for class in 0..num_classes {
                let available = rest.iter().filter(|&&i| labels[i] == class).count();
                if available < per_class {
                    return Err(Error::InsufficientExamples {
                        class,
                        needed: per_class,
                        available,
                    });
                }
            }
            let mut taken = vec![0usize; num_classes];
            for &i in rest {
                let c = labels[i];
                if taken[c] < per_class {
                    taken[c] += 1;
                    labeled.push(LabeledExample::new(features[i].clone(), c, num_classes));
                } else {
                    unlabeled.push(features[i].clone());
                    shadow.push(c);
                }
            }
        }
    }

    Ok(SplitDataset {
        labeled,
        unlabeled,
        unlabeled_shadow: shadow,
        validation,
        test: Vec::new(),
        num_classes,
        image_dims: None,
    })
}

/// Per-feature mean and standard deviation of a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, &v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((s, &v), &m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        FeatureStats { mean, std }
    }

    /// `(x - mean) / std`; features with zero spread pass through untouched.
    pub fn apply(&self, x: &mut [f64]) {
        for ((v, &m), &s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            if s > 0.0 {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Standardizes `features` with statistics computed on `training`.
pub fn standardize(features: &[Vec<f64>], training: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let stats = FeatureStats::fit(training.iter().map(Vec::as_slice));
    features
        .iter()
        .map(|x| {
            let mut x = x.clone();
            stats.apply(&mut x);
            x
        })
        .collect()
}

/// Random integer translation by up to two pixels in each direction, with
/// zero fill. `x` is a row-major `height x width` image.
pub fn augment_shift(x: &[f64], width: usize, height: usize, rng: &mut Rng) -> Vec<f64> {
    debug_assert_eq!(x.len(), width * height);
    let dx = rng.below(5) as isize - 2;
    let dy = rng.below(5) as isize - 2;
    shift_image(x, width, height, dx, dy)
}

pub(crate) fn shift_image(
    x: &[f64],
    width: usize,
    height: usize,
    dx: isize,
    dy: isize,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..height as isize {
        let sr = r - dy;
        if sr < 0 || sr >= height as isize {
            continue;
        }
        for c in 0..width as isize {
            let sc = c - dx;
            if sc < 0 || sc >= width as isize {
                continue;
            }
            out[(r as usize) * width + c as usize] = x[(sr as usize) * width + sc as usize];
        }
    }
    out
}
