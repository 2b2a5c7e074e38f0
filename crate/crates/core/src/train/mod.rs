//! The training loop: one meta-reweighted SGD step per mini-batch pair,
//! plus the supervised baselines and ablations.
//!
//! A Meta-Semi iteration on a labeled batch `X` and an unlabeled batch `U`:
//!
//! 1. pseudo-label `U` with the EMA teacher (or the student under `no_ema`);
//! 2. `X̃ = MixUp(X, Shuffle(X), λ₁)`, `Ũ = MixUp(W, Shuffle(W), λ₂)` with
//!    `W = Concat(X, U)`;
//! 3. `g_sup = ∇ Σ_i L(ỹ_i, p(x̃_i|θ))` and `dots_j = <g_sup, ∇ L(ŷ_j, p(ũ_j|θ))>`;
//! 4. meta gradients `-α dots_j` and 0/1 weights;
//! 5. `θ <- SGD(θ, ∇ L_meta [+ c ∇ L_consistency])`, skipped when no sample is
//!    selected;
//! 6. EMA update of the teacher.
//!
//! Labeled information reaches the parameters only through the labeled
//! members of `Ũ` and through the weight rule; there is no separate
//! supervised term in the update.

mod config;
mod consistency;
mod optim;

pub use config::{Flags, Method, Schedule, TrainConfig};
pub use consistency::consistency_loss;
pub use optim::{lr_at, sgd_step};

use crate::data::{
    augment_shift, make_labeled_batch, make_unlabeled_batch, unmixed_labeled_batch,
    unmixed_unlabeled_batch, LabeledExample, MixedBatch, PseudoLabeledExample, SplitDataset,
};
use crate::diagnostics::{self, SelectionCounts};
use crate::ema::{pseudo_labels, TeacherState};
use crate::error::{Error, Result};
use crate::meta::{self, WeightMode, WeightVector};
use crate::nn::{self, MlpArch, ParamVector};
use crate::rng::Rng;
use crate::tensor::{self, Mat64};

/// Random streams owned by a run. Each has its own name so that, e.g., turning
/// on augmentation does not change the MixUp draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    pub batches: Rng,
    pub mixup: Rng,
    pub noise: Rng,
    pub augment: Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            batches: Rng::stream(seed, "batches"),
            mixup: Rng::stream(seed, "mixup"),
            noise: Rng::stream(seed, "noise"),
            augment: Rng::stream(seed, "augment"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Iterations completed so far.
    pub t: usize,
    pub arch: MlpArch,
    pub student: ParamVector,
    pub momentum_buffer: ParamVector,
    pub teacher: TeacherState,
    pub streams: Streams,
}

impl TrainState {
    /// Student drawn from the `"init"` stream, teacher an exact copy.
    pub fn new(cfg: &TrainConfig, arch: MlpArch) -> Result<Self> {
        let student = nn::init_params(&arch, &mut Rng::stream(cfg.seed, "init"));
        let teacher = TeacherState::new(&student, cfg.ema_decay)?;
        Ok(TrainState {
            t: 0,
            momentum_buffer: ParamVector::zeros(student.len()),
            student,
            teacher,
            arch,
            streams: Streams::new(cfg.seed),
        })
    }

    /// Parameters that produce pseudo labels under `flags`.
    pub fn labeler(&self, flags: &Flags) -> &ParamVector {
        if flags.no_ema {
            &self.student
        } else {
            &self.teacher.params
        }
    }
}

/// Per-epoch observables.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Mean over the epoch of the loss that drove the updates
    /// (`L_meta` for the semi-supervised methods).
    pub meta_loss: f64,
    /// Mean share of `Ũ` with weight `+1`; absent for supervised baselines.
    pub selected_fraction: Option<f64>,
    pub student_test_error: f64,
    pub teacher_test_error: f64,
    /// Norm of the gradient of the mean cross-entropy over the whole labeled
    /// set, measured at the end of the epoch.
    pub sup_grad_norm: f64,
    /// Learning rate of the last iteration of the epoch.
    pub lr: f64,
    pub assumption_ratio: Option<f64>,
    /// Share of selected unlabeled-origin samples whose pseudo label is right.
    pub selection_precision: Option<f64>,
}

/// Result of one meta-reweighted step before any parameter update.
#[derive(Debug, Clone)]
pub(crate) struct MetaStep {
    pub u_mixed: MixedBatch,
    pub pseudo: Mat64,
    pub weights: WeightVector,
    pub meta_loss: f64,
    pub grad: ParamVector,
}

/// Pseudo-labels `u`, builds `X̃`/`Ũ`, and computes weights and `∇ L_meta`
/// at `student`. `alpha` only scales the meta gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn meta_step(
    student: &[f64],
    labeler: &[f64],
    arch: &MlpArch,
    cfg: &TrainConfig,
    mode: WeightMode,
    x: &[LabeledExample],
    u: &[Vec<f64>],
    alpha: f64,
    mixup_rng: &mut Rng,
) -> Result<MetaStep> {
    let k = arch.num_classes();
    let pseudo = if u.is_empty() {
        Mat64::zeros(0, k)
    } else {
        pseudo_labels(
            labeler,
            arch,
            &Mat64::from_rows(u)?,
            cfg.flags.one_hot_pseudo,
        )?
    };
    let u_ex: Vec<PseudoLabeledExample> = u
        .iter()
        .zip(pseudo.row_iter())
        .map(|(f, y)| PseudoLabeledExample {
            u: f.clone(),
            y_hat: y.to_vec(),
        })
        .collect();

    let x_mixed = if cfg.flags.mix_labeled() {
        make_labeled_batch(x, cfg.beta, mixup_rng)?
    } else {
        unmixed_labeled_batch(x)
    };
    let u_mixed = if cfg.flags.mix_unlabeled() {
        make_unlabeled_batch(x, &u_ex, cfg.beta, mixup_rng)?
    } else {
        unmixed_unlabeled_batch(x, &u_ex)
    };

    let ones = vec![1.0; x_mixed.len()];
    let (_, sup_grad) =
        nn::grad_weighted_loss(student, arch, &x_mixed.inputs(), &x_mixed.labels(), &ones)?;

    let (uin, ulab) = (u_mixed.inputs(), u_mixed.labels());
    let weights = match mode {
        WeightMode::Const1 => WeightVector {
            w: vec![1.0; u_mixed.len()],
            mode,
        },
        _ => {
            let dots = nn::per_sample_grad_dots(student, arch, &uin, &ulab, &sup_grad)?;
            meta::assign_weights(&meta::meta_gradients(&dots, alpha), mode)
        }
    };
    let losses = nn::per_sample_losses(student, arch, &uin, &ulab)?;
    let meta_loss = meta::meta_loss(&weights, &losses)?;
    let grad = meta::meta_loss_grad(student, arch, &uin, &ulab, &weights)?;
    Ok(MetaStep {
        u_mixed,
        pseudo,
        weights,
        meta_loss,
        grad,
    })
}

/// What one iteration did.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub loss: f64,
    pub lr: f64,
    /// `true` when no sample carried weight and the update was skipped.
    pub skipped: bool,
    pub weights: Option<WeightVector>,
    /// Provenance of each `Ũ` entry (semi-supervised methods only).
    pub origins: Vec<crate::data::Origin>,
    /// Argmax class of each pseudo label, indexed like the unlabeled batch.
    pub pseudo_classes: Vec<usize>,
}

/// Runs one iteration on the given batches and advances `state`.
pub fn train_iteration(
    state: &mut TrainState,
    cfg: &TrainConfig,
    x: &[LabeledExample],
    u: &[Vec<f64>],
    total_iters: usize,
    image_dims: Option<(usize, usize)>,
) -> Result<IterationOutcome> {
    if x.is_empty() {
        return Err(Error::EmptyBatch("labeled training batch"));
    }
    let (x_aug, u_aug);
    let (x, u) = match image_dims {
        Some((w, h)) if cfg.flags.augment_shift => {
            let rng = &mut state.streams.augment;
            x_aug = x
                .iter()
                .map(|e| LabeledExample {
                    x: augment_shift(&e.x, w, h, rng),
                    y: e.y.clone(),
                })
                .collect::<Vec<_>>();
            u_aug = u
                .iter()
                .map(|f| augment_shift(f, w, h, rng))
                .collect::<Vec<_>>();
            (x_aug.as_slice(), u_aug.as_slice())
        }
        _ => (x, u),
    };

    let lr = lr_at(cfg.schedule, cfg.alpha0, state.t, total_iters);
    let arch = state.arch.clone();

    let outcome = match cfg.method.weight_mode() {
        None => {
            let batch = if cfg.method == Method::SupervisedMixup && cfg.flags.mix_labeled() {
                make_labeled_batch(x, cfg.beta, &mut state.streams.mixup)?
            } else {
                unmixed_labeled_batch(x)
            };
            let w = vec![1.0 / batch.len() as f64; batch.len()];
            let (loss, grad) = nn::grad_weighted_loss(
                &state.student,
                &arch,
                &batch.inputs(),
                &batch.labels(),
                &w,
            )?;
            sgd_step(
                &mut state.student,
                &mut state.momentum_buffer,
                &grad,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            );
            IterationOutcome {
                loss,
                lr,
                skipped: false,
                weights: None,
                origins: Vec::new(),
                pseudo_classes: Vec::new(),
            }
        }
        Some(mode) => {
            let labeler = state.labeler(&cfg.flags).clone();
            let step = meta_step(
                &state.student,
                &labeler,
                &arch,
                cfg,
                mode,
                x,
                u,
                lr,
                &mut state.streams.mixup,
            )?;
            let skipped = step.weights.total() == 0.0;
            if !skipped {
                let mut grad = step.grad;
                if cfg.consistency_coeff > 0.0 {
                    let (_, cgrad) = consistency_loss(
                        &state.student,
                        &arch,
                        &step.u_mixed.inputs(),
                        cfg.consistency_noise_std,
                        &mut state.streams.noise,
                    )?;
                    tensor::axpy(cfg.consistency_coeff, &cgrad, &mut grad);
                }
                sgd_step(
                    &mut state.student,
                    &mut state.momentum_buffer,
                    &grad,
                    lr,
                    cfg.momentum,
                    cfg.weight_decay,
                );
            }
            IterationOutcome {
                loss: step.meta_loss,
                lr,
                skipped,
                pseudo_classes: step.pseudo.row_iter().map(tensor::argmax).collect(),
                origins: step.u_mixed.origins,
                weights: Some(step.weights),
            }
        }
    };
    state.teacher.update(&state.student)?;
    state.t += 1;
    Ok(outcome)
}

/// Fraction of argmax-misclassified examples (ties go to the lowest class).
pub fn evaluate(params: &[f64], arch: &MlpArch, testset: &[LabeledExample]) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::EmptyBatch("evaluation set"));
    }
    let mut wrong = 0usize;
    for chunk in testset.chunks(512) {
        let rows: Vec<&[f64]> = chunk.iter().map(|e| e.x.as_slice()).collect();
        let probs = nn::forward(params, arch, &Mat64::from_rows(&rows)?)?;
        for (p, e) in probs.row_iter().zip(chunk) {
            if tensor::argmax(p) != e.class() {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / testset.len() as f64)
}

/// Gradient of the mean cross-entropy over `labeled`, without mixing.
pub fn full_supervised_grad(
    params: &[f64],
    arch: &MlpArch,
    labeled: &[LabeledExample],
) -> Result<ParamVector> {
    let rows: Vec<&[f64]> = labeled.iter().map(|e| e.x.as_slice()).collect();
    let ys: Vec<&[f64]> = labeled.iter().map(|e| e.y.as_slice()).collect();
    let w = vec![1.0 / labeled.len() as f64; labeled.len()];
    let (_, g) = nn::grad_weighted_loss(
        params,
        arch,
        &Mat64::from_rows(&rows)?,
        &Mat64::from_rows(&ys)?,
        &w,
    )?;
    Ok(g)
}

/// Draws labeled batches by walking a shuffled order and reshuffling whenever
/// it runs out, so every example is used once per pass.
#[derive(Debug, Clone)]
pub(crate) struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    pub fn new(n: usize) -> Self {
        Cycler {
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next_batch(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Iterations per epoch: one pass over the unlabeled pool, or over the
/// labeled set when there is no unlabeled data.
pub fn iterations_per_epoch(cfg: &TrainConfig, data: &SplitDataset) -> usize {
    if data.unlabeled.is_empty() {
        data.labeled.len().div_ceil(cfg.labeled_batch)
    } else {
        data.unlabeled.len().div_ceil(cfg.unlabeled_batch)
    }
}

pub fn train(cfg: &TrainConfig, data: &SplitDataset) -> Result<(TrainState, Vec<MetricsRecord>)> {
    train_with(cfg, data, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch (used for checkpointing).
pub fn train_with(
    cfg: &TrainConfig,
    data: &SplitDataset,
    mut on_epoch: impl FnMut(&TrainState, &MetricsRecord) -> Result<()>,
) -> Result<(TrainState, Vec<MetricsRecord>)> {
    cfg.validate()?;
    if data.labeled.is_empty() {
        return Err(Error::Dataset("no labeled examples".into()));
    }
    if data.test.is_empty() {
        return Err(Error::Dataset("no test examples".into()));
    }
    let arch = cfg.arch(data.input_dim(), data.num_classes)?;
    let mut state = TrainState::new(cfg, arch)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok((state, history));
    }

    let ipe = iterations_per_epoch(cfg, data);
    let total = ipe * cfg.epochs;
    let mut cycler = Cycler::new(data.labeled.len());
    let n_u = data.unlabeled.len();

    for epoch in 1..=cfg.epochs {
        let order = state.streams.batches.permutation(n_u);
        let mut loss_sum = 0.0;
        let mut frac_sum = 0.0;
        let mut counts = SelectionCounts::default();
        let mut last_lr = 0.0;
        for it in 0..ipe {
            let u_idx = if n_u == 0 {
                &[][..]
            } else {
                &order[it * cfg.unlabeled_batch..((it + 1) * cfg.unlabeled_batch).min(n_u)]
            };
            let x_idx = cycler.next_batch(cfg.labeled_batch, &mut state.streams.batches);
            let x: Vec<LabeledExample> = x_idx.iter().map(|&i| data.labeled[i].clone()).collect();
            let u: Vec<Vec<f64>> = u_idx.iter().map(|&i| data.unlabeled[i].clone()).collect();
            let out = train_iteration(&mut state, cfg, &x, &u, total, data.image_dims)?;
            loss_sum += out.loss;
            last_lr = out.lr;
            if let Some(w) = &out.weights {
                frac_sum += w.selected_fraction();
                if !data.unlabeled_shadow.is_empty() {
                    let shadow: Vec<usize> =
                        u_idx.iter().map(|&i| data.unlabeled_shadow[i]).collect();
                    counts += diagnostics::selection_counts(
                        w,
                        &out.origins,
                        Some(&shadow),
                        &out.pseudo_classes,
                    );
                }
            }
        }
        let semi = cfg.method.weight_mode().is_some();
        let assumption_ratio = if cfg.assumption_mc > 0 {
            diagnostics::assumption_ratio(&state, cfg, data, cfg.assumption_mc, epoch as u64)?.ratio
        } else {
            None
        };
        let record = MetricsRecord {
            epoch,
            meta_loss: loss_sum / ipe as f64,
            selected_fraction: semi.then(|| frac_sum / ipe as f64),
            student_test_error: evaluate(&state.student, &state.arch, &data.test)?,
            teacher_test_error: evaluate(&state.teacher.params, &state.arch, &data.test)?,
            sup_grad_norm: full_supervised_grad(&state.student, &state.arch, &data.labeled)?.norm(),
            lr: last_lr,
            assumption_ratio,
            selection_precision: if semi { counts.precision() } else { None },
        };
        on_epoch(&state, &record)?;
        history.push(record);
    }
    Ok((state, history))
}
