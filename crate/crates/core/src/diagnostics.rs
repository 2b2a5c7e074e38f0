//! Checks of the method's own claims: the linearity of the meta gradient in
//! the number of virtual steps, analytic-vs-numeric gradients, the
//! gradient-noise ratio `E||∇L_meta||² / ||∇L_sup||²`, and the precision of the
//! selection rule against held-back labels.

use std::ops::AddAssign;

use rayon::prelude::*;

use crate::data::{
    make_labeled_batch_with_lambda, unmixed_labeled_batch, LabeledExample, Origin, Source,
    SplitDataset,
};
use crate::error::{Error, Result};
use crate::meta::{WeightMode, WeightVector};
use crate::nn::{self, Activation, MlpArch, ParamVector};
use crate::rng::Rng;
use crate::tensor::{self, Mat64};
use crate::train::{meta_step, TrainConfig, TrainState};

/// Finite-difference meta gradients after `m` virtual steps next to the
/// closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Report {
    pub m: usize,
    /// `d/dw_j` of the summed supervised loss after `m` plain GD steps on
    /// `sum_j w_j L_j`, by central differences at `w = 0`.
    pub finite_diff: Vec<f64>,
    /// One-step closed form `-alpha * <g_sup, g_j>`.
    pub one_step: Vec<f64>,
    /// `<g_sup, g_j>` as used for the weight rule.
    pub dots: Vec<f64>,
    pub sup_grad_norm: f64,
    pub sample_grad_norms: Vec<f64>,
}

impl Prop1Report {
    /// `m * one_step`, the claimed value of `finite_diff`.
    pub fn predicted(&self) -> Vec<f64> {
        self.one_step.iter().map(|g| self.m as f64 * g).collect()
    }

    /// Whether every entry satisfies `|fd - pred| <= max(rel * |pred|, abs)`.
    pub fn within_tolerance(&self, rel: f64, abs: f64) -> bool {
        self.finite_diff
            .iter()
            .zip(self.predicted())
            .all(|(f, p)| (f - p).abs() <= (rel * p.abs()).max(abs))
    }

    /// Largest `|fd - pred| / |pred|` over entries with a nonzero prediction.
    pub fn max_rel_deviation(&self) -> f64 {
        self.finite_diff
            .iter()
            .zip(self.predicted())
            .filter(|(_, p)| *p != 0.0)
            .map(|(f, p)| (f - p).abs() / p.abs())
            .fold(0.0, f64::max)
    }

    /// Counts `(agreeing, compared)` between the sign of the finite
    /// difference and the sign of `-dots`, skipping near-orthogonal samples
    /// where `|dot| <= 1e-6 ||g_sup|| ||g_j||`.
    pub fn sign_agreement(&self) -> (usize, usize) {
        let mut agree = 0;
        let mut total = 0;
        for ((f, d), gn) in self
            .finite_diff
            .iter()
            .zip(&self.dots)
            .zip(&self.sample_grad_norms)
        {
            if d.abs() <= 1e-6 * self.sup_grad_norm * gn {
                continue;
            }
            total += 1;
            if (*f < 0.0) == (*d > 0.0) && *f != 0.0 {
                agree += 1;
            }
        }
        (agree, total)
    }
}

/// Measures the meta gradient of the mixed labeled loss `S(θ)` after `m`
/// virtual gradient-descent steps of size `alpha` on `sum_j w_j L_j`
/// (no momentum, no weight decay), differentiating in `w` at `w = 0` with
/// central differences of step `eps`.
pub fn verify_prop1(
    params: &[f64],
    arch: &MlpArch,
    sup: (&Mat64, &Mat64),
    pool: (&Mat64, &Mat64),
    alpha: f64,
    m: usize,
    eps: f64,
) -> Result<Prop1Report> {
    let (xs, ys) = sup;
    let (us, uy) = pool;
    let n = us.rows();
    let ones = vec![1.0; xs.rows()];
    let (_, g_sup) = nn::grad_weighted_loss(params, arch, xs, ys, &ones)?;
    let dots = nn::per_sample_grad_dots(params, arch, us, uy, &g_sup)?;
    let mut sample_grad_norms = Vec::with_capacity(n);
    for j in 0..n {
        let (_, g) = nn::grad_weighted_loss(
            params,
            arch,
            &Mat64::from_rows(&[us.row(j)])?,
            &Mat64::from_rows(&[uy.row(j)])?,
            &[1.0],
        )?;
        sample_grad_norms.push(g.norm());
    }

    let sup_after = |w: &[f64]| -> Result<f64> {
        let mut theta = params.to_vec();
        for _ in 0..m {
            let (_, g) = nn::grad_weighted_loss(&theta, arch, us, uy, w)?;
            tensor::axpy(-alpha, &g, &mut theta);
        }
        Ok(nn::per_sample_losses(&theta, arch, xs, ys)?.iter().sum())
    };

    let mut finite_diff = Vec::with_capacity(n);
    for j in 0..n {
        let mut w = vec![0.0; n];
        w[j] = eps;
        let plus = sup_after(&w)?;
        w[j] = -eps;
        let minus = sup_after(&w)?;
        let fd = (plus - minus) / (2.0 * eps);
        if !fd.is_finite() {
            return Err(Error::Diagnostic {
                index: j,
                what: "non-finite finite-difference meta gradient".into(),
            });
        }
        finite_diff.push(fd);
    }
    Ok(Prop1Report {
        m,
        finite_diff,
        one_step: dots.iter().map(|&d| -alpha * d).collect(),
        sup_grad_norm: g_sup.norm(),
        sample_grad_norms,
        dots,
    })
}

/// Worst-case numbers from [`prop1_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Summary {
    pub cases: usize,
    pub m: usize,
    /// Every one-step finite difference within `max(1e-3 rel, 1e-9 abs)` of
    /// the closed form.
    pub closed_form_ok: bool,
    pub closed_form_max_rel: f64,
    /// Largest `|FD_M - M FD_1| / |M FD_1|` over entries with `|FD_1| > 1e-7`.
    pub linearity_max_rel: f64,
    pub sign_agree: usize,
    pub sign_total: usize,
}

impl Prop1Summary {
    pub const CLOSED_FORM_REL: f64 = 1e-3;
    pub const CLOSED_FORM_ABS: f64 = 1e-9;
    pub const LINEARITY_REL: f64 = 2e-3;

    pub fn passed(&self) -> bool {
        self.closed_form_ok
            && self.linearity_max_rel < Self::LINEARITY_REL
            && self.sign_agree == self.sign_total
    }
}

/// A random small network with a mixed labeled batch and a pool of
/// pseudo-labeled samples, as used by [`prop1_suite`].
#[allow(clippy::type_complexity)]
pub fn random_meta_instance(rng: &mut Rng) -> Result<(MlpArch, ParamVector, [Mat64; 4], f64)> {
    let d = 1 + rng.below(5);
    let h = 2 + rng.below(7);
    let k = 2 + rng.below(3);
    let act = if rng.below(2) == 0 {
        Activation::Relu
    } else {
        Activation::Tanh
    };
    let arch = MlpArch::new(vec![d, h, k], act)?;
    let params = nn::init_params(&arch, rng);
    let nx = 1 + rng.below(6);
    let nu = 1 + rng.below(6);
    let alpha = 0.01 + 0.09 * rng.uniform();
    let mut mat = |rows: usize, cols: usize, soft: bool| -> Result<Mat64> {
        let mut m = Mat64::zeros(rows, cols);
        for r in 0..rows {
            let z: Vec<f64> = (0..cols).map(|_| rng.normal()).collect();
            m.row_mut(r)
                .copy_from_slice(&if soft { tensor::softmax(&z) } else { z });
        }
        Ok(m)
    };
    let mats = [
        mat(nx, d, false)?,
        mat(nx, k, true)?,
        mat(nu, d, false)?,
        mat(nu, k, true)?,
    ];
    Ok((arch, params, mats, alpha))
}

/// Checks the one-step closed form and the `M`-step linearity on `cases`
/// random instances, with `eps = 1e-4` central differences over `w`.
pub fn prop1_suite(rng: &mut Rng, cases: usize, m: usize) -> Result<Prop1Summary> {
    let mut s = Prop1Summary {
        cases,
        m,
        closed_form_ok: true,
        closed_form_max_rel: 0.0,
        linearity_max_rel: 0.0,
        sign_agree: 0,
        sign_total: 0,
    };
    for _ in 0..cases {
        let (arch, p, [xs, ys, us, uy], alpha) = random_meta_instance(rng)?;
        let one = verify_prop1(&p, &arch, (&xs, &ys), (&us, &uy), alpha, 1, 1e-4)?;
        s.closed_form_ok &=
            one.within_tolerance(Prop1Summary::CLOSED_FORM_REL, Prop1Summary::CLOSED_FORM_ABS);
        s.closed_form_max_rel = s.closed_form_max_rel.max(one.max_rel_deviation());
        let many = verify_prop1(&p, &arch, (&xs, &ys), (&us, &uy), alpha, m, 1e-4)?;
        for (fm, f1) in many.finite_diff.iter().zip(&one.finite_diff) {
            if f1.abs() > 1e-7 {
                let pred = m as f64 * f1;
                s.linearity_max_rel = s.linearity_max_rel.max((fm - pred).abs() / pred.abs());
            }
        }
        let (a, t) = many.sign_agreement();
        s.sign_agree += a;
        s.sign_total += t;
    }
    Ok(s)
}

/// Relative errors below this magnitude are measured against it instead of
/// the (tiny) gradient entries themselves; central differences carry an
/// absolute error around 1e-10 that would otherwise dominate.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub cases: usize,
    pub checked: usize,
    /// Coordinates whose ±eps perturbation flips a ReLU unit.
    pub excluded: usize,
    pub max_rel_err: f64,
}

/// Compares [`nn::grad_weighted_loss`] with central differences on `cases`
/// random networks up to `[5, 8, 4]`, random soft labels and random weights.
pub fn gradient_check_suite(rng: &mut Rng, cases: usize) -> Result<GradCheckReport> {
    let eps = 1e-5;
    let mut report = GradCheckReport {
        cases,
        ..Default::default()
    };
    for _ in 0..cases {
        let d = 1 + rng.below(5);
        let k = 2 + rng.below(3);
        let mut sizes = vec![d];
        if rng.below(4) != 0 {
            sizes.push(1 + rng.below(8));
        }
        sizes.push(k);
        let act = if rng.below(2) == 0 {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        let arch = MlpArch::new(sizes, act)?;
        let params = nn::init_params(&arch, rng);
        let b = 1 + rng.below(6);
        let x = Mat64::from_vec(b, d, (0..b * d).map(|_| rng.normal()).collect())?;
        let mut y = Mat64::zeros(b, k);
        for r in 0..b {
            let z: Vec<f64> = (0..k).map(|_| 2.0 * rng.normal()).collect();
            y.row_mut(r).copy_from_slice(&tensor::softmax(&z));
        }
        let w: Vec<f64> = (0..b).map(|_| rng.uniform() * 2.0 - 0.5).collect();

        let (_, analytic) = nn::grad_weighted_loss(&params, &arch, &x, &y, &w)?;
        let loss = |p: &[f64]| -> f64 {
            nn::per_sample_losses(p, &arch, &x, &y)
                .map(|l| l.iter().zip(&w).map(|(l, w)| l * w).sum())
                .unwrap_or(f64::NAN)
        };
        let pattern = |p: &[f64]| -> Result<Vec<bool>> {
            let cache = nn::forward_cache(p, &arch, &x)?;
            Ok(cache
                .hidden_preactivations()
                .flat_map(|m| m.as_slice().iter().map(|&z| z > 0.0).collect::<Vec<_>>())
                .collect())
        };
        let base = if act == Activation::Relu {
            Some(pattern(&params)?)
        } else {
            None
        };

        let mut p = params.clone().into_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + eps;
            let (fp, pat_p) = (loss(&p), base.as_ref().map(|_| pattern(&p)).transpose()?);
            p[i] = orig - eps;
            let (fm, pat_m) = (loss(&p), base.as_ref().map(|_| pattern(&p)).transpose()?);
            p[i] = orig;
            if let Some(b0) = &base {
                if pat_p.as_ref() != Some(b0) || pat_m.as_ref() != Some(b0) {
                    report.excluded += 1;
                    continue;
                }
            }
            let fd = (fp - fm) / (2.0 * eps);
            let a = analytic[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(GRAD_CHECK_FLOOR);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Monte-Carlo estimate of the gradient-noise ratio at the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionRatio {
    /// Mean of `||∇L_meta||²` over the draws.
    pub numerator: f64,
    /// `||∇ mean CE over all labeled data||²`, each labeled batch freshly mixed.
    pub denominator: f64,
    /// `None` when the denominator is below `1e-18`.
    pub ratio: Option<f64>,
    /// Per-draw `||∇L_meta||²`, in draw order.
    pub draws: Vec<f64>,
}

/// Estimates `E||∇L_meta(θ)||² / ||∇L_sup(θ)||²` with `n_mc` independent
/// batch draws. Draw `d` uses substream `(seed, "assumption", tag * 2^32 + d)`,
/// so the estimate does not depend on the thread count.
pub fn assumption_ratio(
    state: &TrainState,
    cfg: &TrainConfig,
    data: &SplitDataset,
    n_mc: usize,
    tag: u64,
) -> Result<AssumptionRatio> {
    if data.labeled.is_empty() {
        return Err(Error::Dataset("no labeled examples".into()));
    }
    let mode = cfg.method.weight_mode().unwrap_or(WeightMode::Meta);
    let labeler = state.labeler(&cfg.flags);
    let draws: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|d| -> Result<f64> {
            let mut rng = Rng::substream(cfg.seed, "assumption", (tag << 32) + d as u64);
            let x: Vec<LabeledExample> =
                sample_indices(data.labeled.len(), cfg.labeled_batch, &mut rng)
                    .into_iter()
                    .map(|i| data.labeled[i].clone())
                    .collect();
            let u: Vec<Vec<f64>> = if data.unlabeled.is_empty() {
                Vec::new()
            } else {
                sample_indices(data.unlabeled.len(), cfg.unlabeled_batch, &mut rng)
                    .into_iter()
                    .map(|i| data.unlabeled[i].clone())
                    .collect()
            };
            let step = meta_step(
                &state.student,
                labeler,
                &state.arch,
                cfg,
                mode,
                &x,
                &u,
                cfg.alpha0,
                &mut rng,
            )?;
            Ok(tensor::norm_sq(&step.grad))
        })
        .collect::<Result<_>>()?;
    let numerator = if draws.is_empty() {
        0.0
    } else {
        draws.iter().sum::<f64>() / draws.len() as f64
    };

    let mut rng = Rng::substream(cfg.seed, "assumption-denominator", tag);
    let order = rng.permutation(data.labeled.len());
    let mut grad = ParamVector::zeros(state.student.len());
    for chunk in order.chunks(cfg.labeled_batch) {
        let x: Vec<LabeledExample> = chunk.iter().map(|&i| data.labeled[i].clone()).collect();
        let batch = if cfg.flags.mix_labeled() {
            let lam = rng.beta(cfg.beta)?;
            make_labeled_batch_with_lambda(&x, lam, &mut rng)?
        } else {
            unmixed_labeled_batch(&x)
        };
        let ones = vec![1.0; batch.len()];
        let (_, g) = nn::grad_weighted_loss(
            &state.student,
            &state.arch,
            &batch.inputs(),
            &batch.labels(),
            &ones,
        )?;
        tensor::axpy(1.0, &g, &mut grad);
    }
    tensor::scale(1.0 / data.labeled.len() as f64, &mut grad);
    let denominator = tensor::norm_sq(&grad);
    Ok(AssumptionRatio {
        numerator,
        denominator,
        ratio: (denominator >= 1e-18).then(|| numerator / denominator),
        draws,
    })
}

/// `size` indices from successive shuffles of `0..n`.
fn sample_indices(n: usize, size: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let perm = rng.permutation(n);
        out.extend(perm.into_iter().take(size - out.len()));
    }
    out
}

/// Selection outcomes for unlabeled-origin samples, judged against the
/// held-back true labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelectionCounts {
    pub selected: usize,
    pub selected_correct: usize,
    pub rejected: usize,
    pub rejected_correct: usize,
}

impl SelectionCounts {
    /// Share of selected samples whose pseudo label is correct.
    pub fn precision(&self) -> Option<f64> {
        (self.selected > 0).then(|| self.selected_correct as f64 / self.selected as f64)
    }

    /// The same share among rejected samples, for comparison.
    pub fn rejected_precision(&self) -> Option<f64> {
        (self.rejected > 0).then(|| self.rejected_correct as f64 / self.rejected as f64)
    }
}

impl AddAssign for SelectionCounts {
    fn add_assign(&mut self, o: Self) {
        self.selected += o.selected;
        self.selected_correct += o.selected_correct;
        self.rejected += o.rejected;
        self.rejected_correct += o.rejected_correct;
    }
}

/// Tallies the mixed samples whose primary component is unlabeled example
/// `i`; its pseudo label is counted correct when `pseudo_classes[i]` equals
/// `shadow[i]`. Without shadow labels nothing is counted.
pub fn selection_counts(
    weights: &WeightVector,
    origins: &[Origin],
    shadow: Option<&[usize]>,
    pseudo_classes: &[usize],
) -> SelectionCounts {
    let mut c = SelectionCounts::default();
    let Some(shadow) = shadow else { return c };
    for (&w, o) in weights.w.iter().zip(origins) {
        let Source::Unlabeled(i) = o.primary else {
            continue;
        };
        let (Some(&truth), Some(&guess)) = (shadow.get(i), pseudo_classes.get(i)) else {
            continue;
        };
        let correct = usize::from(truth == guess);
        if w > 0.0 {
            c.selected += 1;
            c.selected_correct += correct;
        } else {
            c.rejected += 1;
            c.rejected_correct += correct;
        }
    }
    c
}

/// Precision of the selection rule; `None` when no unlabeled-origin sample
/// was selected or there are no shadow labels.
pub fn selection_precision(
    weights: &WeightVector,
    origins: &[Origin],
    shadow: Option<&[usize]>,
    pseudo_classes: &[usize],
) -> Option<f64> {
    selection_counts(weights, origins, shadow, pseudo_classes).precision()
}
