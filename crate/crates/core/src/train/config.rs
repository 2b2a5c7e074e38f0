use crate::error::{Error, Result};
use crate::meta::WeightMode;
use crate::nn::{Activation, MlpArch};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// `alpha0 / 2 * (1 + cos(pi * t / T))`
    Cosine,
    /// `alpha0 / (1 + t / tau)` with `tau = T / 10`
    InvT,
}

impl Schedule {
    pub fn name(self) -> &'static str {
        match self {
            Schedule::Cosine => "cosine",
            Schedule::InvT => "inv_t",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cosine" => Some(Schedule::Cosine),
            "inv_t" => Some(Schedule::InvT),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    MetaSemi,
    Supervised,
    SupervisedMixup,
    /// Every pseudo-labeled sample weighted 1.
    Const1,
    /// Samples with positive meta gradient weighted -1 instead of 0.
    Pm1,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::MetaSemi,
        Method::Supervised,
        Method::SupervisedMixup,
        Method::Const1,
        Method::Pm1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::MetaSemi => "meta_semi",
            Method::Supervised => "supervised",
            Method::SupervisedMixup => "supervised_mixup",
            Method::Const1 => "const1",
            Method::Pm1 => "pm1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Weight rule for the semi-supervised methods.
    pub fn weight_mode(self) -> Option<WeightMode> {
        match self {
            Method::MetaSemi => Some(WeightMode::Meta),
            Method::Const1 => Some(WeightMode::Const1),
            Method::Pm1 => Some(WeightMode::PlusMinusOne),
            Method::Supervised | Method::SupervisedMixup => None,
        }
    }
}

/// Ablation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Flags {
    /// Pseudo labels come from the student instead of the EMA teacher.
    pub no_ema: bool,
    /// Pseudo labels are hardened to their argmax.
    pub one_hot_pseudo: bool,
    pub mixup_labeled_only: bool,
    pub mixup_unlabeled_only: bool,
    pub no_mixup: bool,
    /// ±2 pixel random translation (image datasets only).
    pub augment_shift: bool,
}

impl Flags {
    pub const NAMES: [&'static str; 6] = [
        "no_ema",
        "one_hot_pseudo",
        "mixup_labeled_only",
        "mixup_unlabeled_only",
        "no_mixup",
        "augment_shift",
    ];

    pub fn get(&self, name: &str) -> Option<bool> {
        Some(match name {
            "no_ema" => self.no_ema,
            "one_hot_pseudo" => self.one_hot_pseudo,
            "mixup_labeled_only" => self.mixup_labeled_only,
            "mixup_unlabeled_only" => self.mixup_unlabeled_only,
            "no_mixup" => self.no_mixup,
            "augment_shift" => self.augment_shift,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, value: bool) -> bool {
        let slot = match name {
            "no_ema" => &mut self.no_ema,
            "one_hot_pseudo" => &mut self.one_hot_pseudo,
            "mixup_labeled_only" => &mut self.mixup_labeled_only,
            "mixup_unlabeled_only" => &mut self.mixup_unlabeled_only,
            "no_mixup" => &mut self.no_mixup,
            "augment_shift" => &mut self.augment_shift,
            _ => return false,
        };
        *slot = value;
        true
    }

    /// Whether Eq.-11-style mixing applies to the labeled stream.
    pub fn mix_labeled(&self) -> bool {
        !self.no_mixup && !self.mixup_unlabeled_only
    }

    /// Whether mixing applies to the concatenated labeled+unlabeled stream.
    pub fn mix_unlabeled(&self) -> bool {
        !self.no_mixup && !self.mixup_labeled_only
    }
}

/// Every hyper-parameter of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// MixUp `Beta(beta, beta)` parameter.
    pub beta: f64,
    /// Initial learning rate.
    pub alpha0: f64,
    pub epochs: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub ema_decay: f64,
    pub schedule: Schedule,
    pub method: Method,
    pub flags: Flags,
    pub consistency_coeff: f64,
    pub consistency_noise_std: f64,
    pub seed: u64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Monte-Carlo draws for the per-epoch gradient-noise ratio; 0 disables it.
    pub assumption_mc: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![32, 32],
            activation: Activation::Relu,
            beta: 0.5,
            alpha0: 0.1,
            epochs: 100,
            labeled_batch: 8,
            unlabeled_batch: 24,
            ema_decay: 0.999,
            schedule: Schedule::Cosine,
            method: Method::MetaSemi,
            flags: Flags::default(),
            consistency_coeff: 0.0,
            consistency_noise_std: 0.1,
            seed: 0,
            weight_decay: 1e-4,
            momentum: 0.9,
            assumption_mc: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidHyperparameter(m));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return bad(format!("alpha0 must be positive, got {}", self.alpha0));
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!(
                "ema_decay must lie in [0, 1], got {}",
                self.ema_decay
            ));
        }
        if [self.consistency_coeff, self.consistency_noise_std]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return bad("consistency coefficient and noise must be non-negative".into());
        }
        if self.weight_decay.is_nan()
            || self.weight_decay < 0.0
            || !(0.0..1.0).contains(&self.momentum)
        {
            return bad("weight_decay must be >= 0 and momentum in [0, 1)".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn arch(&self, input_dim: usize, num_classes: usize) -> Result<MlpArch> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(num_classes);
        MlpArch::new(sizes, self.activation)
    }
}
