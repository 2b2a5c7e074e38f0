//! Exponential-moving-average teacher and pseudo-label generation.

use crate::error::{Error, Result};
use crate::nn::{self, MlpArch, ParamVector};
use crate::tensor::{self, Mat64};

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherState {
    pub params: ParamVector,
    pub decay: f64,
}

impl TeacherState {
    /// Starts as an exact copy of the student.
    pub fn new(student: &ParamVector, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidHyperparameter(format!(
                "EMA decay must lie in [0, 1], got {decay}"
            )));
        }
        Ok(TeacherState {
            params: student.clone(),
            decay,
        })
    }

    /// `teacher <- decay * teacher + (1 - decay) * student`, no bias correction.
    pub fn update(&mut self, student: &[f64]) -> Result<()> {
        if student.len() != self.params.len() {
            return Err(Error::shape(format!(
                "teacher has {} parameters, student {}",
                self.params.len(),
                student.len()
            )));
        }
        let d = self.decay;
        for (t, &s) in self.params.iter_mut().zip(student) {
            *t = d * *t + (1.0 - d) * s;
        }
        Ok(())
    }
}

/// Functional form of [`TeacherState::update`].
pub fn ema_update(teacher: &TeacherState, student: &[f64]) -> Result<TeacherState> {
    let mut next = teacher.clone();
    next.update(student)?;
    Ok(next)
}

/// Soft labels predicted by `params` for each row of `inputs`; with
/// `one_hot` set, each row is replaced by its argmax (lowest index on ties).
pub fn pseudo_labels(
    params: &[f64],
    arch: &MlpArch,
    inputs: &Mat64,
    one_hot: bool,
) -> Result<Mat64> {
    let mut probs = nn::forward(params, arch, inputs)?;
    if one_hot {
        for r in 0..probs.rows() {
            harden(probs.row_mut(r));
        }
    }
    Ok(probs)
}

/// Single-example form of [`pseudo_labels`].
pub fn pseudo_label(
    teacher: &TeacherState,
    arch: &MlpArch,
    u: &[f64],
    one_hot: bool,
) -> Result<Vec<f64>> {
    let m = Mat64::from_rows(&[u])?;
    Ok(pseudo_labels(&teacher.params, arch, &m, one_hot)?.into_vec())
}

pub(crate) fn harden(row: &mut [f64]) {
    let k = tensor::argmax(row);
    row.iter_mut().for_each(|v| *v = 0.0);
    row[k] = 1.0;
}
