//! Classification and distillation losses for candidate training.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

/// Which teacher, if any, a candidate distills from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdMode {
    /// No distillation term.
    Nokd,
    /// The most recently selected subnetwork is the teacher.
    Ban,
    /// The whole previous ensemble (with its mixture weights) is the teacher.
    Akd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub mode: KdMode,
    /// Softmax temperature applied to both teacher and student.
    pub temperature: f64,
    /// Multiply the distillation term by `temperature^2`.
    pub scale_by_t_squared: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        Self {
            mode: KdMode::Nokd,
            temperature: 1.0,
            scale_by_t_squared: false,
        }
    }
}

impl KdConfig {
    pub fn new(mode: KdMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Invalid(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= classes) {
        Some(i) => Err(Error::Invalid(format!(
            "label {} at position {i} out of range for {classes} classes",
            labels[i]
        ))),
        None => Ok(()),
    }
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn classification_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    check_labels(labels, g.value(logits).cols())?;
    let lp = g.log_softmax(logits)?;
    let picked = g.pick(lp, labels)?;
    let m = g.mean(picked)?;
    g.scalar_scale(m, -1.0)
}

/// Mean over the batch of `-sum_c softmax(teacher/T)_c * log softmax(student/T)_c`.
///
/// The teacher enters as a constant, so gradients only reach the student.
pub fn soft_cross_entropy(g: &mut Graph, teacher: &Tensor, student: Var, temperature: f64) -> Result<Var> {
    let st = g.value(student);
    if st.shape() != teacher.shape() {
        return Err(Error::Shape {
            op: "soft_cross_entropy",
            left: teacher.shape().to_vec(),
            right: st.shape().to_vec(),
        });
    }
    let rows = st.rows();
    let target = crate::autograd::softmax_rows(&teacher.map(|v| v / temperature));
    let target = g.constant(target);
    let scaled = if temperature == 1.0 {
        student
    } else {
        g.scalar_scale(student, 1.0 / temperature)?
    };
    let lq = g.log_softmax(scaled)?;
    let prod = g.mul(target, lq)?;
    let total = g.sum(prod)?;
    g.scalar_scale(total, -1.0 / rows as f64)
}

/// Teacher logits for `batch` under `mode`, or `None` when no teacher
/// applies (NOKD, or an empty ensemble at the first iteration).
pub fn teacher_logits(mode: KdMode, ensemble: &Ensemble, batch: &Tensor) -> Result<Option<Tensor>> {
    match mode {
        KdMode::Nokd => Ok(None),
        _ if ensemble.is_empty() => {
            log::debug!("{mode:?} requested without a previous ensemble; distillation disabled");
            Ok(None)
        }
        KdMode::Ban => ensemble.members().last().map(|m| m.logits(batch)).transpose(),
        KdMode::Akd => ensemble.logits(batch).map(Some),
    }
}

/// Distillation term against precomputed teacher logits.
pub fn distillation_term(g: &mut Graph, kd: &KdConfig, teacher: Option<&Tensor>, student: Var) -> Result<Option<Var>> {
    let Some(teacher) = teacher else { return Ok(None) };
    if kd.mode == KdMode::Nokd {
        return Ok(None);
    }
    let loss = soft_cross_entropy(g, teacher, student, kd.temperature)?;
    if kd.scale_by_t_squared && kd.temperature != 1.0 {
        return g.scalar_scale(loss, kd.temperature * kd.temperature).map(Some);
    }
    Ok(Some(loss))
}

/// The distillation loss for a student against the previous ensemble.
/// `None` stands for an exact zero that adds nothing to the tape.
pub fn kd_loss(g: &mut Graph, kd: &KdConfig, prev: &Ensemble, student: Var, batch: &Tensor) -> Result<Option<Var>> {
    let teacher = teacher_logits(kd.mode, prev, batch)?;
    distillation_term(g, kd, teacher.as_ref(), student)
}

/// `classification_loss + lambda_kd * kd`.
pub fn candidate_objective(
    g: &mut Graph,
    student: Var,
    labels: &[usize],
    kd: Option<Var>,
    lambda_kd: f64,
) -> Result<Var> {
    if !(lambda_kd >= 0.0) {
        return Err(Error::Invalid(format!("lambda_kd must be >= 0, got {lambda_kd}")));
    }
    let ce = classification_loss(g, student, labels)?;
    match kd {
        Some(kd) if lambda_kd != 0.0 => {
            let term = if lambda_kd == 1.0 {
                kd
            } else {
                g.scalar_scale(kd, lambda_kd)?
            };
            g.add(ce, term)
        }
        _ => Ok(ce),
    }
}

/// Mean cross entropy and top-1 error of `logits` against `labels`,
/// computed directly on values.
pub fn evaluate_logits(logits: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
    if logits.rows() != labels.len() || labels.is_empty() {
        return Err(Error::Shape {
            op: "evaluate_logits",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    check_labels(labels, logits.cols())?;
    let mut loss = 0.0;
    let mut wrong = 0usize;
    let preds = logits.argmax_rows();
    for (r, (&y, &p)) in labels.iter().zip(&preds).enumerate() {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        wrong += usize::from(p != y);
    }
    let n = labels.len() as f64;
    Ok((loss / n, wrong as f64 / n))
}
