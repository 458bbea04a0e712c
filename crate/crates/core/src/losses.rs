//! Training objectives.
//!
//! All losses return single-element tensors. Teacher-side arguments are read
//! as constants: no gradient is ever routed into them.
//!
//! The attention loss is an attention-transfer surrogate: per-sample spatial
//! maps `a = sum_c tap_c^2`, L2-normalized, compared by squared distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Mix between the hard loss and the soft (or attention) loss.
    pub alpha: f64,
    /// Weight of the feature-alignment loss. The feature loss sums over every
    /// element of a sample, so it is large; the default keeps it comparable
    /// to the cross-entropy on small nets.
    pub beta: f64,
    /// Softening temperature of the soft loss.
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.5, beta: 0.01, temperature: 4.0 }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, temperature: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta, temperature };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

fn logits_dims(op: &'static str, logits: &Tensor) -> Result<(usize, usize)> {
    match *logits.shape() {
        [n, k] => Ok((n, k)),
        _ => Err(Error::dim(op, format!("expected [N,K] logits, got {:?}", logits.shape()))),
    }
}

/// Mean cross-entropy between logits and integer labels.
pub fn hard_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = logits_dims("hard_loss", logits)?;
    if labels.len() != n {
        return Err(Error::dim("hard_loss", format!("batch axis: {n} logits rows vs {} labels", labels.len())));
    }
    let mut onehot = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Contract(format!("label {y} at sample {i} outside [0, {k})")));
        }
        onehot[i * k + y] = 1.0;
    }
    let onehot = Tensor::from_vec(vec![n, k], onehot)?;
    Ok(logits.log_softmax().mul(&onehot)?.sum().mul_scalar(-1.0 / n as f64))
}

/// Batch-mean `KL(softmax(teacher/T) || softmax(student/T)) * T^2`.
pub fn soft_loss(student_logits: &Tensor, teacher_logits: &Tensor, temperature: f64) -> Result<Tensor> {
    let (n, _) = logits_dims("soft_loss", student_logits)?;
    if student_logits.shape() != teacher_logits.shape() {
        return Err(Error::dim(
            "soft_loss",
            format!("student {:?} vs teacher {:?}", student_logits.shape(), teacher_logits.shape()),
        ));
    }
    let teacher_log = teacher_logits.detach().div_scalar(temperature).log_softmax();
    let teacher_prob = Tensor::from_vec(
        teacher_log.shape().to_vec(),
        teacher_log.values().iter().map(|v| v.exp()).collect(),
    )?;
    let student_log = student_logits.div_scalar(temperature).log_softmax();
    let gap = teacher_log.sub(&student_log)?;
    Ok(teacher_prob.mul(&gap)?.sum().mul_scalar(temperature * temperature / n as f64))
}

/// `(1/N) sum_i ||teacher_i - student_i||^2`, the norm taken over every
/// feature element of sample `i`.
pub fn feature_loss(teacher_tap: &Tensor, student_tap: &Tensor) -> Result<Tensor> {
    if teacher_tap.shape() != student_tap.shape() {
        return Err(Error::dim(
            "feature_loss",
            format!("teacher {:?} vs student {:?}", teacher_tap.shape(), student_tap.shape()),
        ));
    }
    let n = teacher_tap.shape()[0];
    Ok(teacher_tap.sub(student_tap)?.square().sum().div_scalar(n as f64))
}

/// Per-sample L2-normalized spatial attention `sum_c x_c^2`, shape `[N, H*W]`.
pub fn attention_map(tap: &Tensor) -> Result<Tensor> {
    let &[n, _, h, w] = tap.shape() else {
        return Err(Error::dim("attention_map", format!("expected [N,C,H,W], got {:?}", tap.shape())));
    };
    let energy = tap.square().sum_axis(1)?.reshape(&[n, h * w])?;
    let norms = energy.square().sum_axis(1)?;
    if let Some(i) = norms.values().iter().position(|&v| v == 0.0) {
        return Err(Error::Contract(format!("degenerate attention: sample {i} has an all-zero map")));
    }
    energy.div(&norms.sqrt())
}

/// Batch-mean squared distance between normalized attention maps. Channel
/// counts may differ; batch and spatial axes must match.
pub fn attention_loss(teacher_tap: &Tensor, student_tap: &Tensor) -> Result<Tensor> {
    let (ts, ss) = (teacher_tap.shape(), student_tap.shape());
    if ts.len() != 4 || ss.len() != 4 {
        return Err(Error::dim("attention_loss", format!("expected [N,C,H,W] maps, got {ts:?} and {ss:?}")));
    }
    for (axis, name) in [(0, "batch"), (2, "height"), (3, "width")] {
        if ts[axis] != ss[axis] {
            return Err(Error::dim(
                "attention_loss",
                format!("{name} axis: teacher {} vs student {}", ts[axis], ss[axis]),
            ));
        }
    }
    let at = attention_map(&teacher_tap.detach())?;
    let as_ = attention_map(student_tap)?;
    Ok(at.sub(&as_)?.square().sum().div_scalar(ts[0] as f64))
}

/// Sums `weight * term` in order, omitting zero-weight terms entirely so a
/// disabled component leaves no trace in the graph.
pub fn weighted_sum(terms: &[(f64, &Tensor)]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for &(w, t) in terms {
        if w == 0.0 {
            continue;
        }
        let scaled = if w == 1.0 { t.clone() } else { t.mul_scalar(w) };
        total = Some(match total {
            Some(acc) => acc.add(&scaled)?,
            None => scaled,
        });
    }
    Ok(total.unwrap_or_else(|| Tensor::scalar(0.0)))
}

fn sum_terms(terms: &[Tensor]) -> Result<Option<Tensor>> {
    let mut acc: Option<Tensor> = None;
    for t in terms {
        acc = Some(match acc {
            Some(a) => a.add(t)?,
            None => t.clone(),
        });
    }
    Ok(acc)
}

/// `alpha * hard + (1 - alpha) * soft + beta * sum(features)`.
pub fn total_loss_traditional(
    weights: &LossWeights,
    hard: &Tensor,
    soft: &Tensor,
    feature_losses: &[Tensor],
) -> Result<Tensor> {
    let features = sum_terms(feature_losses)?;
    let mut terms = vec![(weights.alpha, hard), (1.0 - weights.alpha, soft)];
    if let Some(f) = features.as_ref() {
        terms.push((weights.beta, f));
    }
    weighted_sum(&terms)
}

/// `alpha * hard + (1 - alpha) * attention + beta * feature`, with `feature`
/// the single block-local alignment loss.
pub fn total_loss_lakd(weights: &LossWeights, hard: &Tensor, attention: &Tensor, feature: &Tensor) -> Result<Tensor> {
    weighted_sum(&[(weights.alpha, hard), (1.0 - weights.alpha, attention), (weights.beta, feature)])
}
