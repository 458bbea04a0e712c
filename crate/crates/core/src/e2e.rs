//! Conventional end-to-end training steps: one loss, one backward pass
//! through the whole student.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{attention_loss, feature_loss, hard_loss, soft_loss, weighted_sum, LossWeights};
use crate::models::{NetSpec, Projector, TapNet};
use crate::optim::{Sgd, SgdConfig};
use crate::sdm::{aligned_student_tap, teacher_index, StepReport, TeacherTargets, TermKind};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Cross-entropy only.
    Hard,
    /// `alpha * hard + (1 - alpha) * soft + beta * sum(features)`.
    Traditional,
    /// `alpha * hard + (1 - alpha) * attention`.
    Attention,
}

#[derive(Debug, Clone)]
pub struct EndToEnd {
    pub student: TapNet,
    pub projectors: BTreeMap<usize, Projector>,
    pub objective: Objective,
    align_at: Vec<usize>,
    teacher_depth: usize,
    teacher_taps: BTreeMap<usize, usize>,
    optimizer: Sgd,
}

impl EndToEnd {
    /// `align_at` is only read by [`Objective::Traditional`]. Projectors are
    /// seeded exactly as the local-block trainer seeds them.
    pub fn new(
        student: TapNet,
        teacher: Option<&NetSpec>,
        objective: Objective,
        align_at: &[usize],
        sgd: SgdConfig,
        seed: u64,
    ) -> Result<Self> {
        let ds = student.depth();
        let mut projectors = BTreeMap::new();
        let mut teacher_taps = BTreeMap::new();
        let mut align = Vec::new();
        let teacher_depth = teacher.map_or(0, |t| t.depth);
        if let (Objective::Traditional, Some(t)) = (objective, teacher) {
            for &l in align_at {
                let ti = teacher_index(l, ds, t.depth);
                teacher_taps.insert(l, ti);
                let p = Projector::new(
                    format!("proj{l}.weight"),
                    student.spec().tap_shape(l),
                    t.tap_shape(ti),
                    seed.wrapping_mul(1_000_003).wrapping_add(l as u64),
                )?;
                projectors.insert(l, p);
                align.push(l);
            }
        }
        let mut optimizer = Sgd::new(sgd);
        optimizer.init(student.params().chain(projectors.values().flat_map(|p| p.params())));
        Ok(EndToEnd { student, projectors, objective, align_at: align, teacher_depth, teacher_taps, optimizer })
    }

    /// Teacher tap indices the objective reads.
    pub fn required_teacher_taps(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.teacher_taps.values().copied().collect();
        if self.objective == Objective::Attention {
            v.push(self.teacher_depth);
        }
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Builds the loss on `tape` and returns it with its named terms.
    pub fn loss(
        &self,
        batch: &Tensor,
        labels: &[usize],
        teacher: Option<&TeacherTargets>,
        weights: &LossWeights,
        tape: &Tape,
    ) -> Result<(Tensor, Tensor, Vec<(TermKind, Tensor, f64)>)> {
        self.student.check_batch(batch)?;
        let ds = self.student.depth();
        let mut h = batch.clone();
        let mut features = Vec::new();
        let need_features = self.objective == Objective::Traditional && weights.beta != 0.0;
        for u in 1..=ds {
            h = self.student.unit_forward(u, &h, Some(tape))?;
            if need_features && self.align_at.contains(&u) {
                let t = teacher_required(teacher)?.tap(self.teacher_taps[&u])?;
                let s = aligned_student_tap(&h, t, self.projectors.get(&u), None, Some(tape))?;
                features.push((TermKind::Feature(u), feature_loss(t, &s)?));
            }
        }
        let logits = self.student.head(&h, Some(tape))?;
        let mut terms: Vec<(TermKind, Tensor, f64)> = Vec::new();
        match self.objective {
            Objective::Hard => terms.push((TermKind::Hard, hard_loss(&logits, labels)?, 1.0)),
            Objective::Traditional => {
                let t = teacher_required(teacher)?;
                if weights.alpha != 0.0 {
                    terms.push((TermKind::Hard, hard_loss(&logits, labels)?, weights.alpha));
                }
                if weights.alpha != 1.0 {
                    let soft = soft_loss(&logits, &t.logits, weights.temperature)?;
                    terms.push((TermKind::Soft, soft, 1.0 - weights.alpha));
                }
                terms.extend(features.into_iter().map(|(k, v)| (k, v, weights.beta)));
            }
            Objective::Attention => {
                let t = teacher_required(teacher)?;
                if weights.alpha != 0.0 {
                    terms.push((TermKind::Hard, hard_loss(&logits, labels)?, weights.alpha));
                }
                if weights.alpha != 1.0 {
                    let att = attention_loss(t.tap(self.teacher_depth)?, &h)?;
                    terms.push((TermKind::Attention, att, 1.0 - weights.alpha));
                }
            }
        }
        let pairs: Vec<(f64, &Tensor)> = terms.iter().map(|(_, v, w)| (*w, v)).collect();
        let loss = weighted_sum(&pairs)?;
        Ok((loss, logits, terms))
    }

    /// Forward, backward, and one momentum update at learning rate `lr`.
    pub fn step(
        &mut self,
        batch: &Tensor,
        labels: &[usize],
        teacher: Option<&TeacherTargets>,
        weights: &LossWeights,
        lr: f64,
    ) -> Result<StepReport> {
        let tape = Tape::new();
        let (loss, logits, terms) = self.loss(batch, labels, teacher, weights, &tape)?;
        let value = loss.item();
        let terms = terms.iter().map(|(k, v, _)| (k.clone(), v.item())).collect();
        let logits = logits.detach();
        if loss.is_tracked() {
            loss.backward()?;
        }
        let peak = tape.peak_retained();
        let EndToEnd { student, projectors, optimizer, .. } = self;
        let params = student.params_mut().chain(projectors.values_mut().flat_map(|p| p.params_mut()));
        optimizer.step(params, lr);
        Ok(StepReport { block_losses: vec![value], terms, logits, peak_retained: peak })
    }
}

fn teacher_required(t: Option<&TeacherTargets>) -> Result<&TeacherTargets> {
    t.ok_or_else(|| crate::Error::Config("objective needs teacher targets".into()))
}
