//! Separation-decoupling: a student split into gradient-isolated local blocks.
//!
//! A [`PartitionPlan`] names the units after which the forward value is
//! detached and the units whose (projected) outputs are aligned to teacher
//! taps. Each resulting [`LocalBlock`] owns its parameters, its projectors and
//! an independent momentum buffer, and is trained only by the loss terms that
//! fall inside it: feature losses at its alignment units, plus the hard and
//! attention losses when it is the terminal block.
//!
//! A training step walks the blocks in forward order and backpropagates each
//! block's loss as soon as its forward is complete, so only one block's saved
//! activations are alive at a time. Truncation at the boundaries makes the
//! result identical to running every block backward after a full forward.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{attention_loss, feature_loss, hard_loss, weighted_sum, LossWeights};
use crate::models::{project_features, NetSpec, Projector, TapNet};
use crate::ndam::{apply_weighting, AttentionWeight, NdamConfig, NdamTarget};
use crate::optim::{Sgd, SgdConfig};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    /// Units after which the forward value is detached.
    pub detach_after: Vec<usize>,
    /// Units whose outputs receive a feature-alignment loss.
    pub align_at: Vec<usize>,
    #[serde(default = "yes")]
    pub terminal_hard: bool,
    #[serde(default = "yes")]
    pub terminal_attention: bool,
    /// Whether an alignment unit inside the terminal block contributes a
    /// feature loss alongside the hard and attention terms.
    #[serde(default = "yes")]
    pub terminal_feature: bool,
}

fn yes() -> bool {
    true
}

impl PartitionPlan {
    pub fn new(detach_after: Vec<usize>, align_at: Vec<usize>) -> Self {
        PartitionPlan { detach_after, align_at, terminal_hard: true, terminal_attention: true, terminal_feature: true }
    }

    /// One block, no alignment: plain end-to-end training.
    pub fn end_to_end() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    /// Aligns at `locations` and, when `detach` is set, cuts the gradient
    /// after every location except one at the final unit.
    pub fn from_locations(locations: &[usize], detach: bool, depth: usize) -> Self {
        let cuts = if detach { locations.iter().copied().filter(|&l| l < depth).collect() } else { Vec::new() };
        Self::new(cuts, locations.to_vec())
    }

    pub fn validate(&self, depth: usize) -> Result<()> {
        let increasing = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&self.detach_after) {
            return Err(Error::Config(format!("detach_after must be strictly increasing: {:?}", self.detach_after)));
        }
        if !increasing(&self.align_at) {
            return Err(Error::Config(format!("align_at must be strictly increasing: {:?}", self.align_at)));
        }
        if let Some(&d) = self.detach_after.iter().find(|&&d| d == 0 || d >= depth) {
            let why = if d == depth { " (detaching the final unit would orphan the classifier)" } else { "" };
            return Err(Error::Config(format!("detach index {d} outside [1, {depth}){why}")));
        }
        if let Some(&a) = self.align_at.iter().find(|&&a| a == 0 || a > depth) {
            return Err(Error::Config(format!("align index {a} outside [1, {depth}]")));
        }
        Ok(())
    }

    /// Unit ranges of the blocks, in order.
    pub fn block_ranges(&self, depth: usize) -> Vec<RangeInclusive<usize>> {
        let mut start = 1;
        let mut out = Vec::with_capacity(self.detach_after.len() + 1);
        for &d in &self.detach_after {
            out.push(start..=d);
            start = d + 1;
        }
        out.push(start..=depth);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMode {
    Standard,
    ForwardShifted,
}

/// Maps an equally spaced base alignment `[n, 2n, 3n]` to itself (standard)
/// or to `[1, n + 1, 3n]` (forward-shifted).
pub fn remap_alignment(base: &[usize], mode: AlignMode) -> Result<Vec<usize>> {
    let &[a, b, c] = base else {
        return Err(Error::Config(format!("alignment base must be [n, 2n, 3n], got {base:?}")));
    };
    if a == 0 || b != 2 * a || c != 3 * a {
        return Err(Error::Config(format!("alignment base must be [n, 2n, 3n], got {base:?}")));
    }
    Ok(match mode {
        AlignMode::Standard => base.to_vec(),
        AlignMode::ForwardShifted => vec![1, a + 1, c],
    })
}

/// Teacher tap aligned with student unit `l`: `ceil(l * D_T / D_S)`.
pub fn teacher_index(l: usize, student_depth: usize, teacher_depth: usize) -> usize {
    (l * teacher_depth).div_ceil(student_depth)
}

#[derive(Debug, Clone)]
pub struct LocalBlock {
    pub index: usize,
    /// Feature units of the block; the terminal block also owns the head.
    pub units: RangeInclusive<usize>,
    pub align_at: Vec<usize>,
    pub terminal: bool,
    pub optimizer: Sgd,
}

impl LocalBlock {
    /// Units whose parameters this block owns.
    pub fn owned_units(&self, depth: usize) -> RangeInclusive<usize> {
        if self.terminal {
            *self.units.start()..=depth + 2
        } else {
            self.units.clone()
        }
    }
}

/// Splits a student of the given depth into local blocks. Every non-terminal
/// block must contain at least one alignment unit, otherwise nothing would
/// ever train it.
pub fn partition(depth: usize, plan: &PartitionPlan, sgd: SgdConfig) -> Result<Vec<LocalBlock>> {
    plan.validate(depth)?;
    let ranges = plan.block_ranges(depth);
    let last = ranges.len() - 1;
    ranges
        .into_iter()
        .enumerate()
        .map(|(index, units)| {
            let align_at: Vec<usize> = plan.align_at.iter().copied().filter(|a| units.contains(a)).collect();
            let terminal = index == last;
            if !terminal && align_at.is_empty() {
                return Err(Error::Config(format!(
                    "block {index} (units {}..={}) has no alignment unit and would receive no gradient",
                    units.start(),
                    units.end()
                )));
            }
            Ok(LocalBlock { index, units, align_at, terminal, optimizer: Sgd::new(sgd) })
        })
        .collect()
}

/// Teacher outputs for one batch, computed without a tape.
#[derive(Debug, Clone)]
pub struct TeacherTargets {
    pub logits: Tensor,
    pub taps: BTreeMap<usize, Tensor>,
}

impl TeacherTargets {
    /// Runs the teacher on `batch` with no tape and keeps the listed taps.
    pub fn compute(teacher: &TapNet, batch: &Tensor, taps: &[usize]) -> Result<Self> {
        teacher.check_batch(batch)?;
        let mut h = batch.detach();
        let mut out = BTreeMap::new();
        for u in 1..=teacher.depth() {
            h = teacher.unit_forward(u, &h, None)?;
            if taps.contains(&u) {
                out.insert(u, h.clone());
            }
        }
        let logits = teacher.head(&h, None)?;
        Ok(TeacherTargets { logits, taps: out })
    }

    pub fn tap(&self, index: usize) -> Result<&Tensor> {
        self.taps
            .get(&index)
            .ok_or_else(|| Error::Contract(format!("teacher tap {index} was not computed")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum TermKind {
    Hard,
    Soft,
    Attention,
    Feature(usize),
}

impl std::fmt::Display for TermKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TermKind::Hard => write!(f, "hard"),
            TermKind::Soft => write!(f, "soft"),
            TermKind::Attention => write!(f, "attention"),
            TermKind::Feature(l) => write!(f, "feature@{l}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossTerm {
    pub kind: TermKind,
    pub weight: f64,
    pub value: Tensor,
}

/// Weighted sum of terms, in order.
pub fn combine(terms: &[LossTerm]) -> Result<Tensor> {
    let pairs: Vec<(f64, &Tensor)> = terms.iter().map(|t| (t.weight, &t.value)).collect();
    weighted_sum(&pairs)
}

/// Everything the block-local loss needs about the surrounding distillation
/// setup.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs<'a> {
    pub batch: &'a Tensor,
    pub labels: &'a [usize],
    pub teacher: &'a TeacherTargets,
    pub weights: &'a LossWeights,
    /// `None` skips the weighting code path entirely.
    pub ndam: Option<&'a NdamConfig>,
}

/// Projected, optionally weighted, student tap at alignment unit `l`.
pub fn aligned_student_tap(
    student_tap: &Tensor,
    teacher_tap: &Tensor,
    projector: Option<&Projector>,
    ndam: Option<&NdamConfig>,
    tape: Option<&Tape>,
) -> Result<Tensor> {
    let weight = ndam.map(|cfg| AttentionWeight::from_teacher(teacher_tap, cfg)).transpose()?;
    let raw_target = ndam.is_some_and(|c| c.apply_to == NdamTarget::Raw);
    let mut s = student_tap.clone();
    if let (Some(w), true) = (&weight, raw_target) {
        s = apply_weighting(&s, w)?;
    }
    s = project_features(projector, &s, teacher_tap, tape)?;
    if let (Some(w), false) = (&weight, raw_target) {
        s = apply_weighting(&s, w)?;
    }
    Ok(s)
}

/// Output of one block's forward pass and its local loss terms.
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub output: Tensor,
    pub terms: Vec<LossTerm>,
    /// Logits, present for the terminal block.
    pub logits: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub block_losses: Vec<f64>,
    pub terms: Vec<(TermKind, f64)>,
    /// Detached logits of the step's forward pass.
    pub logits: Tensor,
    pub peak_retained: usize,
}

/// A student trained block-locally against a frozen teacher.
#[derive(Debug, Clone)]
pub struct Distiller {
    pub student: TapNet,
    pub projectors: BTreeMap<usize, Projector>,
    pub blocks: Vec<LocalBlock>,
    plan: PartitionPlan,
    teacher_depth: usize,
    teacher_taps: BTreeMap<usize, usize>,
}

impl Distiller {
    /// Builds blocks and one projector per alignment unit, each projector
    /// seeded from `seed` and the unit index.
    pub fn new(student: TapNet, teacher: &NetSpec, plan: PartitionPlan, sgd: SgdConfig, seed: u64) -> Result<Self> {
        let ds = student.depth();
        let blocks = partition(ds, &plan, sgd)?;
        let mut projectors = BTreeMap::new();
        let mut teacher_taps = BTreeMap::new();
        for &l in &plan.align_at {
            let t = teacher_index(l, ds, teacher.depth);
            teacher_taps.insert(l, t);
            let p = Projector::new(
                format!("proj{l}.weight"),
                student.spec().tap_shape(l),
                teacher.tap_shape(t),
                seed.wrapping_mul(1_000_003).wrapping_add(l as u64),
            )?;
            projectors.insert(l, p);
        }
        let mut d = Distiller { student, projectors, blocks, plan, teacher_depth: teacher.depth, teacher_taps };
        for b in 0..d.blocks.len() {
            let params: Vec<(String, Tensor)> =
                d.block_params(b).map(|(n, t)| (n.to_string(), t.clone())).collect();
            d.blocks[b].optimizer.init(params.iter().map(|(n, t)| (n.as_str(), t)));
        }
        Ok(d)
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    /// Teacher tap indices the distiller reads.
    pub fn required_teacher_taps(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.teacher_taps.values().copied().collect();
        v.push(self.teacher_depth);
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn teacher_tap_for(&self, l: usize) -> Option<usize> {
        self.teacher_taps.get(&l).copied()
    }

    /// Parameters owned by block `b`: its units (plus the head when terminal)
    /// and the projectors of its alignment units.
    pub fn block_params(&self, b: usize) -> impl Iterator<Item = (&str, &Tensor)> {
        let block = &self.blocks[b];
        let owned = block.owned_units(self.student.depth());
        self.student.params_in(owned).chain(
            block
                .align_at
                .iter()
                .filter_map(|l| self.projectors.get(l))
                .flat_map(|p| p.params()),
        )
    }

    fn feature_enabled(&self, block: &LocalBlock, l: usize) -> bool {
        !block.terminal || l != self.student.depth() || self.plan.terminal_feature
    }

    /// Forward pass of block `b` from `input`. Units past the last unit that
    /// feeds a loss run untracked, so they leave nothing on the tape.
    pub fn run_block(&self, b: usize, input: &Tensor, inputs: &StepInputs<'_>, tape: &Tape) -> Result<BlockOutput> {
        let block = &self.blocks[b];
        let weights = inputs.weights;
        let features_on = weights.beta != 0.0;
        let loss_units: Vec<usize> = if features_on {
            block.align_at.iter().copied().filter(|&l| self.feature_enabled(block, l)).collect()
        } else {
            Vec::new()
        };
        let tracked_until = if block.terminal { *block.units.end() } else { loss_units.last().copied().unwrap_or(0) };

        let mut h = input.clone();
        let mut feature_terms = Vec::new();
        for u in block.units.clone() {
            h = if u <= tracked_until {
                self.student.unit_forward(u, &h, Some(tape))?
            } else {
                self.student.unit_forward(u, &h.detach(), None)?
            };
            if loss_units.contains(&u) {
                let t_idx = self.teacher_taps[&u];
                let teacher_tap = inputs.teacher.tap(t_idx)?;
                let s = aligned_student_tap(&h, teacher_tap, self.projectors.get(&u), inputs.ndam, Some(tape))
                    .map_err(|e| block_error(b, u, e))?;
                let value = feature_loss(teacher_tap, &s).map_err(|e| block_error(b, u, e))?;
                feature_terms.push(LossTerm { kind: TermKind::Feature(u), weight: weights.beta, value });
            }
        }

        let mut terms = Vec::new();
        let mut logits = None;
        if block.terminal {
            let use_hard = self.plan.terminal_hard && weights.alpha != 0.0;
            let use_att = self.plan.terminal_attention && weights.alpha != 1.0;
            let out = if use_hard {
                self.student.head(&h, Some(tape))?
            } else {
                self.student.head(&h.detach(), None)?
            };
            if use_hard {
                terms.push(LossTerm { kind: TermKind::Hard, weight: weights.alpha, value: hard_loss(&out, inputs.labels)? });
            }
            if use_att {
                let t = inputs.teacher.tap(self.teacher_depth)?;
                let value = attention_loss(t, &h).map_err(|e| block_error(b, self.student.depth(), e))?;
                terms.push(LossTerm { kind: TermKind::Attention, weight: 1.0 - weights.alpha, value });
            }
            logits = Some(out);
        }
        terms.extend(feature_terms);
        Ok(BlockOutput { output: h, terms, logits })
    }

    /// Full partitioned forward with every block's loss terms left on `tape`
    /// (no backward). Used for inspection and gradient tests.
    pub fn block_losses(&self, inputs: &StepInputs<'_>, tape: &Tape) -> Result<Vec<BlockOutput>> {
        self.student.check_batch(inputs.batch)?;
        let mut outs: Vec<BlockOutput> = Vec::with_capacity(self.blocks.len());
        for b in 0..self.blocks.len() {
            let input = match outs.last() {
                Some(prev) => prev.output.detach(),
                None => inputs.batch.clone(),
            };
            outs.push(self.run_block(b, &input, inputs, tape)?);
        }
        Ok(outs)
    }

    /// Logits of the partitioned forward pass (no losses).
    pub fn partitioned_logits(&self, batch: &Tensor, tape: &Tape) -> Result<Tensor> {
        self.student.check_batch(batch)?;
        let mut h = batch.clone();
        for block in &self.blocks {
            h = self.student.forward_range(block.units.clone(), &h.detach(), Some(tape))?;
        }
        self.student.head(&h, Some(tape))
    }

    /// Computes block-local gradients only, without stepping: block by block,
    /// forward then immediate backward. Returns the report; gradients are
    /// left in the parameters.
    pub fn compute_gradients(&self, inputs: &StepInputs<'_>, tape: &Tape) -> Result<StepReport> {
        self.student.check_batch(inputs.batch)?;
        let mut block_losses = Vec::with_capacity(self.blocks.len());
        let mut terms = Vec::new();
        let mut input = inputs.batch.clone();
        let mut logits = None;
        for b in 0..self.blocks.len() {
            let out = self.run_block(b, &input, inputs, tape)?;
            if out.terms.is_empty() {
                block_losses.push(0.0);
            } else {
                let loss = combine(&out.terms)?;
                block_losses.push(loss.item());
                if loss.is_tracked() {
                    loss.backward()?;
                }
            }
            terms.extend(out.terms.iter().map(|t| (t.kind.clone(), t.value.item())));
            if let Some(l) = out.logits {
                logits = Some(l.detach());
            }
            input = out.output.detach();
        }
        Ok(StepReport {
            block_losses,
            terms,
            logits: logits.expect("terminal block produces logits"),
            peak_retained: tape.peak_retained(),
        })
    }

    /// One local-learning step: block-local backward passes, then every block
    /// applies its own momentum update at learning rate `lr`.
    pub fn sdm_step(&mut self, inputs: &StepInputs<'_>, lr: f64) -> Result<StepReport> {
        let tape = Tape::new();
        let report = self.compute_gradients(inputs, &tape)?;
        self.apply_updates(lr);
        Ok(report)
    }

    fn apply_updates(&mut self, lr: f64) {
        let depth = self.student.depth();
        let Distiller { student, projectors, blocks, .. } = self;
        for block in blocks.iter_mut() {
            let owned = block.owned_units(depth);
            let mut params: Vec<(&str, &mut Tensor)> = student
                .params_mut_in(owned)
                .collect();
            for (l, p) in projectors.iter_mut() {
                if block.align_at.contains(l) {
                    params.extend(p.params_mut());
                }
            }
            block.optimizer.step(params, lr);
        }
    }

    pub fn zero_grad(&self) {
        self.student.zero_grad();
        self.projectors.values().for_each(|p| p.params().for_each(|(_, t)| t.zero_grad()));
    }
}

fn block_error(block: usize, unit: usize, e: Error) -> Error {
    match e {
        Error::Dimension { op, detail } => Error::Dimension { op, detail: format!("block {block}, tap {unit}: {detail}") },
        other => other,
    }
}
