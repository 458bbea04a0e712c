//! Teacher-derived spatial weighting of student features.
//!
//! `channel_sum` collapses a teacher tap to one map per sample (optionally
//! over absolute values), `pool_combine` blends a 3x3 same-size average pool
//! with a 3x3 max pool of that map, and `apply_weighting` modulates a student
//! tap by `1 + W_hat`, where `W_hat` is the map rescaled to unit mean
//! magnitude per sample. Average pooling divides by the in-bounds window
//! size; max pooling ignores out-of-bounds positions, which is the same as
//! replicating edge values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const POOL_KERNEL: usize = 3;

/// Which student tensor the weighting modulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NdamTarget {
    /// The tap after projection onto the teacher's shape.
    #[default]
    Projected,
    /// The raw student tap; its spatial size must match the teacher's.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdamConfig {
    pub alpha_pool: f64,
    pub beta_pool: f64,
    pub use_abs: bool,
    #[serde(default)]
    pub apply_to: NdamTarget,
}

impl Default for NdamConfig {
    fn default() -> Self {
        NdamConfig { alpha_pool: 0.25, beta_pool: 0.75, use_abs: true, apply_to: NdamTarget::Projected }
    }
}

impl NdamConfig {
    pub const DISABLED: NdamConfig =
        NdamConfig { alpha_pool: 0.0, beta_pool: 0.0, use_abs: false, apply_to: NdamTarget::Projected };

    pub fn new(alpha_pool: f64, beta_pool: f64, use_abs: bool) -> Self {
        NdamConfig { alpha_pool, beta_pool, use_abs, apply_to: NdamTarget::Projected }
    }

    pub fn is_disabled(&self) -> bool {
        self.alpha_pool == 0.0 && self.beta_pool == 0.0
    }
}

#[derive(Debug, Clone)]
pub struct AttentionWeight {
    /// `[N, 1, H, W]`.
    pub map: Tensor,
    pub alpha_pool: f64,
    pub beta_pool: f64,
    pub use_abs: bool,
}

impl AttentionWeight {
    /// Builds the weight map from a teacher tap, which is detached first.
    pub fn from_teacher(teacher_tap: &Tensor, config: &NdamConfig) -> Result<Self> {
        let fsum = channel_sum(&teacher_tap.detach(), config.use_abs)?;
        Ok(AttentionWeight {
            map: pool_combine(&fsum, config.alpha_pool, config.beta_pool)?,
            alpha_pool: config.alpha_pool,
            beta_pool: config.beta_pool,
            use_abs: config.use_abs,
        })
    }

    pub fn is_disabled(&self) -> bool {
        self.alpha_pool == 0.0 && self.beta_pool == 0.0
    }

    /// The map divided by its per-sample mean magnitude; all-zero maps stay
    /// zero.
    pub fn normalized(&self) -> Result<Tensor> {
        let &[n, _, h, w] = self.map.shape() else {
            return Err(Error::dim("attention_weight", format!("expected [N,1,H,W], got {:?}", self.map.shape())));
        };
        let mut out = self.map.values().to_vec();
        for plane in out.chunks_mut(h * w) {
            let mean = plane.iter().map(|v| v.abs()).sum::<f64>() / (h * w) as f64;
            if mean > 0.0 {
                plane.iter_mut().for_each(|v| *v /= mean);
            }
        }
        Tensor::from_vec(vec![n, 1, h, w], out)
    }
}

/// Per-position sum over channels of `|T_c|` (or `T_c` with `use_abs` off).
pub fn channel_sum(t: &Tensor, use_abs: bool) -> Result<Tensor> {
    if t.shape().len() != 4 {
        return Err(Error::dim("channel_sum", format!("expected [N,C,H,W], got {:?}", t.shape())));
    }
    let src = if use_abs { t.abs() } else { t.clone() };
    src.sum_axis(1)
}

/// `alpha * avgpool(fsum) + beta * maxpool(fsum)`, 3x3 windows, stride 1,
/// output the same spatial size as the input.
pub fn pool_combine(fsum: &Tensor, alpha_pool: f64, beta_pool: f64) -> Result<Tensor> {
    let pad = POOL_KERNEL / 2;
    let avg = fsum.avg_pool2d(POOL_KERNEL, 1, pad)?;
    let max = fsum.max_pool2d(POOL_KERNEL, 1, pad)?;
    avg.mul_scalar(alpha_pool).add(&max.mul_scalar(beta_pool))
}

/// `student_tap * (1 + W_hat)` broadcast over channels, or the input itself
/// when the weighting is disabled.
pub fn apply_weighting(student_tap: &Tensor, weight: &AttentionWeight) -> Result<Tensor> {
    let (s, m) = (student_tap.shape(), weight.map.shape());
    if s.len() != 4 || m.len() != 4 || s[0] != m[0] || s[2..] != m[2..] {
        return Err(Error::dim(
            "apply_weighting",
            format!("student {s:?} vs attention map {m:?} (batch and spatial axes must match)"),
        ));
    }
    if weight.is_disabled() {
        return Ok(student_tap.clone());
    }
    let scale = weight.normalized()?.add_scalar(1.0);
    student_tap.mul(&scale)
}
