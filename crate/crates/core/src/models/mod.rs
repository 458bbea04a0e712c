//! Small residual conv nets with per-unit feature taps.
//!
//! A net of depth `d` has `d` feature units followed by a two-unit head:
//!
//! | index       | kind          | output                          |
//! |-------------|---------------|---------------------------------|
//! | 1           | stem conv     | `[N, w, H, W]`                  |
//! | 2..=d       | residual / downsample, three stages | channels `w, 2w, 4w`, spatial `H, H/2, H/4` (ceil) |
//! | d+1         | global-pool   | `[N, 4w]` (relu, then spatial mean) |
//! | d+2         | classifier    | `[N, classes]`                  |
//!
//! The `d - 1` units after the stem are split into three stages of sizes
//! `ceil(t/3), round(t/3), floor(t/3)`; stages two and three open with a
//! stride-2 downsample unit `conv(relu(x))`. Residual units are
//! pre-activation blocks, `x + s * conv(relu(conv(relu(x))))` with a constant
//! branch scale `s`. The stem is a bare 3x3 conv and no unit ends in a relu,
//! so taps can be negative and a bias-free net never zeroes a whole sample.
//!
//! Taps expose unit outputs by index; `taps[l]` is exactly the tensor fed to
//! unit `l + 1`.

mod checkpoint;
mod projection;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use projection::{project_features, Projector, SpatialMap};

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Scale applied to the residual branch in place of batch statistics.
pub const RESIDUAL_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitKind {
    Stem,
    ResidualBlock,
    Downsample,
    GlobalPool,
    Classifier,
}

#[derive(Debug, Clone)]
pub struct LayerUnit {
    pub kind: UnitKind,
    pub index: usize,
    pub params: Vec<(String, Tensor)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub depth: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Expected `(height, width)` of input images.
    pub input_hw: (usize, usize),
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TapNet {
    spec: NetSpec,
    units: Vec<LayerUnit>,
    tap_indices: Vec<usize>,
    frozen: bool,
}

/// Channel count and downsampling of each feature unit.
fn trunk_layout(depth: usize, width: usize) -> Vec<(UnitKind, usize, usize)> {
    let t = depth - 1;
    let stages = [t.div_ceil(3), (t + 1) / 3, t / 3];
    let mut layout = vec![(UnitKind::Stem, 3, width)];
    let mut channels = width;
    for (s, &len) in stages.iter().enumerate() {
        for u in 0..len {
            if s > 0 && u == 0 {
                layout.push((UnitKind::Downsample, channels, channels * 2));
                channels *= 2;
            } else {
                layout.push((UnitKind::ResidualBlock, channels, channels));
            }
        }
    }
    layout
}

fn kaiming(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, gain: f64) -> Result<Tensor> {
    let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| normal.sample(rng)).collect())
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be at least 2, got {}", self.depth)));
        }
        if self.width == 0 || self.num_classes == 0 {
            return Err(Error::Config("width and num_classes must be positive".into()));
        }
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        Ok(())
    }

    /// `[C, H, W]` produced by feature unit `index` (1-based, `<= depth`).
    pub fn tap_shape(&self, index: usize) -> [usize; 3] {
        let (mut h, mut w) = self.input_hw;
        let mut c = 0;
        for (kind, _, out) in trunk_layout(self.depth, self.width).into_iter().take(index) {
            if kind == UnitKind::Downsample {
                h = h.div_ceil(2);
                w = w.div_ceil(2);
            }
            c = out;
        }
        [c, h, w]
    }

    pub fn feature_channels(&self) -> usize {
        self.tap_shape(self.depth)[0]
    }
}

pub fn build_tapnet(depth: usize, width: usize, num_classes: usize, seed: u64) -> Result<TapNet> {
    TapNet::new(NetSpec { depth, width, num_classes, input_hw: (32, 32), seed })
}

impl TapNet {
    /// Builds a net with Kaiming fan-in initialization from a seeded ChaCha
    /// stream. All feature units are tapped by default.
    pub fn new(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut units = Vec::with_capacity(spec.depth + 2);
        for (i, (kind, cin, cout)) in trunk_layout(spec.depth, spec.width).into_iter().enumerate() {
            let index = i + 1;
            let params = match kind {
                UnitKind::ResidualBlock => vec![
                    (format!("unit{index}.conv1"), kaiming(&mut rng, vec![cout, cin, 3, 3], cin * 9, 2.0)?),
                    (format!("unit{index}.conv2"), kaiming(&mut rng, vec![cout, cout, 3, 3], cout * 9, 2.0)?),
                ],
                _ => vec![(format!("unit{index}.conv"), kaiming(&mut rng, vec![cout, cin, 3, 3], cin * 9, 2.0)?)],
            };
            units.push(LayerUnit { kind, index, params });
        }
        let feat = spec.feature_channels();
        units.push(LayerUnit { kind: UnitKind::GlobalPool, index: spec.depth + 1, params: Vec::new() });
        units.push(LayerUnit {
            kind: UnitKind::Classifier,
            index: spec.depth + 2,
            params: vec![
                (
                    format!("unit{}.weight", spec.depth + 2),
                    kaiming(&mut rng, vec![feat, spec.num_classes], feat, 1.0)?,
                ),
                (format!("unit{}.bias", spec.depth + 2), Tensor::param(vec![spec.num_classes], vec![0.0; spec.num_classes])?),
            ],
        });
        Ok(TapNet { spec, units, tap_indices: (1..=spec.depth).collect(), frozen: false })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn depth(&self) -> usize {
        self.spec.depth
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn units(&self) -> &[LayerUnit] {
        &self.units
    }

    pub fn tap_indices(&self) -> &[usize] {
        &self.tap_indices
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_tap_indices(&mut self, taps: &[usize]) -> Result<()> {
        if taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("tap indices must be strictly increasing: {taps:?}")));
        }
        if let Some(&bad) = taps.iter().find(|&&t| t == 0 || t > self.spec.depth) {
            return Err(Error::Config(format!("tap index {bad} outside [1, {}]", self.spec.depth)));
        }
        self.tap_indices = taps.to_vec();
        Ok(())
    }

    pub fn with_taps(mut self, taps: &[usize]) -> Result<Self> {
        self.set_tap_indices(taps)?;
        Ok(self)
    }

    /// Marks the net as a teacher: parameters stop requiring gradients and are
    /// never watched by a tape.
    pub fn freeze(&mut self) {
        self.frozen = true;
        for unit in &mut self.units {
            for (_, p) in &mut unit.params {
                *p = p.detach();
            }
        }
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.units.iter().flat_map(|u| u.params.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.units.iter_mut().flat_map(|u| u.params.iter_mut().map(|(n, t)| (n.as_str(), t)))
    }

    /// Parameters owned by units in `range` (1-based, head units included).
    pub fn params_in(&self, range: RangeInclusive<usize>) -> impl Iterator<Item = (&str, &Tensor)> {
        self.units
            .iter()
            .filter(move |u| range.contains(&u.index))
            .flat_map(|u| u.params.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn params_mut_in(&mut self, range: RangeInclusive<usize>) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.units
            .iter_mut()
            .filter(move |u| range.contains(&u.index))
            .flat_map(|u| u.params.iter_mut().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.params().for_each(|(_, t)| t.zero_grad());
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let (h, w) = self.spec.input_hw;
        match *batch.shape() {
            [_, 3, bh, bw] if bh == h && bw == w => Ok(()),
            [_, c, _, _] if c != 3 => {
                Err(Error::dim("forward", format!("channel axis: expected 3, got {c}")))
            }
            [_, _, bh, bw] => Err(Error::dim(
                "forward",
                format!("spatial axes: expected {h}x{w}, got {bh}x{bw}"),
            )),
            _ => Err(Error::dim("forward", format!("expected [N,3,H,W], got {:?}", batch.shape()))),
        }
    }

    fn param(&self, unit: &LayerUnit, i: usize, tape: Option<&Tape>) -> Tensor {
        let p = &unit.params[i].1;
        match tape {
            Some(tape) if !self.frozen => tape.watch(p),
            _ => p.clone(),
        }
    }

    /// Runs unit `index` (1-based, head units included) on `x`.
    pub fn unit_forward(&self, index: usize, x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        let unit = self
            .units
            .get(index.wrapping_sub(1))
            .ok_or_else(|| Error::Contract(format!("no unit with index {index}")))?;
        match unit.kind {
            UnitKind::Stem => x.conv2d(&self.param(unit, 0, tape), 1, 1),
            UnitKind::Downsample => x.relu().conv2d(&self.param(unit, 0, tape), 2, 1),
            UnitKind::ResidualBlock => {
                let h = x.relu().conv2d(&self.param(unit, 0, tape), 1, 1)?;
                let h = h.relu().conv2d(&self.param(unit, 1, tape), 1, 1)?;
                x.add(&h.mul_scalar(RESIDUAL_SCALE))
            }
            UnitKind::GlobalPool => {
                let &[n, c, h, w] = x.shape() else {
                    return Err(Error::dim("global_pool", format!("expected [N,C,H,W], got {:?}", x.shape())));
                };
                Ok(x.relu().reshape(&[n, c, h * w])?.sum_axis(2)?.reshape(&[n, c])?.div_scalar((h * w) as f64))
            }
            UnitKind::Classifier => x.matmul(&self.param(unit, 0, tape))?.add(&self.param(unit, 1, tape)),
        }
    }

    /// Runs the feature units in `range` in order.
    pub fn forward_range(&self, range: RangeInclusive<usize>, x: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        let mut h = x.clone();
        for i in range {
            h = self.unit_forward(i, &h, tape)?;
        }
        Ok(h)
    }

    /// Global pool and classifier on a final feature map.
    pub fn head(&self, features: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        let pooled = self.unit_forward(self.spec.depth + 1, features, tape)?;
        self.unit_forward(self.spec.depth + 2, &pooled, tape)
    }

    /// Logits plus the outputs of every configured tap unit.
    pub fn forward_with_taps(&self, batch: &Tensor, tape: Option<&Tape>) -> Result<(Tensor, BTreeMap<usize, Tensor>)> {
        self.check_input(batch)?;
        let mut taps = BTreeMap::new();
        let mut h = batch.clone();
        for i in 1..=self.spec.depth {
            h = self.unit_forward(i, &h, tape)?;
            if self.tap_indices.binary_search(&i).is_ok() {
                taps.insert(i, h.clone());
            }
        }
        Ok((self.head(&h, tape)?, taps))
    }

    pub fn forward(&self, batch: &Tensor, tape: Option<&Tape>) -> Result<Tensor> {
        self.check_input(batch)?;
        let h = self.forward_range(1..=self.spec.depth, batch, tape)?;
        self.head(&h, tape)
    }

    pub fn check_batch(&self, batch: &Tensor) -> Result<()> {
        self.check_input(batch)
    }

    /// Replaces a parameter's values; used by checkpoint loading.
    pub(crate) fn set_param(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<()> {
        let frozen = self.frozen;
        let (_, slot) = self
            .params_mut()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if slot.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: stored shape {shape:?}, architecture expects {:?}",
                slot.shape()
            )));
        }
        *slot = if frozen {
            Tensor::from_vec(shape.to_vec(), values)?
        } else {
            Tensor::param(shape.to_vec(), values)?
        };
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(depth: usize, width: usize) -> NetSpec {
        NetSpec { depth, width, num_classes: 10, input_hw: (8, 8), seed: 3 }
    }

    #[test]
    fn depth_below_two_rejected() {
        assert!(matches!(TapNet::new(spec(1, 4)), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_params() {
        let a = TapNet::new(spec(5, 4)).unwrap();
        let b = TapNet::new(spec(5, 4)).unwrap();
        for ((na, ta), (nb, tb)) in a.params().zip(b.params()) {
            assert_eq!(na, nb);
            let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(ta), bits(tb));
        }
        let c = TapNet::new(NetSpec { seed: 4, ..spec(5, 4) }).unwrap();
        assert_ne!(a.params().next().unwrap().1.values(), c.params().next().unwrap().1.values());
    }

    #[test]
    fn layout_for_depth_nine() {
        let kinds: Vec<UnitKind> = trunk_layout(9, 8).into_iter().map(|(k, _, _)| k).collect();
        use UnitKind::*;
        assert_eq!(
            kinds,
            vec![Stem, ResidualBlock, ResidualBlock, ResidualBlock, Downsample, ResidualBlock, ResidualBlock, Downsample, ResidualBlock]
        );
        let net = TapNet::new(spec(9, 8)).unwrap();
        assert_eq!(net.units().len(), 11);
        assert_eq!(net.units().last().unwrap().kind, Classifier);
        assert!(net.units().iter().enumerate().all(|(i, u)| u.index == i + 1));
    }

    #[test]
    fn wrong_input_size() {
        let net = TapNet::new(spec(3, 2)).unwrap();
        let err = net.forward(&Tensor::zeros(&[1, 3, 7, 8]), None).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        assert!(net.forward(&Tensor::zeros(&[1, 1, 8, 8]), None).is_err());
    }

    #[test]
    fn frozen_params_never_require_grad() {
        let mut net = TapNet::new(spec(3, 2)).unwrap();
        net.freeze();
        assert!(net.params().all(|(_, t)| !t.requires_grad()));
        let tape = Tape::new();
        let x = Tensor::full(&[1, 3, 8, 8], 0.5);
        let y = net.forward(&x, Some(&tape)).unwrap();
        assert!(!y.is_tracked());
    }

    #[test]
    fn tap_index_validation() {
        let net = TapNet::new(spec(4, 2)).unwrap();
        assert!(net.clone().with_taps(&[2, 2]).is_err());
        assert!(net.clone().with_taps(&[0]).is_err());
        assert!(net.clone().with_taps(&[5]).is_err());
        assert!(net.with_taps(&[1, 4]).is_ok());
    }
}
