//! Image-classification data: CIFAR-10 binary records, a seeded synthetic
//! task, and a seeded batch stream with crop/flip augmentation.
//!
//! Pixels are stored as bytes so that every image round-trips exactly through
//! the 3073-byte CIFAR record layout (one label byte, then 1024 red, 1024
//! green, 1024 blue bytes, each plane row-major 32x32).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_CLASSES: usize = 10;

/// Byte images `[N, 3, H, W]` with integer labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub pixels: Vec<u8>,
    pub labels: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn image_len(&self) -> usize {
        3 * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Pixel value in `[0, 1]`.
    pub fn pixel(&self, i: usize, c: usize, y: usize, x: usize) -> f64 {
        self.image(i)[(c * self.height + y) * self.width + x] as f64 / 255.0
    }

    /// Samples `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let n = self.image_len();
        Dataset {
            pixels: self.pixels[range.start * n..range.end * n].to_vec(),
            labels: self.labels[range].to_vec(),
            ..*self
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        self.labels.iter().for_each(|&l| h[l] += 1);
        h
    }

    /// Whole dataset as one tensor in `[0, 1]`, no normalization.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::raw(
            vec![self.len(), 3, self.height, self.width],
            self.pixels.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }
}

/// Parses concatenated CIFAR-10 binary records.
pub fn parse_cifar_binary(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format(format!(
            "size {} is not a positive multiple of the {CIFAR_RECORD}-byte record",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] as usize >= CIFAR_CLASSES {
            return Err(Error::Format(format!("record {i}: label byte {} is not below {CIFAR_CLASSES}", rec[0])));
        }
        labels.push(rec[0] as usize);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(Dataset { pixels, labels, height: CIFAR_SIDE, width: CIFAR_SIDE, num_classes: CIFAR_CLASSES })
}

pub fn load_cifar_binary(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    parse_cifar_binary(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Concatenates several batch files into one dataset.
pub fn load_cifar_files<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for p in paths {
        bytes.extend(std::fs::read(p.as_ref())?);
    }
    parse_cifar_binary(&bytes)
}

/// Serializes a 32x32 dataset with at most 10 classes as CIFAR-10 records.
pub fn encode_cifar_binary(data: &Dataset) -> Result<Vec<u8>> {
    if data.height != CIFAR_SIDE || data.width != CIFAR_SIDE {
        return Err(Error::Format(format!(
            "CIFAR records hold 32x32 images, dataset is {}x{}",
            data.height, data.width
        )));
    }
    if data.num_classes > CIFAR_CLASSES {
        return Err(Error::Format(format!("CIFAR records hold at most 10 classes, dataset has {}", data.num_classes)));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD);
    for i in 0..data.len() {
        out.push(data.labels[i] as u8);
        out.extend_from_slice(data.image(i));
    }
    Ok(out)
}

pub fn save_cifar_binary(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_cifar_binary(data)?)?;
    Ok(())
}

/// Parameters of the synthetic task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub samples: usize,
    pub image_size: usize,
    /// Standard deviation of additive per-pixel Gaussian noise.
    pub noise: f64,
    /// Foreground/background intensity gap is drawn from
    /// `[contrast_min, 1]`.
    pub contrast_min: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { num_classes: 3, samples: 3000, image_size: 8, noise: 0.15, contrast_min: 0.5, seed: 0 }
    }
}

/// Class template value in `[0, 1]` at `(y, x)`; `phase` shifts the pattern
/// and `size` is the image side.
fn template(class: usize, y: usize, x: usize, size: usize, phase: (usize, usize)) -> f64 {
    let (py, px) = phase;
    let period = (size / 4).max(2);
    let (yy, xx) = (y + py, x + px);
    let c = (size as f64 - 1.0) / 2.0;
    let (dy, dx) = (y as f64 - c - (py % 3) as f64 + 1.0, x as f64 - c - (px % 3) as f64 + 1.0);
    let r = (dy * dy + dx * dx).sqrt();
    let on = match class % 10 {
        0 => (yy / (period / 2).max(1)).is_multiple_of(2),
        1 => (xx / (period / 2).max(1)).is_multiple_of(2),
        2 => r <= size as f64 * 0.3,
        3 => ((yy / (period / 2).max(1)) + (xx / (period / 2).max(1))).is_multiple_of(2),
        4 => ((yy + xx) / (period / 2).max(1)).is_multiple_of(2),
        5 => (r - size as f64 * 0.3).abs() <= size as f64 * 0.1,
        6 => dy.abs() <= size as f64 * 0.12 || dx.abs() <= size as f64 * 0.12,
        7 => ((yy + size - xx % size) / (period / 2).max(1)).is_multiple_of(2),
        8 => dy + dx <= 0.0,
        _ => yy % period == 0 && xx % period == 0,
    };
    if on {
        1.0
    } else {
        0.0
    }
}

/// Seeded class-conditional images: a per-class geometric template with random
/// phase, random per-channel contrast, and additive Gaussian noise, quantized
/// to bytes. Labels cycle through the classes before shuffling.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    if spec.num_classes == 0 || spec.samples == 0 || spec.image_size < 2 {
        return Err(Error::Config("synthetic data needs classes, samples and image_size >= 2".into()));
    }
    if !(spec.noise >= 0.0) || !(0.0..=1.0).contains(&spec.contrast_min) {
        return Err(Error::Config("synthetic noise must be >= 0 and contrast_min in [0, 1]".into()));
    }
    let s = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut labels: Vec<usize> = (0..spec.samples).map(|i| i % spec.num_classes).collect();
    labels.shuffle(&mut rng);
    let mut pixels = Vec::with_capacity(spec.samples * 3 * s * s);
    for &label in &labels {
        let phase = (rng.random_range(0..s), rng.random_range(0..s));
        let mut fg = [0.0; 3];
        let mut bg = [0.0; 3];
        for c in 0..3 {
            let gap = rng.random_range(spec.contrast_min..=1.0);
            bg[c] = rng.random_range(0.0..=(1.0 - gap));
            fg[c] = bg[c] + gap;
        }
        // classes beyond ten reuse templates with swapped colour roles
        if (label / 10) % 2 == 1 {
            fg.rotate_left(1);
        }
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    let t = template(label, y, x, s, phase);
                    let mut v = bg[c] + t * (fg[c] - bg[c]);
                    if spec.noise > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
    }
    Ok(Dataset { pixels, labels, height: s, width: s, num_classes: spec.num_classes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    /// Conventional CIFAR-10 channel statistics.
    fn default() -> Self {
        Normalization { mean: [0.4914, 0.4822, 0.4465], std: [0.2470, 0.2435, 0.2616] }
    }
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { mean: [0.0; 3], std: [1.0; 3] };
}

/// Crop offsets into the 4-pixel zero-padded image and the flip decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

pub const CROP_PAD: usize = 4;

#[derive(Debug, Clone)]
pub struct LabeledBatch {
    /// Normalized `[N, 3, H, W]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// Dataset indices of the samples, in batch order.
    pub indices: Vec<usize>,
    /// Augmentation draws; empty when augmentation is off.
    pub draws: Vec<AugmentDraw>,
}

/// Mirrors each row of a `[C, H, W]` float image.
pub fn flip_horizontal(img: &[f64], w: usize) -> Vec<f64> {
    img.chunks(w).flat_map(|row| row.iter().rev().copied()).collect()
}

/// Crop of size `h x w` at `(dy, dx)` from the image zero-padded by `pad`.
pub fn pad_crop(img: &[f64], h: usize, w: usize, pad: usize, dy: usize, dx: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for (plane_in, plane_out) in img.chunks(h * w).zip(out.chunks_mut(h * w)) {
        for y in 0..h {
            let sy = y + dy;
            if sy < pad || sy >= h + pad {
                continue;
            }
            for x in 0..w {
                let sx = x + dx;
                if sx >= pad && sx < w + pad {
                    plane_out[y * w + x] = plane_in[(sy - pad) * w + (sx - pad)];
                }
            }
        }
    }
    out
}

/// Seeded, single-producer batch stream over one epoch.
pub struct BatchIter<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    at: usize,
    batch_size: usize,
    augment: bool,
    norm: Normalization,
    rng: ChaCha8Rng,
}

/// One epoch of batches: shuffled by `epoch_seed`, optionally augmented with
/// a pad-4 random crop and a p = 0.5 horizontal flip drawn from the same
/// generator. The final short batch is emitted.
pub fn batch_iter(data: &Dataset, batch_size: usize, epoch_seed: u64, augment: bool, norm: Normalization) -> Result<BatchIter<'_>> {
    if batch_size == 0 || batch_size > data.len() {
        return Err(Error::Config(format!("batch size {batch_size} must lie in [1, {}]", data.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    Ok(BatchIter { data, order, at: 0, batch_size, augment, norm, rng })
}

/// Sequential, unshuffled, unaugmented batches for evaluation.
pub fn eval_batches(data: &Dataset, batch_size: usize, norm: Normalization) -> impl Iterator<Item = LabeledBatch> + '_ {
    let bs = batch_size.max(1);
    (0..data.len()).step_by(bs).map(move |start| {
        let idx: Vec<usize> = (start..(start + bs).min(data.len())).collect();
        assemble(data, &idx, &[], norm)
    })
}

fn assemble(data: &Dataset, idx: &[usize], draws: &[AugmentDraw], norm: Normalization) -> LabeledBatch {
    let (h, w) = (data.height, data.width);
    let mut values = Vec::with_capacity(idx.len() * 3 * h * w);
    for (k, &i) in idx.iter().enumerate() {
        let mut img: Vec<f64> = data.image(i).iter().map(|&b| b as f64 / 255.0).collect();
        if let Some(d) = draws.get(k) {
            img = pad_crop(&img, h, w, CROP_PAD, d.dy, d.dx);
            if d.flip {
                img = flip_horizontal(&img, w);
            }
        }
        for (c, plane) in img.chunks(h * w).enumerate() {
            values.extend(plane.iter().map(|v| (v - norm.mean[c]) / norm.std[c]));
        }
    }
    LabeledBatch {
        images: Tensor::raw(vec![idx.len(), 3, h, w], values),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
        indices: idx.to_vec(),
        draws: draws.to_vec(),
    }
}

impl Iterator for BatchIter<'_> {
    type Item = LabeledBatch;

    fn next(&mut self) -> Option<LabeledBatch> {
        if self.at >= self.order.len() {
            return None;
        }
        let end = (self.at + self.batch_size).min(self.order.len());
        let idx = self.order[self.at..end].to_vec();
        self.at = end;
        let draws: Vec<AugmentDraw> = if self.augment {
            idx.iter()
                .map(|_| AugmentDraw {
                    dy: self.rng.random_range(0..=2 * CROP_PAD),
                    dx: self.rng.random_range(0..=2 * CROP_PAD),
                    flip: self.rng.random_bool(0.5),
                })
                .collect()
        } else {
            Vec::new()
        };
        Some(assemble(self.data, &idx, &draws, self.norm))
    }
}
