//! Attention maps as 8-bit binary PGM (P5, maxval 255) images.

use std::path::{Path, PathBuf};

use crate::data::{eval_batches, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::models::TapNet;
use crate::tensor::Tensor;

use super::train::forward_collect;

/// `sum_c x^2` of sample `i` of a `[N,C,H,W]` tap, min-max scaled to bytes.
/// A constant map becomes all zeros.
pub fn attention_image(tap: &Tensor, i: usize) -> Result<(usize, usize, Vec<u8>)> {
    let &[n, c, h, w] = tap.shape() else {
        return Err(Error::dim("attention_image", format!("expected [N,C,H,W], got {:?}", tap.shape())));
    };
    if i >= n {
        return Err(Error::Contract(format!("sample {i} outside batch of {n}")));
    }
    let plane = h * w;
    let sample = &tap.values()[i * c * plane..(i + 1) * c * plane];
    let energy: Vec<f64> = (0..plane).map(|p| (0..c).map(|ch| sample[ch * plane + p].powi(2)).sum()).collect();
    let lo = energy.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels = energy
        .iter()
        .map(|&v| if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 0 })
        .collect();
    Ok((h, w, pixels))
}

pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a P5 image with maxval 255 into `(height, width, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("pgm: {m}"));
    let mut fields = Vec::new();
    let mut at = 0;
    while fields.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..at]).map_err(|_| bad("header is not ascii"))?.to_string());
    }
    at += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("only P5 with maxval 255 is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad dimension"));
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let body = bytes.get(at..).filter(|b| b.len() == w * h).ok_or_else(|| bad("payload size"))?;
    Ok((h, w, body.to_vec()))
}

/// Writes `s{sample}_u{unit}.pgm` into `dir` for every requested sample and
/// feature unit. Returns the written paths.
pub fn export_attention(
    net: &TapNet,
    data: &Dataset,
    norm: Normalization,
    samples: &[usize],
    units: &[usize],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if let Some(&u) = units.iter().find(|&&u| u == 0 || u > net.depth()) {
        return Err(Error::Config(format!("unit {u} outside [1, {}]", net.depth())));
    }
    if let Some(&s) = samples.iter().find(|&&s| s >= data.len()) {
        return Err(Error::Config(format!("sample {s} outside dataset of {}", data.len())));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &s in samples {
        let one = data.slice(s..s + 1);
        let batch = eval_batches(&one, 1, norm).next().expect("one sample");
        let (_, taps) = forward_collect(net, &batch.images, units)?;
        for (&u, tap) in &taps {
            let (h, w, px) = attention_image(tap, 0)?;
            let path = dir.join(format!("s{s}_u{u}.pgm"));
            std::fs::write(&path, encode_pgm(h, w, &px))?;
            written.push(path);
        }
    }
    Ok(written)
}
