#![allow(dead_code)]
//! Shared fixtures and brute-force reference implementations. The references
//! are written as plain loops over indices and share no code with the crate.

use lakd::metrics::Matrix;
use lakd::models::{NetSpec, TapNet};
use lakd::sdm::PartitionPlan;
use lakd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), uniform(rng, n, -1.0, 1.0)).unwrap()
}

pub fn param(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape.to_vec(), uniform(rng, n, -1.0, 1.0)).unwrap()
}

pub fn net(depth: usize, width: usize, classes: usize, seed: u64) -> TapNet {
    TapNet::new(NetSpec { depth, width, num_classes: classes, input_hw: (8, 8), seed }).unwrap()
}

pub fn teacher(seed: u64) -> TapNet {
    let mut t = net(9, 8, 3, seed);
    t.freeze();
    t
}

/// Normalized-looking `[n, 3, 8, 8]` batch and labels.
pub fn batch(rng: &mut ChaCha8Rng, n: usize) -> (Tensor, Vec<usize>) {
    let x = Tensor::from_vec(vec![n, 3, 8, 8], uniform(rng, n * 192, -2.0, 2.0)).unwrap();
    let labels = (0..n).map(|_| rng.random_range(0..3)).collect();
    (x, labels)
}

/// Random plan on a depth-`depth` student whose non-terminal blocks each end
/// in an alignment unit; extra alignment units are sprinkled in.
pub fn random_plan(rng: &mut ChaCha8Rng, depth: usize) -> PartitionPlan {
    let mut cuts: Vec<usize> = (1..depth).filter(|_| rng.random_bool(0.35)).collect();
    if cuts.is_empty() {
        cuts.push(rng.random_range(1..depth));
    }
    let mut align: Vec<usize> = cuts.clone();
    align.extend((1..=depth).filter(|_| rng.random_bool(0.2)));
    align.push(depth);
    align.sort_unstable();
    align.dedup();
    PartitionPlan::new(cuts, align)
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Relative comparison with an absolute floor for values near zero.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn at4(v: &[f64], shape: [usize; 4], n: usize, c: usize, y: usize, x: usize) -> f64 {
    v[((n * shape[1] + c) * shape[2] + y) * shape[3] + x]
}

/// Direct convolution, kernel `[O, C, KH, KW]`, zero padding.
pub fn conv_ref(x: &[f64], xs: [usize; 4], k: &[f64], ks: [usize; 4], stride: usize, pad: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = xs;
    let [o, _, kh, kw] = ks;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                let ix = (ox * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += at4(x, xs, b, ic, iy as usize, ix as usize) * at4(k, ks, oc, ic, dy, dx);
                            }
                        }
                    }
                    out[((b * o + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, [n, o, ho, wo])
}

/// `(1/N) sum_n sum_{c,y,x} (t - s)^2`.
pub fn feature_loss_ref(t: &[f64], s: &[f64], n: usize) -> f64 {
    t.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64
}

/// Batch mean of `T^2 * sum_k p_k (ln p_k - ln q_k)` with tempered softmaxes.
pub fn soft_loss_ref(student: &[f64], teacher: &[f64], k: usize, temp: f64) -> f64 {
    let n = student.len() / k;
    let mut total = 0.0;
    for i in 0..n {
        let s = &student[i * k..(i + 1) * k];
        let t = &teacher[i * k..(i + 1) * k];
        let zs: f64 = s.iter().map(|v| (v / temp).exp()).sum();
        let zt: f64 = t.iter().map(|v| (v / temp).exp()).sum();
        for j in 0..k {
            let p = (t[j] / temp).exp() / zt;
            let q = (s[j] / temp).exp() / zs;
            total += p * (p.ln() - q.ln());
        }
    }
    total * temp * temp / n as f64
}

/// Per-sample `sum_c x^2`, L2-normalized, then batch mean of squared
/// distance.
pub fn attention_loss_ref(t: &[f64], ts: [usize; 4], s: &[f64], ss: [usize; 4]) -> f64 {
    let [n, _, h, w] = ts;
    let map = |v: &[f64], shape: [usize; 4], b: usize| {
        let mut m = vec![0.0; h * w];
        for c in 0..shape[1] {
            for y in 0..h {
                for x in 0..w {
                    m[y * w + x] += at4(v, shape, b, c, y, x).powi(2);
                }
            }
        }
        let norm = m.iter().map(|e| e * e).sum::<f64>().sqrt();
        m.iter().map(|e| e / norm).collect::<Vec<_>>()
    };
    let mut total = 0.0;
    for b in 0..n {
        let (a, bb) = (map(t, ts, b), map(s, ss, b));
        total += a.iter().zip(&bb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    }
    total / n as f64
}

/// `[N, 1, H, W]` channel sum.
pub fn channel_sum_ref(t: &[f64], shape: [usize; 4], abs: bool) -> Vec<f64> {
    let [n, c, h, w] = shape;
    let mut out = vec![0.0; n * h * w];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = at4(t, shape, b, ch, y, x);
                    out[(b * h + y) * w + x] += if abs { v.abs() } else { v };
                }
            }
        }
    }
    out
}

/// 3x3 stride-1 same-size windows: mean over in-bounds cells and max over
/// in-bounds cells, blended.
pub fn pool_combine_ref(f: &[f64], n: usize, h: usize, w: usize, alpha: f64, beta: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * h * w];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut cells = Vec::new();
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                        if yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64 {
                            cells.push(f[(b * h + yy as usize) * w + xx as usize]);
                        }
                    }
                }
                let mean = cells.iter().sum::<f64>() / cells.len() as f64;
                let max = cells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                out[(b * h + y) * w + x] = alpha * mean + beta * max;
            }
        }
    }
    out
}

/// `(rescued, teacher_wrong)` counts.
pub fn ek_ref(teacher: &[usize], student: &[usize], labels: &[usize]) -> (usize, usize) {
    let wrong: Vec<usize> = (0..labels.len()).filter(|&i| teacher[i] != labels[i]).collect();
    let rescued = wrong.iter().filter(|&&i| student[i] == labels[i]).count();
    (rescued, wrong.len())
}

fn center(m: &Matrix) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..m.rows).map(|r| (0..m.cols).map(|c| m.get(r, c)).collect()).collect();
    for c in 0..m.cols {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / m.rows as f64;
        rows.iter_mut().for_each(|r| r[c] -= mean);
    }
    rows
}

/// `||A^T B||_F^2` for row-sample matrices.
fn cross_frob2(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (ca, cb) = (a[0].len(), b[0].len());
    let mut total = 0.0;
    for i in 0..ca {
        for j in 0..cb {
            let d: f64 = a.iter().zip(b).map(|(ra, rb)| ra[i] * rb[j]).sum();
            total += d * d;
        }
    }
    total
}

/// Feature-space linear CKA.
pub fn cka_ref(x: &Matrix, y: &Matrix) -> f64 {
    let (xc, yc) = (center(x), center(y));
    cross_frob2(&yc, &xc) / (cross_frob2(&xc, &xc).sqrt() * cross_frob2(&yc, &yc).sqrt())
}

/// Random `d x d` orthogonal matrix by Gram-Schmidt on Gaussian-ish columns.
pub fn orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v = uniform(rng, d, -1.0, 1.0);
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-3 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q
}

/// `X Q` for an `n x d` matrix.
pub fn rotate(x: &Matrix, q: &[Vec<f64>]) -> Matrix {
    let d = x.cols;
    let data = (0..x.rows)
        .flat_map(|r| (0..d).map(move |c| (r, c)))
        .map(|(r, c)| (0..d).map(|k| x.get(r, k) * q[k][c]).sum())
        .collect();
    Matrix::new(x.rows, d, data).unwrap()
}

/// Rank of `labels[i]` among row `i`, ties toward the lower index, by sorting.
pub fn topk_ref(logits: &[f64], k_classes: usize, labels: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * k_classes..(i + 1) * k_classes];
        let mut order: Vec<usize> = (0..k_classes).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        if order[..k].contains(&y) {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}
