use super::{numel, record, Tensor};
use crate::error::{Error, Result};

/// Right-aligned broadcast of two shapes.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::dim(
                    op,
                    format!("axis {i}: cannot broadcast {a:?} with {b:?}"),
                ))
            }
        };
    }
    Ok(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
/// `None` when no broadcasting is needed.
fn index_map(src: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if src == out {
        return None;
    }
    let rank = out.len();
    let offset = rank - src.len();
    let mut src_strides = vec![0usize; rank];
    let mut stride = 1;
    for i in (0..src.len()).rev() {
        src_strides[i + offset] = if src[i] == 1 { 0 } else { stride };
        stride *= src[i];
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        map.push(idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum());
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Some(map)
}

fn gather(values: &[f64], map: &Option<Vec<usize>>, i: usize) -> f64 {
    match map {
        Some(m) => values[m[i]],
        None => values[i],
    }
}

fn reduce_to(grad: Vec<f64>, map: &Option<Vec<usize>>, len: usize) -> Vec<f64> {
    match map {
        None => grad,
        Some(m) => {
            let mut out = vec![0.0; len];
            for (g, &j) in grad.iter().zip(m) {
                out[j] += g;
            }
            out
        }
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let shape = broadcast_shape("add", &self.shape, &other.shape)?;
        let (ma, mb) = (index_map(&self.shape, &shape), index_map(&other.shape, &shape));
        let values = (0..numel(&shape))
            .map(|i| gather(&self.values, &ma, i) + gather(&other.values, &mb, i))
            .collect();
        let (la, lb) = (self.numel(), other.numel());
        Ok(record("add", &[self, other], shape, values, 0, move |g, mask| {
            vec![
                mask[0].then(|| reduce_to(g.to_vec(), &ma, la)),
                mask[1].then(|| reduce_to(g.to_vec(), &mb, lb)),
            ]
        }))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let shape = broadcast_shape("sub", &self.shape, &other.shape)?;
        let (ma, mb) = (index_map(&self.shape, &shape), index_map(&other.shape, &shape));
        let values = (0..numel(&shape))
            .map(|i| gather(&self.values, &ma, i) - gather(&other.values, &mb, i))
            .collect();
        let (la, lb) = (self.numel(), other.numel());
        Ok(record("sub", &[self, other], shape, values, 0, move |g, mask| {
            vec![
                mask[0].then(|| reduce_to(g.to_vec(), &ma, la)),
                mask[1].then(|| reduce_to(g.iter().map(|v| -v).collect(), &mb, lb)),
            ]
        }))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let shape = broadcast_shape("mul", &self.shape, &other.shape)?;
        let (ma, mb) = (index_map(&self.shape, &shape), index_map(&other.shape, &shape));
        let values = (0..numel(&shape))
            .map(|i| gather(&self.values, &ma, i) * gather(&other.values, &mb, i))
            .collect();
        let (a, b) = (self.values.clone(), other.values.clone());
        Ok(record("mul", &[self, other], shape, values, 2, move |g, mask| {
            let ga = mask[0].then(|| {
                let full = g.iter().enumerate().map(|(i, gi)| gi * gather(&b, &mb, i)).collect();
                reduce_to(full, &ma, a.len())
            });
            let gb = mask[1].then(|| {
                let full = g.iter().enumerate().map(|(i, gi)| gi * gather(&a, &ma, i)).collect();
                reduce_to(full, &mb, b.len())
            });
            vec![ga, gb]
        }))
    }

    /// Elementwise quotient with broadcasting.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let shape = broadcast_shape("div", &self.shape, &other.shape)?;
        let (ma, mb) = (index_map(&self.shape, &shape), index_map(&other.shape, &shape));
        let values = (0..numel(&shape))
            .map(|i| gather(&self.values, &ma, i) / gather(&other.values, &mb, i))
            .collect();
        let (a, b) = (self.values.clone(), other.values.clone());
        Ok(record("div", &[self, other], shape, values, 2, move |g, mask| {
            let ga = mask[0].then(|| {
                let full = g.iter().enumerate().map(|(i, gi)| gi / gather(&b, &mb, i)).collect();
                reduce_to(full, &ma, a.len())
            });
            let gb = mask[1].then(|| {
                let full = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| {
                        let bv = gather(&b, &mb, i);
                        -gi * gather(&a, &ma, i) / (bv * bv)
                    })
                    .collect();
                reduce_to(full, &mb, b.len())
            });
            vec![ga, gb]
        }))
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let values = self.values.iter().map(|v| v * c).collect();
        record("mul_scalar", &[self], self.shape.clone(), values, 0, move |g, _| {
            vec![Some(g.iter().map(|v| v * c).collect())]
        })
    }

    /// Division by a constant; the normalization primitive used in place of
    /// batch statistics.
    pub fn div_scalar(&self, c: f64) -> Tensor {
        let values = self.values.iter().map(|v| v / c).collect();
        record("div_scalar", &[self], self.shape.clone(), values, 0, move |g, _| {
            vec![Some(g.iter().map(|v| v / c).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let values = self.values.iter().map(|v| v + c).collect();
        record("add_scalar", &[self], self.shape.clone(), values, 0, |g, _| vec![Some(g.to_vec())])
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        let out: Vec<f64> = self.values.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let saved = std::rc::Rc::new(out.clone());
        record("relu", &[self], self.shape.clone(), out, 1, move |g, _| {
            vec![Some(g.iter().zip(saved.iter()).map(|(gi, &o)| if o > 0.0 { *gi } else { 0.0 }).collect())]
        })
    }

    /// Elementwise absolute value; the subgradient at zero is taken as zero.
    pub fn abs(&self) -> Tensor {
        let x = self.values.clone();
        let values = x.iter().map(|v| v.abs()).collect();
        record("abs", &[self], self.shape.clone(), values, 1, move |g, _| {
            vec![Some(g.iter().zip(x.iter()).map(|(gi, &v)| gi * sign(v)).collect())]
        })
    }

    pub fn square(&self) -> Tensor {
        let x = self.values.clone();
        let values = x.iter().map(|v| v * v).collect();
        record("square", &[self], self.shape.clone(), values, 1, move |g, _| {
            vec![Some(g.iter().zip(x.iter()).map(|(gi, &v)| 2.0 * v * gi).collect())]
        })
    }

    pub fn sqrt(&self) -> Tensor {
        let out: Vec<f64> = self.values.iter().map(|v| v.sqrt()).collect();
        let saved = std::rc::Rc::new(out.clone());
        record("sqrt", &[self], self.shape.clone(), out, 1, move |g, _| {
            vec![Some(g.iter().zip(saved.iter()).map(|(gi, &s)| gi * 0.5 / s).collect())]
        })
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape.as_slice(), other.shape.as_slice()) else {
            return Err(Error::dim(
                "matmul",
                format!("expected rank-2 operands, got {:?} and {:?}", self.shape, other.shape),
            ));
        };
        if k != k2 {
            return Err(Error::dim("matmul", format!("inner axis: {k} vs {k2}")));
        }
        let (a, b) = (self.values.clone(), other.values.clone());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                let row = &b[p * n..(p + 1) * n];
                for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += av * bv;
                }
            }
        }
        Ok(record("matmul", &[self, other], vec![m, n], out, 2, move |g, mask| {
            let ga = mask[0].then(|| {
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        ga[i * k + p] = (0..n).map(|j| g[i * n + j] * b[p * n + j]).sum();
                    }
                }
                ga
            });
            let gb = mask[1].then(|| {
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = a[i * k + p];
                        for j in 0..n {
                            gb[p * n + j] += av * g[i * n + j];
                        }
                    }
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        let len = self.numel();
        let total = self.values.iter().sum();
        record("sum", &[self], vec![1], vec![total], 0, move |g, _| vec![Some(vec![g[0]; len])])
    }

    pub fn mean(&self) -> Tensor {
        self.sum().div_scalar(self.numel() as f64)
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(Error::dim("sum_axis", format!("axis {axis} out of range for {:?}", self.shape)));
        }
        let dim = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let src = &self.values[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        Ok(record("sum_axis", &[self], shape, out, 0, move |g, _| {
            let mut gi = vec![0.0; outer * dim * inner];
            for o in 0..outer {
                for d in 0..dim {
                    gi[(o * dim + d) * inner..(o * dim + d + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gi)]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        let values = self.values.as_ref().clone();
        Ok(record("reshape", &[self], shape.to_vec(), values, 0, |g, _| vec![Some(g.to_vec())]))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rank = first.shape.len();
        if axis >= rank {
            return Err(Error::dim("concat", format!("axis {axis} out of range for rank {rank}")));
        }
        for p in parts {
            if p.shape.len() != rank
                || p.shape.iter().enumerate().any(|(i, &d)| i != axis && d != first.shape[i])
            {
                return Err(Error::dim(
                    "concat",
                    format!("part {:?} incompatible with {:?} off axis {axis}", p.shape, first.shape),
                ));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let dims: Vec<usize> = parts.iter().map(|p| p.shape[axis]).collect();
        let total: usize = dims.iter().sum();
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &d) in parts.iter().zip(&dims) {
                out.extend_from_slice(&p.values[o * d * inner..(o + 1) * d * inner]);
            }
        }
        Ok(record("concat", parts, shape, out, 0, move |g, mask| {
            let mut grads: Vec<Vec<f64>> = dims.iter().map(|&d| Vec::with_capacity(outer * d * inner)).collect();
            let mut at = 0;
            for _ in 0..outer {
                for (gp, &d) in grads.iter_mut().zip(&dims) {
                    gp.extend_from_slice(&g[at..at + d * inner]);
                    at += d * inner;
                }
            }
            grads.into_iter().zip(mask).map(|(gp, &m)| m.then_some(gp)).collect()
        }))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor {
        let k = *self.shape.last().expect("rank >= 1");
        let out = softmax_rows(&self.values, k);
        let saved = std::rc::Rc::new(out.clone());
        record("softmax", &[self], self.shape.clone(), out, 1, move |g, _| {
            let mut gi = vec![0.0; g.len()];
            for ((gr, sr), out) in g.chunks(k).zip(saved.chunks(k)).zip(gi.chunks_mut(k)) {
                let dot: f64 = gr.iter().zip(sr).map(|(a, b)| a * b).sum();
                for ((o, &gv), &sv) in out.iter_mut().zip(gr).zip(sr) {
                    *o = sv * (gv - dot);
                }
            }
            vec![Some(gi)]
        })
    }

    /// Log-softmax over the last axis, computed with a max shift.
    pub fn log_softmax(&self) -> Tensor {
        let k = *self.shape.last().expect("rank >= 1");
        let mut out = Vec::with_capacity(self.numel());
        for row in self.values.chunks(k) {
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|v| v - lse));
        }
        let probs = std::rc::Rc::new(softmax_rows(&self.values, k));
        record("log_softmax", &[self], self.shape.clone(), out, 1, move |g, _| {
            let mut gi = vec![0.0; g.len()];
            for ((gr, pr), out) in g.chunks(k).zip(probs.chunks(k)).zip(gi.chunks_mut(k)) {
                let total: f64 = gr.iter().sum();
                for ((o, &gv), &pv) in out.iter_mut().zip(gr).zip(pr) {
                    *o = gv - pv * total;
                }
            }
            vec![Some(gi)]
        })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_rows(values: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for row in values.chunks(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / z));
    }
    out
}
