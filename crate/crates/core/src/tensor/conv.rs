use super::{record, Tensor};
use crate::error::{Error, Result};

/// Output positions `o` in `[lo, hi)` for which `o * stride + offset - pad`
/// lands inside `[0, in_len)`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, pad: usize, offset: usize) -> (usize, usize) {
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    if in_len + pad <= offset {
        return (0, 0);
    }
    let hi = ((in_len - 1 + pad - offset) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn out_len(op: &'static str, axis: &str, len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Contract(format!("{op}: stride must be positive")));
    }
    if k == 0 || k > len + 2 * pad {
        return Err(Error::dim(op, format!("{axis}: window {k} exceeds padded extent {}", len + 2 * pad)));
    }
    Ok((len + 2 * pad - k) / stride + 1)
}

fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::dim(op, format!("expected [N,C,H,W], got {:?}", t.shape()))),
    }
}

impl Tensor {
    /// Cross-correlation of `[N,C,H,W]` with `[K,C,kh,kw]`, zero padding.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let [n, c, h, w] = dims4("conv2d", self)?;
        let [k, kc, kh, kw] = dims4("conv2d", kernel)?;
        if kc != c {
            return Err(Error::dim("conv2d", format!("channel axis: input {c} vs kernel {kc}")));
        }
        let ho = out_len("conv2d", "height axis", h, kh, stride, padding)?;
        let wo = out_len("conv2d", "width axis", w, kw, stride, padding)?;
        let geo = Geometry { c, h, w, kh, kw, ho, wo, stride, pad: padding };

        let x = self.values.clone();
        let wt = kernel.values.clone();
        let (ckk, plane_in, plane_out) = (c * kh * kw, c * h * w, ho * wo);
        let mut out = vec![0.0; n * k * plane_out];
        let mut cols = vec![0.0; ckk * plane_out];
        for img in 0..n {
            geo.im2col(&x[img * plane_in..(img + 1) * plane_in], &mut cols);
            let dst = &mut out[img * k * plane_out..(img + 1) * k * plane_out];
            for (ko, orow) in dst.chunks_mut(plane_out).enumerate() {
                for (q, crow) in cols.chunks(plane_out).enumerate() {
                    let wv = wt[ko * ckk + q];
                    if wv != 0.0 {
                        orow.iter_mut().zip(crow).for_each(|(o, &v)| *o += wv * v);
                    }
                }
            }
        }

        Ok(record("conv2d", &[self, kernel], vec![n, k, ho, wo], out, 2, move |g, mask| {
            let mut gx = mask[0].then(|| vec![0.0; x.len()]);
            let mut gw = mask[1].then(|| vec![0.0; wt.len()]);
            let mut cols = vec![0.0; ckk * plane_out];
            for img in 0..n {
                let gimg = &g[img * k * plane_out..(img + 1) * k * plane_out];
                if let Some(gw) = gw.as_mut() {
                    geo.im2col(&x[img * plane_in..(img + 1) * plane_in], &mut cols);
                    for (ko, grow) in gimg.chunks(plane_out).enumerate() {
                        for (q, crow) in cols.chunks(plane_out).enumerate() {
                            gw[ko * ckk + q] += grow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    cols.iter_mut().for_each(|v| *v = 0.0);
                    for (ko, grow) in gimg.chunks(plane_out).enumerate() {
                        for (q, crow) in cols.chunks_mut(plane_out).enumerate() {
                            let wv = wt[ko * ckk + q];
                            if wv != 0.0 {
                                crow.iter_mut().zip(grow).for_each(|(c, &gv)| *c += wv * gv);
                            }
                        }
                    }
                    geo.col2im(&cols, &mut gx[img * plane_in..(img + 1) * plane_in]);
                }
            }
            vec![gx, gw]
        }))
    }

    /// Average pooling; padded positions are excluded from the divisor.
    pub fn avg_pool2d(&self, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
        let [n, c, h, w] = dims4("avg_pool2d", self)?;
        let ho = out_len("avg_pool2d", "height axis", h, kernel, stride, padding)?;
        let wo = out_len("avg_pool2d", "width axis", w, kernel, stride, padding)?;
        let windows = pool_windows(h, w, ho, wo, kernel, stride, padding);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in self.values.chunks(h * w) {
            for win in &windows {
                let s: f64 = win.iter().map(|&i| plane[i]).sum();
                out.push(s / win.len() as f64);
            }
        }
        let in_len = self.numel();
        Ok(record("avg_pool2d", &[self], vec![n, c, ho, wo], out, 0, move |g, _| {
            let mut gi = vec![0.0; in_len];
            for (p, gp) in g.chunks(ho * wo).enumerate() {
                let plane = &mut gi[p * h * w..(p + 1) * h * w];
                for (win, &gv) in windows.iter().zip(gp) {
                    let share = gv / win.len() as f64;
                    for &i in win {
                        plane[i] += share;
                    }
                }
            }
            vec![Some(gi)]
        }))
    }

    /// Max pooling over in-bounds window positions. Ties go to the first
    /// maximal element in row-major window order.
    pub fn max_pool2d(&self, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
        let [n, c, h, w] = dims4("max_pool2d", self)?;
        let ho = out_len("max_pool2d", "height axis", h, kernel, stride, padding)?;
        let wo = out_len("max_pool2d", "width axis", w, kernel, stride, padding)?;
        let windows = pool_windows(h, w, ho, wo, kernel, stride, padding);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for (p, plane) in self.values.chunks(h * w).enumerate() {
            for win in &windows {
                let mut best = win[0];
                for &i in &win[1..] {
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
                out.push(plane[best]);
                argmax.push(p * h * w + best);
            }
        }
        let in_len = self.numel();
        Ok(record("max_pool2d", &[self], vec![n, c, ho, wo], out, 1, move |g, _| {
            let mut gi = vec![0.0; in_len];
            for (&src, gv) in argmax.iter().zip(g) {
                gi[src] += gv;
            }
            vec![Some(gi)]
        }))
    }

    /// Nearest-neighbour upsampling by an integer factor on both spatial axes.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor> {
        let [n, c, h, w] = dims4("upsample_nearest", self)?;
        if factor == 0 {
            return Err(Error::Contract("upsample factor must be positive".into()));
        }
        let (ho, wo) = (h * factor, w * factor);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in self.values.chunks(h * w) {
            for y in 0..ho {
                for x in 0..wo {
                    out.push(plane[(y / factor) * w + x / factor]);
                }
            }
        }
        let in_len = self.numel();
        Ok(record("upsample_nearest", &[self], vec![n, c, ho, wo], out, 0, move |g, _| {
            let mut gi = vec![0.0; in_len];
            for (p, gp) in g.chunks(ho * wo).enumerate() {
                for y in 0..ho {
                    for x in 0..wo {
                        gi[p * h * w + (y / factor) * w + x / factor] += gp[y * wo + x];
                    }
                }
            }
            vec![Some(gi)]
        }))
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    /// Valid output ranges per kernel row and column offset.
    fn ranges(&self) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let rows = (0..self.kh).map(|i| valid_range(self.ho, self.h, self.stride, self.pad, i)).collect();
        let cols = (0..self.kw).map(|j| valid_range(self.wo, self.w, self.stride, self.pad, j)).collect();
        (rows, cols)
    }

    /// Unfolds one `[C,H,W]` image into `[C*kh*kw, Ho*Wo]`, zeros at padding.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let (rows, cs) = self.ranges();
        let plane_out = self.ho * self.wo;
        cols.iter_mut().for_each(|v| *v = 0.0);
        for ci in 0..self.c {
            let src = &img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for (i, &(y0, y1)) in rows.iter().enumerate() {
                for (j, &(x0, x1)) in cs.iter().enumerate() {
                    let q = (ci * self.kh + i) * self.kw + j;
                    let dst = &mut cols[q * plane_out..(q + 1) * plane_out];
                    for oy in y0..y1 {
                        let iy = oy * self.stride + i - self.pad;
                        let row = &src[iy * self.w..(iy + 1) * self.w];
                        for ox in x0..x1 {
                            dst[oy * self.wo + ox] = row[ox * self.stride + j - self.pad];
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters columns back, accumulating.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let (rows, cs) = self.ranges();
        let plane_out = self.ho * self.wo;
        for ci in 0..self.c {
            let dst = &mut img[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for (i, &(y0, y1)) in rows.iter().enumerate() {
                for (j, &(x0, x1)) in cs.iter().enumerate() {
                    let q = (ci * self.kh + i) * self.kw + j;
                    let src = &cols[q * plane_out..(q + 1) * plane_out];
                    for oy in y0..y1 {
                        let iy = oy * self.stride + i - self.pad;
                        for ox in x0..x1 {
                            dst[iy * self.w + ox * self.stride + j - self.pad] += src[oy * self.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// In-bounds flat plane indices of each pooling window, row-major.
fn pool_windows(h: usize, w: usize, ho: usize, wo: usize, k: usize, stride: usize, pad: usize) -> Vec<Vec<usize>> {
    let mut windows = Vec::with_capacity(ho * wo);
    for oy in 0..ho {
        for ox in 0..wo {
            let mut win = Vec::with_capacity(k * k);
            for i in 0..k {
                let y = (oy * stride + i) as isize - pad as isize;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for j in 0..k {
                    let x = (ox * stride + j) as isize - pad as isize;
                    if x >= 0 && x < w as isize {
                        win.push(y as usize * w + x as usize);
                    }
                }
            }
            windows.push(win);
        }
    }
    windows
}
