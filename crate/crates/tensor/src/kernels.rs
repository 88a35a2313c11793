//! Forward and backward kernels used by the graph ops.

use crate::linalg::gemm;

/// How convolutions treat samples that fall outside the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Clamp to the nearest edge sample. A constant input then yields a
    /// constant output everywhere, borders included.
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub padding: Padding,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        let oh = (self.height + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (self.width + 2 * self.pad - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        let (h, w) = (self.height as isize, self.width as isize);
        match self.padding {
            Padding::Zero => {
                if y < 0 || x < 0 || y >= h || x >= w {
                    None
                } else {
                    Some((y as usize, x as usize))
                }
            }
            Padding::Replicate => Some((y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize)),
        }
    }
}

/// Unfolds `[C, H, W]` into a `(C*k*k) x (OH*OW)` matrix.
pub fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = g.out_hw();
    let k = g.kernel;
    let p = oh * ow;
    let mut cols = vec![0.0; g.channels * k * k * p];
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * p;
                for oy in 0..oh {
                    for ox in 0..ow {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            cols[row + oy * ow + ox] = plane[y * g.width + x];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = g.out_hw();
    let k = g.kernel;
    let p = oh * ow;
    let mut out = vec![0.0; g.channels * g.height * g.width];
    for c in 0..g.channels {
        let base = c * g.height * g.width;
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * p;
                for oy in 0..oh {
                    for ox in 0..ow {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            out[base + y * g.width + x] += cols[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d_forward(input: &[f64], weight: &[f64], bias: Option<&[f64]>, out_ch: usize, g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let ckk = g.channels * g.kernel * g.kernel;
    let mut out = vec![0.0; out_ch * p];
    if let Some(b) = bias {
        for (o, chunk) in out.chunks_mut(p).enumerate() {
            chunk.fill(b[o]);
        }
    }
    if g.kernel == 1 && g.stride == 1 && g.pad == 0 {
        gemm(out_ch, ckk, p, weight, false, input, false, &mut out, 1.0);
    } else {
        let cols = im2col(input, g);
        gemm(out_ch, ckk, p, weight, false, &cols, false, &mut out, 1.0);
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn conv2d_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    out_ch: usize,
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let ckk = g.channels * g.kernel * g.kernel;
    let pointwise = g.kernel == 1 && g.stride == 1 && g.pad == 0;
    let cols_owned;
    let cols: &[f64] = if pointwise {
        input
    } else {
        cols_owned = im2col(input, g);
        &cols_owned
    };
    let mut d_weight = vec![0.0; out_ch * ckk];
    gemm(out_ch, p, ckk, grad_out, false, cols, true, &mut d_weight, 0.0);
    let mut d_cols = vec![0.0; ckk * p];
    gemm(ckk, out_ch, p, weight, true, grad_out, false, &mut d_cols, 0.0);
    let d_input = if pointwise { d_cols } else { col2im(&d_cols, g) };
    let d_bias = grad_out.chunks(p).map(|c| c.iter().sum()).collect();
    (d_input, d_weight, d_bias)
}

/// Source index pairs and interpolation weight along one axis for
/// half-pixel-centred bilinear resizing.
fn axis_weights(inp: usize, out: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_forward(input: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ys = axis_weights(h, oh);
    let xs = axis_weights(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - lx) + plane[y0 * w + x1] * lx;
                let bot = plane[y1 * w + x0] * (1.0 - lx) + plane[y1 * w + x1] * lx;
                dst[oy * ow + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    out
}

pub fn resize_backward(grad_out: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ys = axis_weights(h, oh);
    let xs = axis_weights(w, ow);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let g = src[oy * ow + ox];
                dst[y0 * w + x0] += g * (1.0 - ly) * (1.0 - lx);
                dst[y0 * w + x1] += g * (1.0 - ly) * lx;
                dst[y1 * w + x0] += g * ly * (1.0 - lx);
                dst[y1 * w + x1] += g * ly * lx;
            }
        }
    }
    out
}

/// Multi-head scaled dot-product attention on token matrices.
///
/// `q` is `n x c`, `k` and `v` are `m x c`. Rows of `q` whose entry in
/// `active` is false attend to nothing and produce zeros. Returns the output
/// and the per-head attention probabilities (`heads x n x m`).
pub fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    n: usize,
    m: usize,
    c: usize,
    heads: usize,
    active: Option<&[bool]>,
) -> (Vec<f64>, Vec<f64>) {
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; n * c];
    let mut probs = vec![0.0; heads * n * m];
    let mut row = vec![0.0; m];
    for h in 0..heads {
        let off = h * d;
        for i in 0..n {
            if active.is_some_and(|a| !a[i]) {
                continue;
            }
            let qi = &q[i * c + off..i * c + off + d];
            let mut max = f64::NEG_INFINITY;
            for (j, r) in row.iter_mut().enumerate() {
                let kj = &k[j * c + off..j * c + off + d];
                let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                *r = s;
                max = max.max(s);
            }
            let mut z = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                z += *r;
            }
            let p = &mut probs[(h * n + i) * m..(h * n + i + 1) * m];
            for (pj, r) in p.iter_mut().zip(&row) {
                *pj = r / z;
            }
            let o = &mut out[i * c + off..i * c + off + d];
            for (j, &pj) in p.iter().enumerate() {
                let vj = &v[j * c + off..j * c + off + d];
                for (ov, vv) in o.iter_mut().zip(vj) {
                    *ov += pj * vv;
                }
            }
        }
    }
    (out, probs)
}

/// Returns `(d_q, d_k, d_v)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    grad_out: &[f64],
    n: usize,
    m: usize,
    c: usize,
    heads: usize,
    active: Option<&[bool]>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = vec![0.0; n * c];
    let mut dk = vec![0.0; m * c];
    let mut dv = vec![0.0; m * c];
    let mut dp = vec![0.0; m];
    for h in 0..heads {
        let off = h * d;
        for i in 0..n {
            if active.is_some_and(|a| !a[i]) {
                continue;
            }
            let p = &probs[(h * n + i) * m..(h * n + i + 1) * m];
            let go = &grad_out[i * c + off..i * c + off + d];
            let mut dot = 0.0;
            for j in 0..m {
                let vj = &v[j * c + off..j * c + off + d];
                let g = go.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                dp[j] = g;
                dot += g * p[j];
                let dvj = &mut dv[j * c + off..j * c + off + d];
                for (x, y) in dvj.iter_mut().zip(go) {
                    *x += p[j] * y;
                }
            }
            for j in 0..m {
                let ds = p[j] * (dp[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for t in 0..d {
                    dq[i * c + off + t] += ds * k[j * c + off + t];
                    dk[j * c + off + t] += ds * q[i * c + off + t];
                }
            }
        }
    }
    (dq, dk, dv)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit against a {0,1} target, computed stably.
pub fn bce_with_logit(x: f64, target: f64) -> f64 {
    x.max(0.0) - x * target + (-x.abs()).exp().ln_1p()
}

/// Number of hardest pixels kept by bootstrapping `n` terms at `keep`.
pub fn bootstrap_count(n: usize, keep: f64) -> usize {
    ((keep * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Indices of the `count` largest losses, ties broken by index.
pub fn hardest_indices(losses: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}
