//! Tape-based reverse-mode differentiation.
//!
//! Every op evaluates eagerly and records its inputs on the tape, so a
//! [`Graph`] doubles as an inference context: build it, read values, drop it.
//! Shape errors inside the graph are programming errors and panic; callers
//! validate user-facing inputs before building.

use std::collections::BTreeMap;

use crate::kernels::{self, ConvGeom, Padding};
use crate::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// Adds a `[C]` vector to every position of a `[C, ...]` tensor.
    AddLeading(Var, Var),
    /// Adds a `[C]` vector to every row of an `[N, C]` tensor.
    AddTrailing(Var, Var),
    /// Multiplies every row of an `[N, C]` tensor by a `[C]` vector.
    MulTrailing(Var, Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    MatMul(Var, Var),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    Resize(Var),
    LayerNorm { input: Var, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, active: Option<Vec<bool>>, probs: Vec<f64> },
    Sum(Var),
    Dice { logits: Var, target: Vec<f64>, eps: f64 },
    BootstrappedBce { logits: Var, target: Vec<f64>, selected: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf for a trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) {
        assert_eq!(self.shape(a), self.shape(b), "{op}: operand shapes differ");
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        let t = self.zip(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        let t = self.zip(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        let t = self.zip(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x + s);
        self.push(t, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(kernels::sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn add_leading(&mut self, x: Var, v: Var) -> Var {
        let (xs, vs) = (self.value(x), self.value(v));
        assert_eq!(vs.shape(), &[xs.shape()[0]], "add_leading: vector must match leading dim");
        let inner = xs.len() / xs.shape()[0];
        let mut t = xs.clone();
        for (chunk, b) in t.data_mut().chunks_mut(inner).zip(vs.data()) {
            chunk.iter_mut().for_each(|e| *e += b);
        }
        self.push(t, Op::AddLeading(x, v))
    }

    pub fn add_trailing(&mut self, x: Var, v: Var) -> Var {
        let (xs, vs) = (self.value(x), self.value(v));
        let c = *xs.shape().last().expect("rank >= 1");
        assert_eq!(vs.shape(), &[c], "add_trailing: vector must match trailing dim");
        let mut t = xs.clone();
        for row in t.data_mut().chunks_mut(c) {
            row.iter_mut().zip(vs.data()).for_each(|(e, b)| *e += b);
        }
        self.push(t, Op::AddTrailing(x, v))
    }

    pub fn mul_trailing(&mut self, x: Var, v: Var) -> Var {
        let (xs, vs) = (self.value(x), self.value(v));
        let c = *xs.shape().last().expect("rank >= 1");
        assert_eq!(vs.shape(), &[c], "mul_trailing: vector must match trailing dim");
        let mut t = xs.clone();
        for row in t.data_mut().chunks_mut(c) {
            row.iter_mut().zip(vs.data()).for_each(|(e, b)| *e *= b);
        }
        self.push(t, Op::MulTrailing(x, v))
    }

    /// Concatenates along the leading dimension (channels or token rows).
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rest = self.shape(parts[0])[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(&t.shape()[1..], rest.as_slice(), "concat: trailing dims differ");
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(rest);
        let t = Tensor::new(&shape, data).expect("concat shape");
        self.push(t, Op::Concat(parts.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshape(shape).expect("reshape element count");
        self.push(t, Op::Reshape(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (r, c) = x.dims2();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x.data()[i * c + j];
            }
        }
        let t = Tensor::new(&[c, r], out).expect("transpose");
        self.push(t, Op::Transpose(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        assert_eq!(k, k2, "matmul: inner dims differ");
        let mut out = vec![0.0; m * n];
        crate::linalg::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let t = Tensor::new(&[m, n], out).expect("matmul");
        self.push(t, Op::MatMul(a, b))
    }

    /// 2-D convolution of a `[C, H, W]` input with `[O, C, k, k]` weights.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize, padding: Padding) -> Var {
        let (c, h, w) = self.value(input).dims3();
        let ws = self.value(weight).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv2d: weight must be rank 4");
        assert_eq!(ws[1], c, "conv2d: weight expects {} input channels, got {c}", ws[1]);
        assert_eq!(ws[2], ws[3], "conv2d: square kernels only");
        let geom = ConvGeom { channels: c, height: h, width: w, kernel: ws[2], stride, pad, padding };
        assert!(h + 2 * pad >= ws[2] && w + 2 * pad >= ws[2], "conv2d: input smaller than kernel");
        let out_ch = ws[0];
        let bias_data = bias.map(|b| {
            assert_eq!(self.shape(b), &[out_ch], "conv2d: bias length");
            self.value(b).data()
        });
        let out = kernels::conv2d_forward(self.value(input).data(), self.value(weight).data(), bias_data, out_ch, &geom);
        let (oh, ow) = geom.out_hw();
        let t = Tensor::new(&[out_ch, oh, ow], out).expect("conv2d");
        self.push(t, Op::Conv2d { input, weight, bias, geom })
    }

    /// Bilinear resize of a `[C, H, W]` tensor (half-pixel centres).
    pub fn resize(&mut self, a: Var, out_h: usize, out_w: usize) -> Var {
        let (c, h, w) = self.value(a).dims3();
        if (h, w) == (out_h, out_w) {
            return a;
        }
        let out = kernels::resize_forward(self.value(a).data(), c, h, w, out_h, out_w);
        let t = Tensor::new(&[c, out_h, out_w], out).expect("resize");
        self.push(t, Op::Resize(a))
    }

    /// Normalises every row of an `[N, C]` tensor to zero mean, unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (n, c) = x.dims2();
        let mut out = vec![0.0; n * c];
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = &x.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::new(&[n, c], out).expect("layer_norm");
        self.push(t, Op::LayerNorm { input: a, inv_std })
    }

    /// Multi-head attention of `q: [N, C]` over `k, v: [M, C]`.
    ///
    /// Query rows whose `active` flag is false produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, active: Option<Vec<bool>>) -> Var {
        let (n, c) = self.value(q).dims2();
        let (m, ck) = self.value(k).dims2();
        assert_eq!(c, ck, "attention: query/key widths differ");
        assert_eq!(self.shape(v), &[m, c], "attention: value shape");
        assert!(heads > 0 && c % heads == 0, "attention: {c} channels not divisible by {heads} heads");
        if let Some(a) = &active {
            assert_eq!(a.len(), n, "attention: active mask length");
        }
        let (out, probs) = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            n,
            m,
            c,
            heads,
            active.as_deref(),
        );
        let t = Tensor::new(&[n, c], out).expect("attention");
        self.push(t, Op::Attention { q, k, v, heads, active, probs })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a))
    }

    /// Soft Dice loss `1 - (2 sum(P*G) + eps) / (sum(P) + sum(G) + eps)` with
    /// `P = sigmoid(logits)`.
    pub fn dice_loss(&mut self, logits: Var, target: &[f64], eps: f64) -> Var {
        let x = self.value(logits);
        assert_eq!(x.len(), target.len(), "dice_loss: target size");
        let (mut inter, mut union) = (0.0, 0.0);
        for (&l, &g) in x.data().iter().zip(target) {
            let p = kernels::sigmoid(l);
            inter += p * g;
            union += p + g;
        }
        let loss = 1.0 - (2.0 * inter + eps) / (union + eps);
        self.push(Tensor::scalar(loss), Op::Dice { logits, target: target.to_vec(), eps })
    }

    /// Mean binary cross-entropy over the hardest `keep` fraction of pixels.
    pub fn bootstrapped_bce(&mut self, logits: Var, target: &[f64], keep: f64) -> Var {
        assert!(keep > 0.0 && keep <= 1.0, "bootstrapped_bce: keep fraction {keep}");
        let x = self.value(logits);
        assert_eq!(x.len(), target.len(), "bootstrapped_bce: target size");
        let losses: Vec<f64> = x.data().iter().zip(target).map(|(&l, &t)| kernels::bce_with_logit(l, t)).collect();
        let count = kernels::bootstrap_count(losses.len(), keep);
        let selected = kernels::hardest_indices(&losses, count);
        let loss = selected.iter().map(|&i| losses[i]).sum::<f64>() / count as f64;
        self.push(Tensor::scalar(loss), Op::BootstrappedBce { logits, target: target.to_vec(), selected })
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::new(self.value(root).shape(), vec![1.0]).expect("scalar"));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self
            .params
            .iter()
            .filter_map(|(&id, &v)| grads.get(v.0).and_then(|g| g.clone()).map(|g| (id, g)))
            .collect();
        Gradients { nodes: grads, params }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(e) => e.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.shape(v), data).expect("grad shape");
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, like(*a, g.data().iter().zip(bv).map(|(x, y)| x * y).collect()));
                acc(*b, like(*b, g.data().iter().zip(av).map(|(x, y)| x * y).collect()));
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, like(*a, g.data().iter().zip(x).map(|(d, &v)| if v > 0.0 { *d } else { 0.0 }).collect()));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, like(*a, g.data().iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect()));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, like(*a, g.data().iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect()));
            }
            Op::AddLeading(x, v) => {
                let lead = self.shape(*x)[0];
                let inner = g.len() / lead;
                let dv = g.data().chunks(inner).map(|c| c.iter().sum()).collect();
                acc(*x, g.clone());
                acc(*v, like(*v, dv));
            }
            Op::AddTrailing(x, v) => {
                let c = self.shape(*v)[0];
                let mut dv = vec![0.0; c];
                for row in g.data().chunks(c) {
                    dv.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                acc(*x, g.clone());
                acc(*v, like(*v, dv));
            }
            Op::MulTrailing(x, v) => {
                let c = self.shape(*v)[0];
                let (xv, vv) = (self.value(*x).data(), self.value(*v).data());
                let mut dv = vec![0.0; c];
                let mut dx = vec![0.0; g.len()];
                for (r, row) in g.data().chunks(c).enumerate() {
                    for j in 0..c {
                        dv[j] += row[j] * xv[r * c + j];
                        dx[r * c + j] = row[j] * vv[j];
                    }
                }
                acc(*x, like(*x, dx));
                acc(*v, like(*v, dv));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, like(p, g.data()[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::Reshape(a) => acc(*a, like(*a, g.data().to_vec())),
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[i * c + j] = g.data()[j * r + i];
                    }
                }
                acc(*a, like(*a, out));
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.shape(*b)[1];
                let mut da = vec![0.0; m * k];
                crate::linalg::gemm(m, n, k, g.data(), false, self.value(*b).data(), true, &mut da, 0.0);
                let mut db = vec![0.0; k * n];
                crate::linalg::gemm(k, m, n, self.value(*a).data(), true, g.data(), false, &mut db, 0.0);
                acc(*a, like(*a, da));
                acc(*b, like(*b, db));
            }
            Op::Conv2d { input, weight, bias, geom } => {
                let out_ch = self.shape(*weight)[0];
                let (di, dw, db) =
                    kernels::conv2d_backward(self.value(*input).data(), self.value(*weight).data(), g.data(), out_ch, geom);
                acc(*input, like(*input, di));
                acc(*weight, like(*weight, dw));
                if let Some(b) = bias {
                    acc(*b, like(*b, db));
                }
            }
            Op::Resize(a) => {
                let (c, h, w) = self.value(*a).dims3();
                let (_, oh, ow) = node.value.dims3();
                acc(*a, like(*a, kernels::resize_backward(g.data(), c, h, w, oh, ow)));
            }
            Op::LayerNorm { input, inv_std } => {
                let (n, c) = node.value.dims2();
                let y = node.value.data();
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    let gy = &g.data()[i * c..(i + 1) * c];
                    let yr = &y[i * c..(i + 1) * c];
                    let mean_g = gy.iter().sum::<f64>() / c as f64;
                    let mean_gy = gy.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dx[i * c + j] = inv_std[i] * (gy[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                acc(*input, like(*input, dx));
            }
            Op::Attention { q, k, v, heads, active, probs } => {
                let (n, c) = self.value(*q).dims2();
                let m = self.shape(*k)[0];
                let (dq, dk, dv) = kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g.data(),
                    n,
                    m,
                    c,
                    *heads,
                    active.as_deref(),
                );
                acc(*q, like(*q, dq));
                acc(*k, like(*k, dk));
                acc(*v, like(*v, dv));
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                acc(*a, Tensor::full(self.shape(*a), s));
            }
            Op::Dice { logits, target, eps } => {
                let x = self.value(*logits).data();
                let p: Vec<f64> = x.iter().map(|&l| kernels::sigmoid(l)).collect();
                let inter: f64 = p.iter().zip(target).map(|(a, b)| a * b).sum();
                let union: f64 = p.iter().sum::<f64>() + target.iter().sum::<f64>();
                let den = union + eps;
                let num = 2.0 * inter + eps;
                let s = g.data()[0];
                let d = p
                    .iter()
                    .zip(target)
                    .map(|(&pi, &gi)| -s * (2.0 * gi * den - num) / (den * den) * pi * (1.0 - pi))
                    .collect();
                acc(*logits, like(*logits, d));
            }
            Op::BootstrappedBce { logits, target, selected } => {
                let x = self.value(*logits).data();
                let s = g.data()[0] / selected.len() as f64;
                let mut d = vec![0.0; x.len()];
                for &i in selected {
                    d[i] = s * (kernels::sigmoid(x[i]) - target[i]);
                }
                acc(*logits, like(*logits, d));
            }
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient with respect to any node reachable from the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }

    pub fn into_params(self) -> Vec<(ParamId, Tensor)> {
        self.params
    }
}
