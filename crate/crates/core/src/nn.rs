//! Parameter registration helpers and seeded initialisation.

use ddmem_tensor::{Graph, Padding, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng64 = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], bound: f64, rng: &mut Rng64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Convolution weights and bias with He-uniform initialisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut Rng64,
    ) -> Self {
        let fan_in = (inp * kernel * kernel) as f64;
        let weight = store.add(format!("{name}.weight"), uniform(&[out, inp, kernel, kernel], (6.0 / fan_in).sqrt(), rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out]));
        Self { weight, bias, stride, padding }
    }

    pub fn kernel(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[2]
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let k = self.kernel(store);
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, k / 2, self.padding)
    }
}

/// Dense layer over token rows: `[N, in] -> [N, out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut Rng64) -> Self {
        let bound = (3.0 / inp as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(&[inp, out], bound, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out]));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w);
        g.add_trailing(y, b)
    }
}

/// Row layer norm with learned gain and offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub fn register(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[width], 1.0));
        let offset = store.add(format!("{name}.offset"), Tensor::zeros(&[width]));
        Self { gain, offset }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm(x, 1e-5);
        let gain = g.param(store, self.gain);
        let off = g.param(store, self.offset);
        let y = g.mul_trailing(n, gain);
        g.add_trailing(y, off)
    }
}

/// Small random tensor, used for embeddings.
pub fn embedding(store: &mut ParamStore, name: &str, shape: &[usize], scale: f64, rng: &mut Rng64) -> ParamId {
    store.add(name, uniform(shape, scale, rng))
}
