//! Fixed-size memory banks and the recurrent global-memory compressor.
//!
//! Per object the model keeps three `C x h x w` maps:
//!
//! * reference: the first frame encoded with its groundtruth mask, never updated;
//! * local: the most recently segmented frame;
//! * global: a convolutional GRU summary of every frame that has left the
//!   local slot.
//!
//! After each frame the displaced local feature is folded into the global
//! bank and the new frame becomes local, so `global(t) = GRU(global(t-1),
//! f(t-2))` while `local(t) = f(t-1)`. Nothing else is stored, so the
//! footprint does not depend on video length.

use ddmem_tensor::{Graph, Padding, ParamStore, Tensor, Var};

use crate::error::{validation, Error, Result};
use crate::nn::{Conv, Rng64};

/// Feature map at stride 16: `[C, ceil(H/16), ceil(W/16)]`, all finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.ndim() != 3 {
            return Err(validation(format!("feature map must be [C, h, w], got {:?}", t.shape())));
        }
        if !t.is_finite() {
            return Err(validation("feature map contains non-finite values"));
        }
        Ok(Self(t))
    }

    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        Self(Tensor::zeros(&[channels, h, w]))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.dims3()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Spatial size of a stride-16 feature map for an image (ceiling division).
pub fn feature_size(height: usize, width: usize, stride: usize) -> (usize, usize) {
    (height.div_ceil(stride), width.div_ceil(stride))
}

/// Reference, global and local banks for one object.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState {
    pub reference: FeatureMap,
    pub global: FeatureMap,
    pub local: FeatureMap,
    pub frames_absorbed: u64,
}

/// Convolutional GRU over concatenated `[state; input]` channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecurrentCompressor {
    pub update_gate: Conv,
    pub reset_gate: Conv,
    pub candidate: Conv,
    pub channels: usize,
}

impl RecurrentCompressor {
    /// Registers the three gate convolutions. Gate biases start at zero so the
    /// update gate opens halfway.
    pub fn register(store: &mut ParamStore, name: &str, channels: usize, kernel: usize, rng: &mut Rng64) -> Self {
        let conv = |store: &mut ParamStore, part: &str, rng: &mut Rng64| {
            let c = Conv::register(store, &format!("{name}.{part}"), 2 * channels, channels, kernel, 1, Padding::Zero, rng);
            // Keep the initial recurrence contractive.
            store.get_mut(c.weight).data_mut().iter_mut().for_each(|v| *v *= 0.5);
            c
        };
        let update_gate = conv(store, "update", rng);
        let reset_gate = conv(store, "reset", rng);
        let candidate = conv(store, "candidate", rng);
        Self { update_gate, reset_gate, candidate, channels }
    }

    /// `z = σ(Wz*[h;x])`, `r = σ(Wr*[h;x])`, `c = tanh(Wc*[r⊙h; x])`,
    /// `h' = (1-z)⊙h + z⊙c`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, state: Var, input: Var) -> Var {
        let hx = g.concat(&[state, input]);
        let zl = self.update_gate.forward(g, store, hx);
        let z = g.sigmoid(zl);
        let rl = self.reset_gate.forward(g, store, hx);
        let r = g.sigmoid(rl);
        let rh = g.mul(r, state);
        let rhx = g.concat(&[rh, input]);
        let cl = self.candidate.forward(g, store, rhx);
        let c = g.tanh(cl);
        let diff = g.sub(c, state);
        let step = g.mul(z, diff);
        g.add(state, step)
    }
}

/// Runs the compressor once outside of training.
pub fn recurrent_compress(
    state: &FeatureMap,
    input: &FeatureMap,
    gru: &RecurrentCompressor,
    store: &ParamStore,
) -> Result<FeatureMap> {
    if state.shape() != input.shape() {
        return Err(validation(format!("compressor state {:?} vs input {:?}", state.shape(), input.shape())));
    }
    if state.shape().0 != gru.channels {
        return Err(validation(format!("compressor expects {} channels, got {}", gru.channels, state.shape().0)));
    }
    let mut g = Graph::new();
    let s = g.constant(state.tensor().clone());
    let x = g.constant(input.tensor().clone());
    let out = gru.forward(&mut g, store, s, x);
    FeatureMap::new(g.value(out).clone())
}

/// All three banks start as the first frame's memory feature.
pub fn init_memory(first: FeatureMap) -> Result<MemoryState> {
    if !first.tensor().is_finite() {
        return Err(validation("first-frame feature contains non-finite values"));
    }
    Ok(MemoryState { reference: first.clone(), global: first.clone(), local: first, frames_absorbed: 1 })
}

/// Folds the displaced local feature into global and stores `new` as local.
pub fn update_memory(
    state: &MemoryState,
    new: FeatureMap,
    gru: &RecurrentCompressor,
    store: &ParamStore,
) -> Result<MemoryState> {
    if new.shape() != state.local.shape() {
        return Err(validation(format!("new feature {:?} vs memory {:?}", new.shape(), state.local.shape())));
    }
    let global = recurrent_compress(&state.global, &state.local, gru, store)?;
    Ok(MemoryState { reference: state.reference.clone(), global, local: new, frames_absorbed: state.frames_absorbed + 1 })
}

/// Stored real values across the three banks.
pub fn memory_footprint(state: &MemoryState) -> usize {
    state.reference.len() + state.global.len() + state.local.len()
}

/// Memory banks as graph nodes, for training through the recurrence.
#[derive(Clone, Copy, Debug)]
pub struct MemoryVars {
    pub reference: Var,
    pub global: Var,
    pub local: Var,
}

impl MemoryVars {
    pub fn init(first: Var) -> Self {
        Self { reference: first, global: first, local: first }
    }

    pub fn from_state(g: &mut Graph, state: &MemoryState) -> Self {
        Self {
            reference: g.constant(state.reference.tensor().clone()),
            global: g.constant(state.global.tensor().clone()),
            local: g.constant(state.local.tensor().clone()),
        }
    }

    pub fn update(self, g: &mut Graph, store: &ParamStore, gru: &RecurrentCompressor, new: Var) -> Self {
        let global = gru.forward(g, store, self.global, self.local);
        Self { reference: self.reference, global, local: new }
    }

    /// Folds the local bank into the global bank again, keeping local.
    pub fn fold(self, g: &mut Graph, store: &ParamStore, gru: &RecurrentCompressor) -> Self {
        let global = gru.forward(g, store, self.global, self.local);
        Self { global, ..self }
    }
}

const STATE_MAGIC: &[u8; 8] = b"DDMSTATE";
const STATE_VERSION: u32 = 1;

impl MemoryState {
    /// Checkpoint blob: magic `DDMSTATE`, then little-endian `u32` version,
    /// `u32` C, `u32` h, `u32` w, `u64` frames absorbed, then reference,
    /// global and local banks as `f64` in `[C, h, w]` order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, h, w) = self.reference.shape();
        let mut out = Vec::with_capacity(32 + 3 * 8 * c * h * w);
        out.extend_from_slice(STATE_MAGIC);
        for v in [STATE_VERSION, c as u32, h as u32, w as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.frames_absorbed.to_le_bytes());
        for bank in [&self.reference, &self.global, &self.local] {
            for v in bank.tensor().data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |why: &str| Error::Validation(format!("memory checkpoint: {why}"));
        if bytes.len() < 32 || &bytes[..8] != STATE_MAGIC {
            return Err(bad("missing header"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        if u32_at(8) != STATE_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let (c, h, w) = (u32_at(12), u32_at(16), u32_at(20));
        let frames_absorbed = u64::from_le_bytes(bytes[24..32].try_into().expect("8 bytes"));
        let n = c * h * w;
        if bytes.len() != 32 + 3 * 8 * n {
            return Err(bad("length does not match header shape"));
        }
        let mut banks = bytes[32..]
            .chunks_exact(8 * n.max(1))
            .take(3)
            .map(|chunk| {
                let data = chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
                FeatureMap::new(Tensor::new(&[c, h, w], data).map_err(|e| bad(&e.to_string()))?)
            })
            .collect::<Result<Vec<_>>>()?;
        if banks.len() != 3 {
            return Err(bad("expected three banks"));
        }
        let local = banks.pop().expect("three");
        let global = banks.pop().expect("three");
        let reference = banks.pop().expect("three");
        Ok(Self { reference, global, local, frames_absorbed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded;
    use proptest::prelude::*;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        use rand::Rng;
        let mut rng = seeded(seed);
        FeatureMap::new(Tensor::from_fn(&[c, h, w], |_| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn compressor(c: usize, k: usize, seed: u64) -> (ParamStore, RecurrentCompressor) {
        let mut store = ParamStore::new();
        let gru = RecurrentCompressor::register(&mut store, "gru", c, k, &mut seeded(seed));
        (store, gru)
    }

    fn set_bias(store: &mut ParamStore, conv: Conv, v: f64) {
        store.get_mut(conv.bias).data_mut().iter_mut().for_each(|b| *b = v);
    }

    #[test]
    fn init_copies_into_all_banks() {
        let f = random_map(4, 2, 3, 1);
        let s = init_memory(f.clone()).unwrap();
        assert_eq!((s.reference == f, s.global == f, s.local == f, s.frames_absorbed), (true, true, true, 1));
        let zero = init_memory(FeatureMap::zeros(2, 1, 1)).unwrap();
        assert_eq!(zero.reference.tensor().sum(), 0.0);
    }

    #[test]
    fn nan_features_are_rejected() {
        let mut t = Tensor::zeros(&[1, 2, 2]);
        t.data_mut()[3] = f64::NAN;
        assert!(FeatureMap::new(t).is_err());
    }

    #[test]
    fn closed_update_gate_returns_state() {
        let (mut store, gru) = compressor(3, 3, 2);
        set_bias(&mut store, gru.update_gate, -1e4);
        let (s, x) = (random_map(3, 4, 4, 3), random_map(3, 4, 4, 4));
        let out = recurrent_compress(&s, &x, &gru, &store).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn open_gates_give_tanh_candidate() {
        let (mut store, gru) = compressor(3, 3, 5);
        set_bias(&mut store, gru.update_gate, 1e4);
        set_bias(&mut store, gru.reset_gate, 1e4);
        let (s, x) = (random_map(3, 4, 4, 6), random_map(3, 4, 4, 7));
        let out = recurrent_compress(&s, &x, &gru, &store).unwrap();
        let mut g = Graph::new();
        let hx = {
            let a = g.constant(s.tensor().clone());
            let b = g.constant(x.tensor().clone());
            g.concat(&[a, b])
        };
        let c = gru.candidate.forward(&mut g, &store, hx);
        let want = g.value(c).map(f64::tanh);
        for (a, b) in out.tensor().data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn scalar_kernels_match_hand_computation() {
        // One channel, 1x1 kernels, 2x2 spatial grid.
        let mut store = ParamStore::new();
        let gru = RecurrentCompressor::register(&mut store, "gru", 1, 1, &mut seeded(0));
        let set = |store: &mut ParamStore, conv: Conv, w: [f64; 2], b: f64| {
            store.get_mut(conv.weight).data_mut().copy_from_slice(&w);
            store.get_mut(conv.bias).data_mut()[0] = b;
        };
        set(&mut store, gru.update_gate, [0.3, -0.7], 0.1);
        set(&mut store, gru.reset_gate, [-0.4, 0.9], -0.2);
        set(&mut store, gru.candidate, [1.1, 0.5], 0.05);
        let h = [0.2, -0.5, 0.9, 0.0];
        let x = [-0.3, 0.8, 0.4, -1.0];
        let state = FeatureMap::new(Tensor::new(&[1, 2, 2], h.to_vec()).unwrap()).unwrap();
        let input = FeatureMap::new(Tensor::new(&[1, 2, 2], x.to_vec()).unwrap()).unwrap();
        let out = recurrent_compress(&state, &input, &gru, &store).unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for i in 0..4 {
            let z = sig(0.3 * h[i] - 0.7 * x[i] + 0.1);
            let r = sig(-0.4 * h[i] + 0.9 * x[i] - 0.2);
            let c = (1.1 * r * h[i] + 0.5 * x[i] + 0.05).tanh();
            let want = (1.0 - z) * h[i] + z * c;
            assert!((out.tensor().data()[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn first_update_folds_reference_into_global() {
        let (store, gru) = compressor(2, 3, 8);
        let f1 = random_map(2, 3, 3, 9);
        let f2 = random_map(2, 3, 3, 10);
        let s = update_memory(&init_memory(f1.clone()).unwrap(), f2.clone(), &gru, &store).unwrap();
        assert_eq!(s.global, recurrent_compress(&f1, &f1, &gru, &store).unwrap());
        assert_eq!(s.local, f2);
        assert_eq!(s.reference, f1);
        assert_eq!(s.frames_absorbed, 2);
    }

    #[test]
    fn fold_compresses_local_into_global_and_keeps_the_rest() {
        let (store, gru) = compressor(2, 3, 14);
        let (r, gl, l) = (random_map(2, 2, 3, 15), random_map(2, 2, 3, 16), random_map(2, 2, 3, 17));
        let mut g = Graph::new();
        let vars = MemoryVars {
            reference: g.constant(r.tensor().clone()),
            global: g.constant(gl.tensor().clone()),
            local: g.constant(l.tensor().clone()),
        };
        let folded = vars.fold(&mut g, &store, &gru);
        assert_eq!((folded.reference, folded.local), (vars.reference, vars.local));
        assert_eq!(g.value(folded.global), recurrent_compress(&gl, &l, &gru, &store).unwrap().tensor());
    }

    #[test]
    fn reference_and_footprint_are_invariant_over_long_runs() {
        let (store, gru) = compressor(2, 3, 11);
        let mut s = init_memory(random_map(2, 2, 2, 12)).unwrap();
        let start = memory_footprint(&s);
        let after_one = update_memory(&s, random_map(2, 2, 2, 13), &gru, &store).unwrap().reference;
        let mut at_five = 0;
        for t in 0..1000 {
            s = update_memory(&s, random_map(2, 2, 2, 100 + t), &gru, &store).unwrap();
            if t == 4 {
                at_five = memory_footprint(&s);
            }
        }
        assert_eq!(s.reference, after_one);
        assert_eq!(memory_footprint(&s), start);
        assert_eq!(at_five, start);
        assert_eq!(s.frames_absorbed, 1001);
    }

    #[test]
    fn footprint_arithmetic() {
        let s = init_memory(FeatureMap::zeros(8, 4, 4)).unwrap();
        assert_eq!(memory_footprint(&s), 384);
        let wide = init_memory(FeatureMap::zeros(16, 4, 4)).unwrap();
        assert_eq!(memory_footprint(&wide), 2 * 384);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (store, gru) = compressor(2, 3, 14);
        let s = init_memory(FeatureMap::zeros(2, 2, 2)).unwrap();
        assert!(update_memory(&s, FeatureMap::zeros(2, 3, 2), &gru, &store).is_err());
        assert!(recurrent_compress(&FeatureMap::zeros(2, 2, 2), &FeatureMap::zeros(2, 2, 3), &gru, &store).is_err());
    }

    #[test]
    fn checkpoint_blob_round_trips() {
        let (store, gru) = compressor(2, 3, 15);
        let s = update_memory(&init_memory(random_map(2, 3, 2, 16)).unwrap(), random_map(2, 3, 2, 17), &gru, &store).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..8], b"DDMSTATE");
        assert_eq!(bytes.len(), 32 + 3 * 8 * 12);
        assert_eq!(MemoryState::from_bytes(&bytes).unwrap(), s);
        assert!(MemoryState::from_bytes(&bytes[..40]).is_err());
    }

    #[test]
    fn ceiling_feature_size() {
        assert_eq!(feature_size(64, 64, 16), (4, 4));
        assert_eq!(feature_size(15, 15, 16), (1, 1));
        assert_eq!(feature_size(96, 100, 16), (6, 7));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gate_limits_hold_for_random_states(seed in any::<u64>()) {
            let (mut store, gru) = compressor(2, 3, seed);
            let (s, x) = (random_map(2, 3, 3, seed ^ 1), random_map(2, 3, 3, seed ^ 2));
            let free = recurrent_compress(&s, &x, &gru, &store).unwrap();
            // Convex combination of the state and a tanh candidate.
            let bound = s.tensor().max_abs().max(1.0);
            prop_assert!(free.tensor().max_abs() <= bound + 1e-12);
            set_bias(&mut store, gru.update_gate, -1e4);
            prop_assert_eq!(recurrent_compress(&s, &x, &gru, &store).unwrap(), s);
        }
    }
}
