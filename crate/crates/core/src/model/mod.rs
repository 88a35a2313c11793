//! The segmentation network.
//!
//! A strided convolutional encoder maps each frame to a stride-16 feature
//! map plus skip features at strides 2, 4 and 8. Memory features add a
//! mask-conditioned branch on top of the same image pathway. A stack of
//! cross-attention layers lets every query cell attend over the enabled
//! memory banks, and an FPN-style decoder turns the matched feature back
//! into a full-resolution logit map. Objects are processed one at a time
//! and fused with [`soft_aggregate`].

mod checkpoint;
mod infer;

use serde::{Deserialize, Serialize};

use ddmem_tensor::{Graph, Padding, ParamStore, Tensor, Var};

use crate::dataset::{BoxRegion, Mask, RgbImage};
use crate::error::{validation, Result};
use crate::memory::RecurrentCompressor;
use crate::nn::{embedding, seeded, Conv, LayerNorm, Linear};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use infer::{soft_aggregate, BankCombo, LowLevel, MatchOutput, OracleMode, SegmentationResult, Tracker};

/// Output stride of the encoder.
pub const STRIDE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature channels `C` of every memory bank.
    pub channels: usize,
    pub matcher_layers: usize,
    pub heads: usize,
    /// Encoder widths at strides 2, 4 and 8.
    pub encoder_widths: [usize; 3],
    /// Decoder widths at strides 8, 4 and 2.
    pub decoder_widths: [usize; 3],
    pub ffn_width: usize,
    /// Sinusoid features feeding the learned positional encoding.
    pub position_features: usize,
    pub gru_kernel: usize,
    pub max_objects: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            matcher_layers: 3,
            heads: 2,
            encoder_widths: [16, 24, 32],
            decoder_widths: [24, 16, 12],
            ffn_width: 64,
            position_features: 16,
            gru_kernel: 3,
            max_objects: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Smallest useful network, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            channels: 8,
            matcher_layers: 3,
            heads: 2,
            encoder_widths: [4, 6, 8],
            decoder_widths: [6, 4, 4],
            ffn_width: 8,
            position_features: 8,
            gru_kernel: 3,
            max_objects: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(validation(format!("{} channels not divisible by {} heads", self.channels, self.heads)));
        }
        if self.matcher_layers == 0 {
            return Err(validation("matcher needs at least one layer"));
        }
        if self.encoder_widths.contains(&0) || self.decoder_widths.contains(&0) || self.ffn_width == 0 {
            return Err(validation("layer widths must be positive"));
        }
        if self.position_features == 0 || self.position_features % 4 != 0 {
            return Err(validation("position features must be a positive multiple of 4"));
        }
        if self.gru_kernel % 2 == 0 {
            return Err(validation("compressor kernel must be odd"));
        }
        if self.max_objects == 0 || self.max_objects > 255 {
            return Err(validation("object capacity must be in 1..=255"));
        }
        Ok(())
    }
}

/// Which memory bank a token block came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Bank {
    Reference = 0,
    Global = 1,
    Local = 2,
}

#[derive(Clone, Debug)]
struct Encoder {
    stage2: Conv,
    stage4: Conv,
    stage8: Conv,
    refine8: Conv,
    stage16: Conv,
    refine16: Conv,
}

#[derive(Clone, Debug)]
struct MaskEncoder {
    down8: Conv,
    down16: Conv,
    project: Conv,
}

#[derive(Clone, Debug)]
struct MatchLayer {
    norm_query: LayerNorm,
    norm_memory: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    norm_ffn: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

#[derive(Clone, Debug)]
struct Matcher {
    layers: Vec<MatchLayer>,
    position: ddmem_tensor::ParamId,
    bank_embedding: ddmem_tensor::ParamId,
}

#[derive(Clone, Debug)]
struct Decoder {
    top: Conv,
    lateral: [Conv; 3],
    fuse: [Conv; 3],
    logit: Conv,
}

/// Skip features at strides 2, 4 and 8 plus the stride-16 query feature.
#[derive(Clone, Copy, Debug)]
pub struct QueryVars {
    pub feature: Var,
    pub skips: [Var; 3],
}

/// Weights plus the module layout that addresses them.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    encoder: Encoder,
    mask_encoder: MaskEncoder,
    matcher: Matcher,
    decoder: Decoder,
    compressor: RecurrentCompressor,
}

impl Model {
    /// Registers every parameter in a fixed order from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed);
        let mut store = ParamStore::new();
        let s = &mut store;
        let r = &mut rng;
        let c = config.channels;
        let [e2, e4, e8] = config.encoder_widths;
        let z = Padding::Zero;
        let encoder = Encoder {
            stage2: Conv::register(s, "encoder.stage2", 3, e2, 3, 2, z, r),
            stage4: Conv::register(s, "encoder.stage4", e2, e4, 3, 2, z, r),
            stage8: Conv::register(s, "encoder.stage8", e4, e8, 3, 2, z, r),
            refine8: Conv::register(s, "encoder.refine8", e8, e8, 3, 1, z, r),
            stage16: Conv::register(s, "encoder.stage16", e8, c, 3, 2, z, r),
            refine16: Conv::register(s, "encoder.refine16", c, c, 3, 1, z, r),
        };
        let mask_encoder = MaskEncoder {
            down8: Conv::register(s, "mask_encoder.down8", e4 + 2, e8, 3, 2, z, r),
            down16: Conv::register(s, "mask_encoder.down16", e8, c, 3, 2, z, r),
            project: Conv::register(s, "mask_encoder.project", c, c, 1, 1, z, r),
        };
        let f = config.ffn_width;
        let layers = (0..config.matcher_layers)
            .map(|i| {
                let n = |part: &str| format!("matcher.{i}.{part}");
                MatchLayer {
                    norm_query: LayerNorm::register(s, &n("norm_query"), c),
                    norm_memory: LayerNorm::register(s, &n("norm_memory"), c),
                    query: Linear::register(s, &n("query"), c, c, r),
                    key: Linear::register(s, &n("key"), c, c, r),
                    value: Linear::register(s, &n("value"), c, c, r),
                    output: Linear::register(s, &n("output"), c, c, r),
                    norm_ffn: LayerNorm::register(s, &n("norm_ffn"), c),
                    ffn_in: Linear::register(s, &n("ffn_in"), c, f, r),
                    ffn_out: Linear::register(s, &n("ffn_out"), f, c, r),
                }
            })
            .collect();
        let p = config.position_features;
        let matcher = Matcher {
            layers,
            position: embedding(s, "matcher.position", &[p, c], (3.0 / p as f64).sqrt(), r),
            bank_embedding: embedding(s, "matcher.bank_embedding", &[3, c], 0.5, r),
        };
        let rp = Padding::Replicate;
        let [d8, d4, d2] = config.decoder_widths;
        let decoder = Decoder {
            top: Conv::register(s, "decoder.top", c, d8, 3, 1, rp, r),
            lateral: [
                Conv::register(s, "decoder.lateral8", e8, d8, 1, 1, rp, r),
                Conv::register(s, "decoder.lateral4", e4, d4, 1, 1, rp, r),
                Conv::register(s, "decoder.lateral2", e2, d2, 1, 1, rp, r),
            ],
            fuse: [
                Conv::register(s, "decoder.fuse8", d8, d4, 3, 1, rp, r),
                Conv::register(s, "decoder.fuse4", d4, d2, 3, 1, rp, r),
                Conv::register(s, "decoder.fuse2", d2, d2, 3, 1, rp, r),
            ],
            logit: Conv::register(s, "decoder.logit", d2, 1, 3, 1, rp, r),
        };
        // Small initial logits keep the first cross-entropy steps tame.
        s.get_mut(decoder.logit.weight).data_mut().iter_mut().for_each(|v| *v *= 0.1);
        let compressor = RecurrentCompressor::register(s, "compressor", c, config.gru_kernel, r);
        Ok(Self { config, store, encoder, mask_encoder, matcher, decoder, compressor })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn compressor(&self) -> &RecurrentCompressor {
        &self.compressor
    }

    /// RGB bytes scaled to `[-1, 1]`, laid out `[3, H, W]`.
    pub fn image_tensor(image: &RgbImage) -> Tensor {
        let (w, h) = (image.width(), image.height());
        let raw = image.raw();
        Tensor::from_fn(&[3, h, w], |i| {
            let (ch, p) = (i / (h * w), i % (h * w));
            raw[p * 3 + ch] as f64 / 127.5 - 1.0
        })
    }

    pub fn query_vars(&self, g: &mut Graph, image: Var) -> QueryVars {
        let st = &self.store;
        let e = &self.encoder;
        let x = e.stage2.forward(g, st, image);
        let s2 = g.relu(x);
        let x = e.stage4.forward(g, st, s2);
        let s4 = g.relu(x);
        let x = e.stage8.forward(g, st, s4);
        let x = g.relu(x);
        let x = e.refine8.forward(g, st, x);
        let s8 = g.relu(x);
        let x = e.stage16.forward(g, st, s8);
        let x = g.relu(x);
        let feature = e.refine16.forward(g, st, x);
        QueryVars { feature, skips: [s2, s4, s8] }
    }

    /// Memory feature of one object: the frame's query feature plus a
    /// branch that sees the stride-4 image features, the pooled object mask
    /// and the pooled mask of every other labelled object.
    pub fn memory_var(&self, g: &mut Graph, query: &QueryVars, mask: &Mask, object: u16) -> Var {
        let st = &self.store;
        let m = &self.mask_encoder;
        let (height, width) = (mask.height(), mask.width());
        let (_, h4, w4) = g.value(query.skips[1]).dims3();
        let others: Vec<f64> = mask.labels().iter().map(|&l| (l != 0 && l != object) as u8 as f64).collect();
        let own = g.constant(average_pool(&mask.binary_f64(object), height, width, h4, w4));
        let others = g.constant(average_pool(&others, height, width, h4, w4));
        let x = g.concat(&[own, others, query.skips[1]]);
        let x = m.down8.forward(g, st, x);
        let x = g.relu(x);
        let x = m.down16.forward(g, st, x);
        let x = g.relu(x);
        let x = m.project.forward(g, st, x);
        g.add(query.feature, x)
    }

    /// Cross-attention of the query feature over the given banks. Query
    /// cells flagged inactive receive no attention and a zero output.
    pub fn match_var(&self, g: &mut Graph, query: Var, banks: &[(Bank, Var)], active: Option<&[bool]>) -> Var {
        let st = &self.store;
        let (c, h, w) = g.value(query).dims3();
        let n = h * w;
        assert!(!banks.is_empty(), "match_var: no memory banks");
        let pos_features = g.constant(position_features(h, w, self.config.position_features));
        let pos_w = g.param(st, self.matcher.position);
        let pos = g.matmul(pos_features, pos_w);

        let mut memory_parts = Vec::with_capacity(banks.len());
        let mut selector = vec![0.0; banks.len() * n * 3];
        for (b, &(kind, var)) in banks.iter().enumerate() {
            assert_eq!(g.value(var).dims3(), (c, h, w), "match_var: bank shape");
            let flat = g.reshape(var, &[c, n]);
            memory_parts.push(g.transpose(flat));
            for i in 0..n {
                selector[(b * n + i) * 3 + kind as usize] = 1.0;
            }
        }
        let memory = if memory_parts.len() == 1 { memory_parts[0] } else { g.concat(&memory_parts) };
        let mem_pos = if banks.len() == 1 {
            pos
        } else {
            let copies = vec![pos; banks.len()];
            g.concat(&copies)
        };
        let selector = g.constant(Tensor::new(&[banks.len() * n, 3], selector).expect("selector"));
        let bank_w = g.param(st, self.matcher.bank_embedding);
        let bank_emb = g.matmul(selector, bank_w);
        let key_offset = g.add(mem_pos, bank_emb);

        let flat = g.reshape(query, &[c, n]);
        let mut x = g.transpose(flat);
        let active_vec = active.map(<[bool]>::to_vec);
        for layer in &self.matcher.layers {
            let a = layer.norm_query.forward(g, st, x);
            let q = layer.query.forward(g, st, a);
            let q = g.add(q, pos);
            let m = layer.norm_memory.forward(g, st, memory);
            let k = layer.key.forward(g, st, m);
            let k = g.add(k, key_offset);
            let v = layer.value.forward(g, st, m);
            let att = g.attention(q, k, v, self.config.heads, active_vec.clone());
            let o = layer.output.forward(g, st, att);
            x = g.add(x, o);
            let a = layer.norm_ffn.forward(g, st, x);
            let hdn = layer.ffn_in.forward(g, st, a);
            let hdn = g.relu(hdn);
            let o = layer.ffn_out.forward(g, st, hdn);
            x = g.add(x, o);
        }
        if let Some(act) = active {
            let keep = Tensor::from_fn(&[n, c], |i| if act[i / c] { 1.0 } else { 0.0 });
            let keep = g.constant(keep);
            x = g.mul(x, keep);
        }
        let t = g.transpose(x);
        g.reshape(t, &[c, h, w])
    }

    /// Full-resolution `[1, H, W]` logits for one object.
    pub fn decode_var(&self, g: &mut Graph, gamma: Var, skips: &[Var; 3], height: usize, width: usize) -> Var {
        let st = &self.store;
        let d = &self.decoder;
        let x = d.top.forward(g, st, gamma);
        let mut x = g.relu(x);
        for level in 0..3 {
            let skip = skips[2 - level];
            let (_, sh, sw) = g.value(skip).dims3();
            let up = g.resize(x, sh, sw);
            let lat = d.lateral[level].forward(g, st, skip);
            let sum = g.add(up, lat);
            let fused = d.fuse[level].forward(g, st, sum);
            x = g.relu(fused);
        }
        let logit = d.logit.forward(g, st, x);
        g.resize(logit, height, width)
    }
}

/// Mean of a full-resolution map over each cell of an `oh x ow` grid.
fn average_pool(map: &[f64], height: usize, width: usize, oh: usize, ow: usize) -> Tensor {
    let mut sum = vec![0.0; oh * ow];
    let mut count = vec![0.0; oh * ow];
    for y in 0..height {
        let cy = (y * oh / height).min(oh - 1);
        for x in 0..width {
            let cx = (x * ow / width).min(ow - 1);
            sum[cy * ow + cx] += map[y * width + x];
            count[cy * ow + cx] += 1.0;
        }
    }
    let data = sum.iter().zip(&count).map(|(s, n)| if *n > 0.0 { s / n } else { 0.0 }).collect();
    Tensor::new(&[1, oh, ow], data).expect("pool shape")
}

/// Fixed sinusoids of normalised cell coordinates, `[h*w, features]`.
fn position_features(h: usize, w: usize, features: usize) -> Tensor {
    Tensor::from_fn(&[h * w, features], |i| {
        let (cell, f) = (i / features, i % features);
        let (y, x) = (cell / w, cell % w);
        let (u, v) = ((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
        let band = f / 4;
        let freq = std::f64::consts::PI * (1u64 << band.min(40)) as f64;
        match f % 4 {
            0 => (freq * u).sin(),
            1 => (freq * u).cos(),
            2 => (freq * v).sin(),
            _ => (freq * v).cos(),
        }
    })
}

/// Grid cells of an `h x w` stride-16 map that overlap a pixel window.
pub fn window_cells(window: &BoxRegion, h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for cy in 0..h {
        for cx in 0..w {
            let cell = BoxRegion { x0: cx * STRIDE, y0: cy * STRIDE, x1: (cx + 1) * STRIDE, y1: (cy + 1) * STRIDE };
            out[cy * w + cx] = cell.intersection(window) > 0;
        }
    }
    out
}
