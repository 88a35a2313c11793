//! Losses and the two-phase training schedule.
//!
//! Phase one fabricates three-frame clips from single annotated frames by
//! random affine and sinusoidal warps. Phase two samples multi-frame clips
//! from videos, including long jumps across disappearances, and carries
//! memory through the clip so gradients reach the recurrent compressor.
//! Each clip's loss is Dice plus bootstrapped cross-entropy per object.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use ddmem_tensor::{clip_grad_norm, AdamW, Graph, ParamId, Tensor, Var};

use crate::dataset::{Mask, RgbImage, SequenceRecord};
use crate::error::{validation, Error, Result};
use crate::memory::MemoryVars;
use crate::model::{soft_aggregate, window_cells, Bank, BankCombo, Model};
use crate::nn::{seeded, Rng64};

/// Smoothing term of the Dice loss.
pub const DICE_EPS: f64 = 1.0;

fn check_logits(logits: &[f64], target: &Mask) -> Result<()> {
    if logits.len() != target.width() * target.height() {
        return Err(validation(format!(
            "{} logits for a {}x{} target",
            logits.len(),
            target.width(),
            target.height()
        )));
    }
    Ok(())
}

/// `1 - (2|P∩G| + ε) / (|P| + |G| + ε)` with `P = sigmoid(logits)`.
pub fn dice_loss(logits: &[f64], target: &Mask, object: u16) -> Result<f64> {
    check_logits(logits, target)?;
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[logits.len()], logits.to_vec()).expect("flat"));
    let l = g.dice_loss(x, &target.binary_f64(object), DICE_EPS);
    Ok(g.value(l).data()[0])
}

/// Mean of the hardest `ceil(keep * n)` per-pixel binary cross-entropies.
pub fn bootstrapped_ce(logits: &[f64], target: &Mask, object: u16, keep: f64) -> Result<f64> {
    check_logits(logits, target)?;
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(validation(format!("keep fraction {keep} outside (0, 1]")));
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[logits.len()], logits.to_vec()).expect("flat"));
    let l = g.bootstrapped_bce(x, &target.binary_f64(object), keep);
    Ok(g.value(l).data()[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    PretrainStatic,
    MainVideo,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::PretrainStatic => "pretrain-static",
            Phase::MainVideo => "main-video",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain-static" => Ok(Phase::PretrainStatic),
            "main-video" => Ok(Phase::MainVideo),
            _ => Err(validation(format!("unknown phase {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub phase: Phase,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub clip_length: usize,
    pub seed: u64,
    /// Linear learning-rate warmup; polynomial decay afterwards.
    pub warmup_steps: usize,
    /// Bootstrap keep fraction after warmup; starts at 1.
    pub keep_fraction: f64,
    /// Fraction of the phase over which the keep fraction anneals.
    pub keep_warmup: f64,
    pub grad_clip: f64,
    /// Probability that a clip is trained with groundtruth search windows.
    pub box_probability: f64,
    /// Largest frame span of a video clip.
    pub max_span: usize,
    /// Probability that a clip is matched against a random proper subset
    /// of the memory banks instead of all three.
    #[serde(default)]
    pub bank_dropout: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(validation("learning rate must be positive"));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(validation("steps and batch size must be positive"));
        }
        if self.clip_length < 2 {
            return Err(validation("clips need at least two frames"));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(validation("keep fraction must be in (0, 1]"));
        }
        if ![self.box_probability, self.keep_warmup, self.bank_dropout].iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(validation("probabilities and fractions must be in [0, 1]"));
        }
        if self.weight_decay < 0.0 || self.grad_clip <= 0.0 {
            return Err(validation("weight decay must be non-negative and grad clip positive"));
        }
        Ok(())
    }

    /// Learning rate at `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.steps - self.warmup_steps.min(self.steps)).max(1) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        self.learning_rate * ((1.0 - progress).max(0.0).powf(0.9) * 0.99 + 0.01)
    }

    pub fn keep_at(&self, step: usize) -> f64 {
        let ramp = (self.keep_warmup * self.steps as f64).max(1.0);
        let a = (step as f64 / ramp).min(1.0);
        1.0 + (self.keep_fraction - 1.0) * a
    }
}

/// Phase settings at full scale: 100,100 steps each at batch 16.
pub fn reference_schedule() -> [TrainConfig; 2] {
    let base = TrainConfig {
        phase: Phase::PretrainStatic,
        learning_rate: 4e-4,
        weight_decay: 0.03,
        steps: 100_100,
        batch_size: 16,
        clip_length: 3,
        seed: 0,
        warmup_steps: 1000,
        keep_fraction: 0.4,
        keep_warmup: 0.1,
        grad_clip: 1.0,
        box_probability: 0.25,
        max_span: 250,
        bank_dropout: 0.0,
    };
    let main = TrainConfig { phase: Phase::MainVideo, learning_rate: 2e-4, weight_decay: 0.07, clip_length: 5, ..base.clone() };
    [base, main]
}

/// The schedule scaled to a single CPU core.
pub fn desk_schedule() -> [TrainConfig; 2] {
    let [pre, main] = reference_schedule();
    [
        TrainConfig { steps: 150, batch_size: 4, learning_rate: 2e-3, warmup_steps: 20, keep_warmup: 0.3, ..pre },
        TrainConfig { steps: 3000, batch_size: 4, learning_rate: 1e-3, warmup_steps: 20, keep_warmup: 0.3, seed: 1, bank_dropout: 0.25, ..main },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub clip_length: usize,
    pub seed: u64,
    /// Clips per epoch contributed by every `frames_per_clip` frames of video.
    pub frames_per_clip: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { epochs: 2, learning_rate: 5e-4, weight_decay: 0.07, batch_size: 4, clip_length: 5, seed: 7, frames_per_clip: 40 }
    }
}

/// One optimisation step of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub phase: Phase,
    pub loss: f64,
    pub dice: f64,
    pub bce: f64,
    pub lr: f64,
    pub keep: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }
}

/// Frames, groundtruth and tracked objects of one training clip. The
/// objects must all be visible in the first frame.
#[derive(Clone, Debug)]
pub struct Clip {
    pub images: Vec<RgbImage>,
    pub masks: Vec<Mask>,
    pub objects: Vec<u16>,
    /// Source frame index of each clip frame, strictly increasing.
    pub frames: Vec<usize>,
}

/// Upper bound on the extra global-bank folds applied for the frames a
/// clip skips between two of its samples.
pub const MAX_GAP_FOLDS: usize = 8;

/// Loss terms of a clip, each averaged over predicted object-frames.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClipLoss {
    pub total: f64,
    pub dice: f64,
    pub bce: f64,
}

/// Builds the clip's loss on `g`. With `boxes`, matching is restricted to
/// groundtruth windows and absent objects are skipped as in inference.
pub fn clip_loss(model: &Model, g: &mut Graph, clip: &Clip, keep: f64, boxes: bool, combo: BankCombo) -> (Var, ClipLoss) {
    let (w, h) = (clip.images[0].width(), clip.images[0].height());
    let store = model.store();
    let q0 = {
        let x = g.constant(Model::image_tensor(&clip.images[0]));
        model.query_vars(g, x)
    };
    let mut memories: Vec<MemoryVars> = clip
        .objects
        .iter()
        .map(|&id| MemoryVars::init(model.memory_var(g, &q0, &clip.masks[0], id)))
        .collect();
    let mut terms = Vec::new();
    let (mut dice_sum, mut bce_sum) = (0.0, 0.0);
    for t in 1..clip.images.len() {
        let x = g.constant(Model::image_tensor(&clip.images[t]));
        let q = model.query_vars(g, x);
        let (_, fh, fw) = g.value(q.feature).dims3();
        let mut probs = Vec::with_capacity(clip.objects.len());
        for (o, &id) in clip.objects.iter().enumerate() {
            let active = if boxes {
                match clip.masks[t].bbox(id) {
                    Some(b) => {
                        let cells = window_cells(&b, fh, fw);
                        (!cells.iter().all(|&c| c)).then_some(cells)
                    }
                    None => {
                        probs.push(vec![0.0; w * h]);
                        continue;
                    }
                }
            } else {
                None
            };
            let m = memories[o];
            let banks: Vec<(Bank, Var)> = combo
                .banks()
                .into_iter()
                .map(|b| match b {
                    Bank::Reference => (b, m.reference),
                    Bank::Global => (b, m.global),
                    Bank::Local => (b, m.local),
                })
                .collect();
            let gamma = model.match_var(g, q.feature, &banks, active.as_deref());
            let logits = model.decode_var(g, gamma, &q.skips, h, w);
            let target = clip.masks[t].binary_f64(id);
            let d = g.dice_loss(logits, &target, DICE_EPS);
            let b = g.bootstrapped_bce(logits, &target, keep);
            dice_sum += g.value(d).data()[0];
            bce_sum += g.value(b).data()[0];
            terms.push(g.add(d, b));
            probs.push(g.value(logits).data().iter().map(|&l| ddmem_tensor::kernels::sigmoid(l)).collect());
        }
        if t + 1 < clip.images.len() {
            let pred = soft_aggregate(&clip.objects, &probs, w, h).expect("valid probabilities").mask;
            // Skipped frames are approximated by this one: each would have
            // folded the local bank into the global bank once more.
            let folds = (clip.frames[t + 1] - clip.frames[t]).saturating_sub(1).min(MAX_GAP_FOLDS);
            for (o, &id) in clip.objects.iter().enumerate() {
                let f = model.memory_var(g, &q, &pred, id);
                let mut m = memories[o].update(g, store, model.compressor(), f);
                for _ in 0..folds {
                    m = m.fold(g, store, model.compressor());
                }
                memories[o] = m;
            }
        }
    }
    let n = terms.len().max(1) as f64;
    let total = if terms.is_empty() {
        g.constant(Tensor::scalar(0.0))
    } else {
        let stacked = g.concat(&terms);
        let s = g.sum(stacked);
        g.scale(s, 1.0 / n)
    };
    let value = g.value(total).data()[0];
    (total, ClipLoss { total: value, dice: dice_sum / n, bce: bce_sum / n })
}

/// Training material: annotated videos. Phase one draws single frames
/// from them, phase two draws clips.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    pub videos: Vec<SequenceRecord>,
}

impl TrainData {
    pub fn validate(&self) -> Result<()> {
        if self.videos.is_empty() {
            return Err(validation("no training videos"));
        }
        for v in &self.videos {
            if v.groundtruth.is_none() {
                return Err(validation(format!("training video {} has no groundtruth", v.id)));
            }
        }
        Ok(())
    }

    /// Sequences are drawn with weight `min(len, 200)` times the object
    /// count, so long videos are favoured without drowning out short ones
    /// and multi-object scenes are seen often enough to learn identity.
    fn pick_video(&self, rng: &mut Rng64) -> &SequenceRecord {
        let weights: Vec<usize> = self.videos.iter().map(|v| v.len().min(200) * v.object_ids.len().max(1)).collect();
        let mut r = rng.random_range(0..weights.iter().sum::<usize>());
        for (v, w) in self.videos.iter().zip(&weights) {
            if r < *w {
                return v;
            }
            r -= w;
        }
        self.videos.last().expect("non-empty")
    }

    fn pick_start(v: &SequenceRecord, rng: &mut Rng64, room: usize) -> Option<(usize, Vec<u16>)> {
        let gt = v.groundtruth.as_ref()?;
        for _ in 0..50 {
            let t = rng.random_range(0..v.len().saturating_sub(room).max(1));
            let ids: Vec<u16> = v.object_ids.iter().copied().filter(|&id| gt[t].count(id) > 0).collect();
            if !ids.is_empty() {
                return Some((t, ids));
            }
        }
        None
    }

    /// A static frame warped into a short pseudo-clip.
    pub fn static_clip(&self, rng: &mut Rng64, length: usize) -> Clip {
        loop {
            let v = self.pick_video(rng);
            let Some((t, objects)) = Self::pick_start(v, rng, 0) else { continue };
            let gt = &v.groundtruth.as_ref().expect("validated")[t];
            let image = &v.frames[t].image;
            let mut images = vec![image.clone()];
            let mut masks = vec![gt.clone()];
            for k in 1..length {
                let (i, m) = deform(image, gt, rng, k as f64);
                images.push(i);
                masks.push(m);
            }
            if objects.iter().all(|&id| masks[0].count(id) > 0) {
                return Clip { images, masks, objects, frames: (0..length).collect() };
            }
        }
    }

    /// Half the clips use consecutive frames with small gaps; the rest
    /// spread their frames over up to `max_span` frames.
    pub fn video_clip(&self, rng: &mut Rng64, length: usize, max_span: usize) -> Clip {
        loop {
            let v = self.pick_video(rng);
            if v.len() < length {
                continue;
            }
            let Some((t0, objects)) = Self::pick_start(v, rng, length - 1) else { continue };
            let remaining = v.len() - 1 - t0;
            let mut idx = vec![t0];
            if rng.random_bool(0.5) {
                let mut t = t0;
                for _ in 1..length {
                    t = (t + rng.random_range(1..=3)).min(v.len() - 1);
                    idx.push(t);
                }
                idx.dedup();
                if idx.len() < length {
                    continue;
                }
            } else {
                let span = remaining.min(rng.random_range(length..=max_span.max(length)));
                if span < length - 1 {
                    continue;
                }
                let mut picks: Vec<usize> = rand::seq::index::sample(rng, span, length - 1).into_iter().map(|d| t0 + 1 + d).collect();
                picks.sort_unstable();
                idx.extend(picks);
            }
            let gt = v.groundtruth.as_ref().expect("validated");
            return Clip {
                images: idx.iter().map(|&t| v.frames[t].image.clone()).collect(),
                masks: idx.iter().map(|&t| gt[t].clone()).collect(),
                objects,
                frames: idx,
            };
        }
    }
}

/// Random affine plus sinusoidal warp; `strength` scales the motion.
pub fn deform(image: &RgbImage, mask: &Mask, rng: &mut Rng64, strength: f64) -> (RgbImage, Mask) {
    let (w, h) = (image.width(), image.height());
    let angle = rng.random_range(-0.12..0.12) * strength;
    let scale = 1.0 + rng.random_range(-0.06..0.06) * strength;
    let (tx, ty) = (rng.random_range(-4.0..4.0) * strength, rng.random_range(-4.0..4.0) * strength);
    let amp = rng.random_range(0.0..1.5);
    let (fx, fy) = (rng.random_range(0.05..0.2), rng.random_range(0.05..0.2));
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (s, c) = angle.sin_cos();
    let mut out_img = RgbImage::new(w, h);
    let mut out_mask = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // Inverse map: output pixel centre back to the source.
            let (dx, dy) = (x as f64 + 0.5 - cx - tx, y as f64 + 0.5 - cy - ty);
            let sx = (c * dx + s * dy) / scale + cx + amp * (fy * y as f64).sin();
            let sy = (-s * dx + c * dy) / scale + cy + amp * (fx * x as f64).sin();
            let (nx, ny) = (sx.floor().clamp(0.0, w as f64 - 1.0) as usize, sy.floor().clamp(0.0, h as f64 - 1.0) as usize);
            out_mask.set(x, y, mask.get(nx, ny));
            out_img.put(x, y, bilinear(image, sx - 0.5, sy - 0.5));
        }
    }
    (out_img, out_mask)
}

/// Applies one colour-channel permutation and one flip/transpose to every
/// frame of the clip. Transposes are skipped for non-square frames.
pub fn augment_clip(clip: Clip, rng: &mut Rng64) -> Clip {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let perm = PERMS[rng.random_range(0..PERMS.len())];
    let (flip_x, flip_y) = (rng.random_bool(0.5), rng.random_bool(0.5));
    let (w, h) = (clip.images[0].width(), clip.images[0].height());
    let transpose = w == h && rng.random_bool(0.5);
    let source = |x: usize, y: usize| {
        let (x, y) = if transpose { (y, x) } else { (x, y) };
        (if flip_x { w - 1 - x } else { x }, if flip_y { h - 1 - y } else { y })
    };
    let images = clip
        .images
        .iter()
        .map(|im| {
            let mut out = RgbImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = source(x, y);
                    let p = im.pixel(sx, sy);
                    out.put(x, y, perm.map(|c| p[c]));
                }
            }
            out
        })
        .collect();
    let masks = clip
        .masks
        .iter()
        .map(|m| {
            let mut out = Mask::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = source(x, y);
                    out.set(x, y, m.get(sx, sy));
                }
            }
            out
        })
        .collect();
    Clip { images, masks, objects: clip.objects, frames: clip.frames }
}

fn bilinear(image: &RgbImage, x: f64, y: f64) -> [u8; 3] {
    let (w, h) = (image.width() as isize, image.height() as isize);
    let (x0, y0) = (x.floor(), y.floor());
    let (ax, ay) = (x - x0, y - y0);
    let at = |xi: isize, yi: isize| image.pixel(xi.clamp(0, w - 1) as usize, yi.clamp(0, h - 1) as usize);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let p = [at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1)];
    [0, 1, 2].map(|c| {
        let top = p[0][c] as f64 * (1.0 - ax) + p[1][c] as f64 * ax;
        let bottom = p[2][c] as f64 * (1.0 - ax) + p[3][c] as f64 * ax;
        (top * (1.0 - ay) + bottom * ay).round().clamp(0.0, 255.0) as u8
    })
}

fn accumulate(into: &mut BTreeMap<ParamId, Tensor>, grads: Vec<(ParamId, Tensor)>, weight: f64) {
    for (id, g) in grads {
        match into.get_mut(&id) {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += weight * b),
            None => {
                into.insert(id, g.map(|v| v * weight));
            }
        }
    }
}

/// Runs the phases in order, continuing the global step count. Every
/// clip and augmentation is drawn from the phase's own seed, so a fixed
/// config reproduces the loss curve bit for bit.
pub fn train(model: &mut Model, data: &TrainData, phases: &[TrainConfig], mut progress: impl FnMut(&LogRow)) -> Result<TrainLog> {
    data.validate()?;
    for p in phases {
        p.validate()?;
    }
    let mut log = TrainLog::default();
    for cfg in phases {
        let mut rng = seeded(cfg.seed ^ 0x7a11_0000);
        let mut opt = AdamW::new(model.store(), cfg.weight_decay);
        for step in 0..cfg.steps {
            let global = log.rows.len();
            let keep = cfg.keep_at(step);
            let lr = cfg.lr_at(step);
            let mut grads = BTreeMap::new();
            let mut sum = ClipLoss::default();
            for _ in 0..cfg.batch_size {
                let clip = match cfg.phase {
                    Phase::PretrainStatic => data.static_clip(&mut rng, cfg.clip_length),
                    Phase::MainVideo => data.video_clip(&mut rng, cfg.clip_length, cfg.max_span),
                };
                let clip = augment_clip(clip, &mut rng);
                let boxes = rng.random_bool(cfg.box_probability);
                let combo = if cfg.bank_dropout > 0.0 && rng.random_bool(cfg.bank_dropout) {
                    BankCombo::all()[rng.random_range(0..6)]
                } else {
                    BankCombo::FULL
                };
                let mut g = Graph::new();
                let (loss, parts) = clip_loss(model, &mut g, &clip, keep, boxes, combo);
                if !parts.total.is_finite() {
                    return Err(Error::NonFinite {
                        step: global,
                        phase: cfg.phase.to_string(),
                        detail: format!("loss {} (dice {}, bce {})", parts.total, parts.dice, parts.bce),
                    });
                }
                accumulate(&mut grads, g.backward(loss).into_params(), 1.0 / cfg.batch_size as f64);
                sum.total += parts.total / cfg.batch_size as f64;
                sum.dice += parts.dice / cfg.batch_size as f64;
                sum.bce += parts.bce / cfg.batch_size as f64;
            }
            let mut grads: Vec<(ParamId, Tensor)> = grads.into_iter().collect();
            let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
            if !grad_norm.is_finite() {
                return Err(Error::NonFinite { step: global, phase: cfg.phase.to_string(), detail: "gradient norm".into() });
            }
            opt.step(model.store_mut(), &grads, lr);
            let row = LogRow { step: global, phase: cfg.phase, loss: sum.total, dice: sum.dice, bce: sum.bce, lr, keep, grad_norm };
            progress(&row);
            log.rows.push(row);
        }
    }
    Ok(log)
}

/// Continues main-phase training on long videos. An epoch is one clip per
/// `frames_per_clip` frames of training video.
pub fn finetune(model: &mut Model, data: &TrainData, cfg: &FinetuneConfig, progress: impl FnMut(&LogRow)) -> Result<TrainLog> {
    data.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainLog::default());
    }
    if cfg.frames_per_clip == 0 || cfg.batch_size == 0 {
        return Err(validation("frames per clip and batch size must be positive"));
    }
    let clips: usize = data.videos.iter().map(|v| v.len().div_ceil(cfg.frames_per_clip)).sum();
    let steps = (cfg.epochs * clips).div_ceil(cfg.batch_size);
    let [_, main] = reference_schedule();
    let phase = TrainConfig {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        steps,
        batch_size: cfg.batch_size,
        clip_length: cfg.clip_length,
        seed: cfg.seed,
        warmup_steps: 0,
        keep_warmup: 0.0,
        ..main
    };
    train(model, data, &[phase], progress)
}

/// Appends a row to an open CSV log without a header.
pub fn write_row(out: &mut impl Write, row: &LogRow) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
