//! Deterministic synthetic videos with exact masks and scripted attributes.
//!
//! A [`SynthSpec`] scripts every object: its shape, fill, keyframed pose
//! and the intervals during which it is hidden. Rendering samples pixel
//! centres, so masks are exact and output depends only on the spec.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeLabel, Frame, Mask, RgbImage, SequenceRecord, FPS};
use crate::error::{validation, Result};
use crate::evaluation::classify_attributes;
use crate::nn::{seeded, Rng64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Rect,
    Polygon { sides: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stripe {
    pub color: [u8; 3],
    /// Stripe period in shape-local pixels.
    pub period: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub color: [u8; 3],
    #[serde(default)]
    pub stripe: Option<Stripe>,
}

fn one() -> f64 {
    1.0
}

/// Pose at a frame; poses between keyframes are linearly interpolated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
    #[serde(default = "one")]
    pub scale: f64,
    /// Radians.
    #[serde(default)]
    pub rotation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectScript {
    pub id: u16,
    pub shape: ShapeKind,
    /// Half width and half height before scaling.
    pub half_extent: [f64; 2],
    pub appearance: Appearance,
    pub keyframes: Vec<Keyframe>,
    /// Half-open `[start, end)` frame intervals where the object is hidden.
    #[serde(default)]
    pub invisible: Vec<[usize; 2]>,
}

/// A look-alike of a target, drawn only during its active intervals and
/// never part of the groundtruth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorScript {
    pub mimics: u16,
    pub keyframes: Vec<Keyframe>,
    pub active: Vec<[usize; 2]>,
}

/// An unannotated shape drawn beneath the targets for the whole sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterScript {
    pub shape: ShapeKind,
    pub half_extent: [f64; 2],
    pub appearance: Appearance,
    pub keyframes: Vec<Keyframe>,
}

/// An opaque rectangle drawn over everything; empty `active` means always.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccluderScript {
    pub half_extent: [f64; 2],
    pub color: [u8; 3],
    pub keyframes: Vec<Keyframe>,
    #[serde(default)]
    pub active: Vec<[usize; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Background {
    Flat { color: [u8; 3] },
    /// Sum of two seeded plane waves drifting by `drift` pixels per frame.
    Textured { base: [u8; 3], contrast: f64, drift: [f64; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
    pub background: Background,
    pub objects: Vec<ObjectScript>,
    #[serde(default)]
    pub distractors: Vec<DistractorScript>,
    #[serde(default)]
    pub occluders: Vec<OccluderScript>,
    #[serde(default)]
    pub clutter: Vec<ClutterScript>,
    /// Amplitude of per-pixel noise added to every frame.
    #[serde(default)]
    pub noise: f64,
}

fn check_keyframes(what: &str, keys: &[Keyframe]) -> Result<()> {
    if keys.is_empty() {
        return Err(validation(format!("{what} needs at least one keyframe")));
    }
    if keys.windows(2).any(|w| w[0].frame >= w[1].frame) {
        return Err(validation(format!("{what} keyframes must be strictly increasing in frame")));
    }
    for k in keys {
        if ![k.x, k.y, k.scale, k.rotation].iter().all(|v| v.is_finite()) || k.scale <= 0.0 {
            return Err(validation(format!("{what} has an unrenderable keyframe at frame {}", k.frame)));
        }
    }
    Ok(())
}

fn check_intervals(what: &str, intervals: &[[usize; 2]], frames: usize) -> Result<()> {
    for &[a, b] in intervals {
        if a >= b || b > frames {
            return Err(validation(format!("{what} interval [{a}, {b}) is outside [0, {frames})")));
        }
    }
    Ok(())
}

fn in_intervals(intervals: &[[usize; 2]], t: usize) -> bool {
    intervals.iter().any(|&[a, b]| t >= a && t < b)
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > 4096 || self.height > 4096 {
            return Err(validation("canvas must be between 1 and 4096 pixels per side"));
        }
        if self.frames == 0 {
            return Err(validation("a sequence needs at least one frame"));
        }
        if self.objects.is_empty() {
            return Err(validation("a sequence needs at least one object"));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(validation("noise must be a non-negative number"));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if o.id == 0 || o.id > 255 || !ids.insert(o.id) {
                return Err(validation(format!("object id {} must be unique and in 1..=255", o.id)));
            }
            let what = format!("object {}", o.id);
            if !o.half_extent.iter().all(|v| v.is_finite() && *v > 0.0) {
                return Err(validation(format!("{what} has a non-positive extent")));
            }
            if let ShapeKind::Polygon { sides } = o.shape {
                if sides < 3 {
                    return Err(validation(format!("{what} polygon needs at least 3 sides")));
                }
            }
            if let Some(s) = o.appearance.stripe {
                if !(s.period.is_finite() && s.period > 0.0) {
                    return Err(validation(format!("{what} stripe period must be positive")));
                }
            }
            check_keyframes(&what, &o.keyframes)?;
            check_intervals(&what, &o.invisible, self.frames)?;
        }
        for d in &self.distractors {
            if !ids.contains(&d.mimics) {
                return Err(validation(format!("distractor mimics unknown object {}", d.mimics)));
            }
            check_keyframes("distractor", &d.keyframes)?;
            check_intervals("distractor", &d.active, self.frames)?;
        }
        for c in &self.clutter {
            if !c.half_extent.iter().all(|v| v.is_finite() && *v > 0.0) {
                return Err(validation("clutter has a non-positive extent"));
            }
            check_keyframes("clutter", &c.keyframes)?;
        }
        for o in &self.occluders {
            if !o.half_extent.iter().all(|v| v.is_finite() && *v > 0.0) {
                return Err(validation("occluder has a non-positive extent"));
            }
            check_keyframes("occluder", &o.keyframes)?;
            check_intervals("occluder", &o.active, self.frames)?;
        }
        if let Background::Textured { contrast, drift, .. } = self.background {
            if !contrast.is_finite() || !drift.iter().all(|v| v.is_finite()) {
                return Err(validation("background parameters must be finite"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises") + "\n"
    }
}

/// Interpolated `(x, y, scale, rotation)` at frame `t`.
fn pose(keys: &[Keyframe], t: usize) -> (f64, f64, f64, f64) {
    let at = |k: &Keyframe| (k.x, k.y, k.scale, k.rotation);
    let first = &keys[0];
    if t <= first.frame {
        return at(first);
    }
    for w in keys.windows(2) {
        if t <= w[1].frame {
            let a = (t - w[0].frame) as f64 / (w[1].frame - w[0].frame) as f64;
            let lerp = |p: f64, q: f64| p + (q - p) * a;
            return (lerp(w[0].x, w[1].x), lerp(w[0].y, w[1].y), lerp(w[0].scale, w[1].scale), lerp(w[0].rotation, w[1].rotation));
        }
    }
    at(keys.last().expect("non-empty"))
}

/// Shape-local coordinates `(u, v)` if the point lies inside the shape.
fn inside(shape: ShapeKind, half: [f64; 2], pose: (f64, f64, f64, f64), px: f64, py: f64) -> Option<(f64, f64)> {
    let (cx, cy, scale, rot) = pose;
    let (dx, dy) = (px - cx, py - cy);
    let (s, c) = rot.sin_cos();
    let u = (c * dx + s * dy) / scale;
    let v = (-s * dx + c * dy) / scale;
    let hit = match shape {
        ShapeKind::Ellipse => (u / half[0]).powi(2) + (v / half[1]).powi(2) <= 1.0,
        ShapeKind::Rect => u.abs() <= half[0] && v.abs() <= half[1],
        ShapeKind::Polygon { sides } => {
            // Regular polygon, stretched to the extent's aspect ratio.
            let (x, y) = (u / half[0], v / half[1]);
            let r = (x * x + y * y).sqrt();
            let sector = std::f64::consts::TAU / sides as f64;
            let theta = y.atan2(x).rem_euclid(sector) - sector / 2.0;
            r * theta.cos() <= (sector / 2.0).cos()
        }
    };
    hit.then_some((u, v))
}

fn fill(app: &Appearance, u: f64) -> [u8; 3] {
    match app.stripe {
        Some(s) if (u / s.period).floor().rem_euclid(2.0) == 1.0 => s.color,
        _ => app.color,
    }
}

/// Stateless per-pixel hash in `[-1, 1)`, independent of render order.
fn pixel_noise(seed: u64, t: usize, x: usize, y: usize) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [t as u64, x as u64, y as u64] {
        h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

struct Waves {
    freq: [[f64; 2]; 2],
    phase: [f64; 2],
    tint: [f64; 3],
}

impl Waves {
    fn new(seed: u64) -> Self {
        let mut rng = seeded(seed ^ 0x5eed_ba5e);
        let mut f = || rng.random_range(0.08..0.35) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let freq = [[f(), f()], [f(), f()]];
        let mut rng = seeded(seed ^ 0xface);
        let phase = [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)];
        let tint = [rng.random_range(0.6..1.0), rng.random_range(0.6..1.0), rng.random_range(0.6..1.0)];
        Self { freq, phase, tint }
    }
}

fn background_pixel(bg: &Background, waves: &Waves, x: f64, y: f64, t: usize) -> [f64; 3] {
    match *bg {
        Background::Flat { color } => color.map(f64::from),
        Background::Textured { base, contrast, drift } => {
            let (sx, sy) = (x - drift[0] * t as f64, y - drift[1] * t as f64);
            let a = (waves.freq[0][0] * sx + waves.freq[0][1] * sy + waves.phase[0]).sin();
            let b = (waves.freq[1][0] * sx + waves.freq[1][1] * sy + waves.phase[1]).sin();
            let wave = 0.6 * a + 0.4 * b;
            [0, 1, 2].map(|c| base[c] as f64 + contrast * wave * waves.tint[c])
        }
    }
}

/// One rendered frame plus per-object bookkeeping.
pub struct RenderedFrame {
    pub image: RgbImage,
    pub mask: Mask,
    /// Objects with pixels hidden by another object or an occluder.
    pub occluded: BTreeSet<u16>,
    /// Distractors with at least one pixel on the canvas, by mimicked id.
    pub distractors_drawn: BTreeSet<u16>,
}

/// Renders frame `t` at `factor` times the canvas resolution.
pub fn render_frame(spec: &SynthSpec, t: usize, factor: usize) -> RenderedFrame {
    let factor = factor.max(1);
    let (w, h) = (spec.width * factor, spec.height * factor);
    let waves = Waves::new(spec.seed);
    let mut image = RgbImage::new(w, h);
    let mut mask = Mask::new(w, h);
    let mut occluded = BTreeSet::new();
    let mut distractors_drawn = BTreeSet::new();

    let objects: Vec<_> = spec
        .objects
        .iter()
        .filter(|o| !in_intervals(&o.invisible, t))
        .map(|o| (o, pose(&o.keyframes, t)))
        .collect();
    let distractors: Vec<_> = spec
        .distractors
        .iter()
        .filter(|d| in_intervals(&d.active, t))
        .filter_map(|d| spec.objects.iter().find(|o| o.id == d.mimics).map(|o| (d, o, pose(&d.keyframes, t))))
        .collect();
    let clutter: Vec<_> = spec.clutter.iter().map(|c| (c, pose(&c.keyframes, t))).collect();
    let occluders: Vec<_> = spec
        .occluders
        .iter()
        .filter(|o| o.active.is_empty() || in_intervals(&o.active, t))
        .map(|o| (o, pose(&o.keyframes, t)))
        .collect();

    for y in 0..h {
        for x in 0..w {
            let (px, py) = ((x as f64 + 0.5) / factor as f64, (y as f64 + 0.5) / factor as f64);
            let mut rgb = background_pixel(&spec.background, &waves, px, py, t);
            for (c, p) in &clutter {
                if let Some((u, _)) = inside(c.shape, c.half_extent, *p, px, py) {
                    rgb = fill(&c.appearance, u).map(f64::from);
                }
            }
            for (d, o, p) in &distractors {
                if let Some((u, _)) = inside(o.shape, o.half_extent, *p, px, py) {
                    rgb = fill(&o.appearance, u).map(f64::from);
                    distractors_drawn.insert(d.mimics);
                }
            }
            let mut label = 0u16;
            for (o, p) in &objects {
                if let Some((u, _)) = inside(o.shape, o.half_extent, *p, px, py) {
                    if label != 0 {
                        occluded.insert(label);
                    }
                    label = o.id;
                    rgb = fill(&o.appearance, u).map(f64::from);
                }
            }
            for (o, p) in &occluders {
                if inside(ShapeKind::Rect, o.half_extent, *p, px, py).is_some() {
                    if label != 0 {
                        occluded.insert(label);
                    }
                    label = 0;
                    rgb = o.color.map(f64::from);
                }
            }
            if spec.noise > 0.0 {
                let n = spec.noise * pixel_noise(spec.seed, t, x, y);
                rgb = rgb.map(|v| v + n);
            }
            image.put(x, y, rgb.map(|v| v.round().clamp(0.0, 255.0) as u8));
            if label != 0 {
                mask.set(x, y, label);
            }
        }
    }
    RenderedFrame { image, mask, occluded, distractors_drawn }
}

/// Renders every frame and labels the sequence: mask-derived attributes
/// plus OCC and CTC read off the script.
pub fn generate(spec: &SynthSpec) -> Result<SequenceRecord> {
    spec.validate()?;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    let mut occluded = false;
    // Per mimicked id: drawn while the target was visible / drawn at all.
    let mut co_occurs = BTreeSet::new();
    let mut drawn = BTreeSet::new();
    for t in 0..spec.frames {
        let r = render_frame(spec, t, 1);
        occluded |= !r.occluded.is_empty();
        for &id in &r.distractors_drawn {
            drawn.insert(id);
            if r.mask.count(id) > 0 {
                co_occurs.insert(id);
            }
        }
        frames.push(Frame { index: t as u32, path: None, image: r.image });
        masks.push(r.mask);
    }
    let mut record = SequenceRecord {
        id: spec.id.clone(),
        fps: FPS,
        frames,
        object_ids: spec.objects.iter().map(|o| o.id).collect(),
        groundtruth: Some(masks),
        attributes: BTreeSet::new(),
    };
    let mut attributes = classify_attributes(&record)?;
    if occluded {
        attributes.insert(AttributeLabel::OCC);
    }
    if drawn.iter().any(|id| !co_occurs.contains(id)) {
        attributes.insert(AttributeLabel::CTC);
    }
    record.attributes = attributes;
    Ok(record)
}

/// Named train/val collections of specs.
#[derive(Clone, Debug, PartialEq)]
pub struct Suite {
    pub name: &'static str,
    pub train: Vec<SynthSpec>,
    pub val: Vec<SynthSpec>,
}

pub const SUITE_NAMES: [&str; 4] = ["short-easy", "long-lra", "ctc", "fm-sv"];
pub const CANVAS: usize = 96;

const TARGET_COLORS: [[u8; 3]; 8] = [
    [230, 40, 40],
    [40, 200, 60],
    [50, 90, 235],
    [240, 210, 30],
    [220, 60, 220],
    [30, 210, 220],
    [250, 140, 20],
    [245, 245, 245],
];

const BACKGROUNDS: [[u8; 3]; 4] = [[90, 90, 100], [70, 80, 70], [100, 85, 75], [60, 70, 95]];

fn random_shape(rng: &mut Rng64) -> ShapeKind {
    match rng.random_range(0..3) {
        0 => ShapeKind::Ellipse,
        1 => ShapeKind::Rect,
        _ => ShapeKind::Polygon { sides: rng.random_range(3..=6) },
    }
}

fn random_appearance(rng: &mut Rng64, color: usize) -> Appearance {
    let base = TARGET_COLORS[color % TARGET_COLORS.len()];
    let stripe = rng.random_bool(0.3).then(|| Stripe { color: base.map(|v| v / 3), period: rng.random_range(3.0..6.0) });
    Appearance { color: base, stripe }
}

fn background(rng: &mut Rng64) -> Background {
    Background::Textured {
        base: BACKGROUNDS[rng.random_range(0..BACKGROUNDS.len())],
        contrast: rng.random_range(12.0..28.0),
        drift: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
    }
}

/// Keyframes every `step` frames at random positions keeping a margin.
fn wander(rng: &mut Rng64, frames: usize, step: (usize, usize), margin: f64, scale: (f64, f64)) -> Vec<Keyframe> {
    let mut keys = Vec::new();
    let mut t = 0;
    let mut rotation: f64 = rng.random_range(-0.5..0.5);
    loop {
        keys.push(Keyframe {
            frame: t,
            x: rng.random_range(margin..CANVAS as f64 - margin),
            y: rng.random_range(margin..CANVAS as f64 - margin),
            scale: rng.random_range(scale.0..scale.1),
            rotation,
        });
        if t >= frames - 1 {
            return keys;
        }
        rotation += rng.random_range(-0.3..0.3);
        t = (t + rng.random_range(step.0..=step.1)).min(frames - 1);
    }
}

fn object(rng: &mut Rng64, id: u16, color: usize, frames: usize, step: (usize, usize)) -> ObjectScript {
    let half: [f64; 2] = [rng.random_range(9.0..15.0), rng.random_range(9.0..15.0)];
    let margin = half[0].max(half[1]) + 2.0;
    ObjectScript {
        id,
        shape: random_shape(rng),
        half_extent: half,
        appearance: random_appearance(rng, color),
        keyframes: wander(rng, frames, step, margin, (0.85, 1.15)),
        invisible: Vec::new(),
    }
}

fn base_spec(id: String, frames: usize, seed: u64, rng: &mut Rng64) -> SynthSpec {
    SynthSpec {
        id,
        width: CANVAS,
        height: CANVAS,
        frames,
        seed,
        background: background(rng),
        objects: Vec::new(),
        distractors: Vec::new(),
        occluders: Vec::new(),
        clutter: Vec::new(),
        noise: 4.0,
    }
}

fn distinct_colors(rng: &mut Rng64, n: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..TARGET_COLORS.len()).collect();
    (0..n).map(|_| pool.remove(rng.random_range(0..pool.len()))).collect()
}

/// 40 frames, one or two objects, smooth motion, always visible.
pub fn short_easy_spec(id: String, seed: u64) -> SynthSpec {
    let mut rng = seeded(seed);
    let mut spec = base_spec(id, 40, seed, &mut rng);
    let n = if rng.random_bool(0.35) { 2 } else { 1 };
    let colors = distinct_colors(&mut rng, n);
    for (i, &c) in colors.iter().enumerate() {
        spec.objects.push(object(&mut rng, i as u16 + 1, c, 40, (12, 20)));
    }
    spec
}

/// Hidden intervals of 100 to 140 frames separated by at least 60
/// visible frames, starting after frame 60.
fn long_gaps(rng: &mut Rng64, frames: usize) -> Vec<[usize; 2]> {
    let mut gaps = Vec::new();
    let mut t = rng.random_range(60..120);
    loop {
        let len = rng.random_range(100..=140);
        if t + len + 60 > frames {
            return gaps;
        }
        gaps.push([t, t + len]);
        t += len + rng.random_range(60..120);
    }
}

/// 600 frames, one object that leaves for 100 to 140 frames at a time,
/// next to an unannotated object of another colour that never leaves.
pub fn long_lra_spec(id: String, seed: u64) -> SynthSpec {
    let mut rng = seeded(seed);
    let mut spec = base_spec(id, 600, seed, &mut rng);
    let colors = distinct_colors(&mut rng, 2);
    let mut o = object(&mut rng, 1, colors[0], 600, (15, 30));
    o.invisible = long_gaps(&mut rng, 600);
    spec.objects.push(o);
    for &c in &colors[1..] {
        let other = object(&mut rng, 0, c, 600, (15, 30));
        spec.clutter.push(ClutterScript {
            shape: other.shape,
            half_extent: other.half_extent,
            appearance: other.appearance,
            keyframes: other.keyframes,
        });
    }
    spec
}

/// 200 frames; a look-alike appears only while the target is hidden.
pub fn ctc_spec(id: String, seed: u64) -> SynthSpec {
    let mut rng = seeded(seed);
    let mut spec = base_spec(id, 200, seed, &mut rng);
    let c = rng.random_range(0..TARGET_COLORS.len());
    let mut o = object(&mut rng, 1, c, 200, (15, 30));
    let start = rng.random_range(50..80);
    let end = start + rng.random_range(60..90);
    o.invisible = vec![[start, end]];
    let margin = o.half_extent[0].max(o.half_extent[1]) + 2.0;
    spec.distractors.push(DistractorScript {
        mimics: 1,
        keyframes: wander(&mut rng, 200, (15, 30), margin, (0.85, 1.15)),
        active: vec![[start + 5, end - 5]],
    });
    spec.objects.push(o);
    spec
}

/// 60 frames with a 25 to 32 pixel jump and a threefold change in area.
pub fn fm_sv_spec(id: String, seed: u64) -> SynthSpec {
    let mut rng = seeded(seed);
    let mut spec = base_spec(id, 60, seed, &mut rng);
    let c = rng.random_range(0..TARGET_COLORS.len());
    let mut o = object(&mut rng, 1, c, 60, (10, 20));
    let jump = rng.random_range(15..45);
    let (x0, y0) = (rng.random_range(22.0..40.0), rng.random_range(22.0..74.0));
    let dist = rng.random_range(25.0..32.0);
    o.half_extent = [10.0, 10.0];
    o.shape = ShapeKind::Ellipse;
    o.keyframes = vec![
        Keyframe { frame: 0, x: x0, y: y0, scale: 0.7, rotation: 0.0 },
        Keyframe { frame: jump, x: x0, y: y0, scale: 1.0, rotation: 0.0 },
        Keyframe { frame: jump + 1, x: x0 + dist, y: y0, scale: 1.0, rotation: 0.0 },
        Keyframe { frame: 59, x: x0 + dist, y: y0, scale: 1.5, rotation: 0.0 },
    ];
    spec.objects.push(o);
    spec
}

fn build(name: &'static str, count: usize, split_seed: u64, make: fn(String, u64) -> SynthSpec, split: &str) -> Vec<SynthSpec> {
    (0..count).map(|i| make(format!("{name}-{split}-{i:03}"), split_seed * 1000 + i as u64)).collect()
}

/// Sequence counts per suite as `(train, val)`.
pub fn suite_sizes(name: &str) -> Option<(usize, usize)> {
    match name {
        "short-easy" => Some((48, 20)),
        "long-lra" => Some((12, 4)),
        "ctc" => Some((4, 4)),
        "fm-sv" => Some((6, 6)),
        _ => None,
    }
}

pub fn suite(name: &str) -> Option<Suite> {
    let (train, val) = suite_sizes(name)?;
    let (name, make, seed): (&'static str, fn(String, u64) -> SynthSpec, u64) = match name {
        "short-easy" => ("short-easy", short_easy_spec, 11),
        "long-lra" => ("long-lra", long_lra_spec, 23),
        "ctc" => ("ctc", ctc_spec, 37),
        "fm-sv" => ("fm-sv", fm_sv_spec, 41),
        _ => return None,
    };
    Some(Suite { name, train: build(name, train, seed, make, "train"), val: build(name, val, seed + 500, make, "val") })
}

pub fn standard_suites() -> Vec<Suite> {
    SUITE_NAMES.iter().map(|n| suite(n).expect("known suite")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_spec(frames: usize, invisible: Vec<[usize; 2]>) -> SynthSpec {
        SynthSpec {
            id: "c".into(),
            width: 96,
            height: 96,
            frames,
            seed: 5,
            background: Background::Flat { color: [80, 80, 80] },
            objects: vec![ObjectScript {
                id: 1,
                shape: ShapeKind::Ellipse,
                half_extent: [12.0, 12.0],
                appearance: Appearance { color: [200, 30, 30], stripe: None },
                keyframes: vec![Keyframe { frame: 0, x: 40.0, y: 40.0, scale: 1.0, rotation: 0.0 }],
                invisible,
            }],
            distractors: vec![],
            occluders: vec![],
            clutter: vec![],
            noise: 0.0,
        }
    }

    #[test]
    fn clutter_is_drawn_beneath_targets_and_never_labelled() {
        let mut spec = circle_spec(3, vec![[1, 2]]);
        spec.clutter.push(ClutterScript {
            shape: ShapeKind::Rect,
            half_extent: [10.0, 10.0],
            appearance: Appearance { color: [20, 220, 20], stripe: None },
            keyframes: vec![Keyframe { frame: 0, x: 50.0, y: 40.0, scale: 1.0, rotation: 0.0 }],
        });
        let seq = generate(&spec).unwrap();
        let gt = seq.groundtruth.as_ref().unwrap();
        assert_eq!(seq.frames[0].image.pixel(58, 40), [20, 220, 20]);
        assert_eq!(gt[0].get(58, 40), 0);
        assert_eq!(seq.frames[0].image.pixel(45, 40), [200, 30, 30]);
        assert_eq!(gt[0].get(45, 40), 1);
        assert_eq!(seq.frames[1].image.pixel(45, 40), [20, 220, 20]);
        assert_eq!(gt[1].count(1), 0);
        assert!(!seq.attributes.contains(&AttributeLabel::OCC));
    }

    #[test]
    fn long_disappearance_is_labelled_and_masks_are_empty() {
        let seq = generate(&circle_spec(200, vec![[50, 170]])).unwrap();
        assert!(seq.attributes.contains(&AttributeLabel::LRA));
        assert!(seq.attributes.contains(&AttributeLabel::OV));
        let gt = seq.groundtruth.as_ref().unwrap();
        assert!((50..170).all(|t| gt[t].count(1) == 0));
        assert!(gt[49].count(1) > 0 && gt[170].count(1) > 0);
    }

    #[test]
    fn rendered_circle_area_matches_geometry() {
        let r = render_frame(&circle_spec(1, vec![]), 0, 1);
        let area = r.mask.count(1) as f64;
        let expect = std::f64::consts::PI * 144.0;
        assert!((area - expect).abs() < 0.05 * expect, "{area} vs {expect}");
    }

    #[test]
    fn generation_is_byte_identical() {
        let spec = short_easy_spec("s".into(), 3);
        let a = generate(&spec).unwrap();
        let b = generate(&spec.clone()).unwrap();
        assert_eq!(a.frames.iter().map(|f| f.image.raw().to_vec()).collect::<Vec<_>>(), b.frames.iter().map(|f| f.image.raw().to_vec()).collect::<Vec<_>>());
        assert_eq!(a.groundtruth, b.groundtruth);
        assert_eq!(a.attributes, b.attributes);
    }

    #[test]
    fn distractor_only_during_absence_is_ctc() {
        let mut spec = circle_spec(60, vec![[20, 40]]);
        spec.distractors.push(DistractorScript {
            mimics: 1,
            keyframes: vec![Keyframe { frame: 0, x: 70.0, y: 70.0, scale: 1.0, rotation: 0.0 }],
            active: vec![[22, 38]],
        });
        assert!(generate(&spec).unwrap().attributes.contains(&AttributeLabel::CTC));
        spec.distractors[0].active = vec![[10, 38]];
        assert!(!generate(&spec).unwrap().attributes.contains(&AttributeLabel::CTC));
    }

    #[test]
    fn occluder_sets_occ_and_hides_pixels() {
        let mut spec = circle_spec(3, vec![]);
        spec.occluders.push(OccluderScript {
            half_extent: [4.0, 30.0],
            color: [10, 10, 10],
            keyframes: vec![Keyframe { frame: 0, x: 40.0, y: 40.0, scale: 1.0, rotation: 0.0 }],
            active: vec![],
        });
        let seq = generate(&spec).unwrap();
        assert!(seq.attributes.contains(&AttributeLabel::OCC));
        assert_eq!(seq.groundtruth.as_ref().unwrap()[0].get(40, 40), 0);
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut spec = circle_spec(10, vec![[5, 12]]);
        assert!(generate(&spec).is_err());
        spec.objects[0].invisible.clear();
        spec.objects[0].keyframes[0].scale = 0.0;
        assert!(generate(&spec).is_err());
        let mut spec = circle_spec(10, vec![]);
        spec.objects.push(spec.objects[0].clone());
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_json_round_trips() {
        let spec = ctc_spec("x".into(), 9);
        assert_eq!(SynthSpec::from_json(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn supersampled_render_agrees_away_from_boundaries() {
        let spec = short_easy_spec("ss".into(), 12);
        for t in [0, 17] {
            let lo = render_frame(&spec, t, 1).mask;
            let hi = render_frame(&spec, t, 2).mask;
            for y in 0..96 {
                for x in 0..96 {
                    let votes: Vec<u16> = (0..4).map(|k| hi.get(2 * x + k % 2, 2 * y + k / 2)).collect();
                    if votes.iter().all(|&v| v == votes[0]) {
                        let near_edge = (-1i32..=1).any(|dy| {
                            (-1i32..=1).any(|dx| {
                                let (nx, ny) = (x as i32 + dx, y as i32 + dy);
                                nx >= 0 && ny >= 0 && nx < 96 && ny < 96 && lo.get(nx as usize, ny as usize) != lo.get(x, y)
                            })
                        });
                        assert!(near_edge || votes[0] == lo.get(x, y), "pixel ({x}, {y}) at frame {t}");
                    }
                }
            }
        }
    }

    #[test]
    fn suites_carry_their_attributes() {
        let lra = suite("long-lra").unwrap();
        for spec in lra.val.iter().take(2) {
            let seq = generate(spec).unwrap();
            assert!(seq.attributes.contains(&AttributeLabel::LRA), "{}", spec.id);
        }
        for spec in suite("fm-sv").unwrap().val.iter().take(3) {
            let seq = generate(spec).unwrap();
            assert!(seq.attributes.contains(&AttributeLabel::FM), "{}", spec.id);
            assert!(seq.attributes.contains(&AttributeLabel::SV), "{}", spec.id);
        }
        for spec in suite("short-easy").unwrap().val.iter().take(3) {
            let seq = generate(spec).unwrap();
            assert!(!seq.attributes.contains(&AttributeLabel::OV));
            assert!(spec.frames <= 60);
        }
        assert_eq!(suite("short-easy").unwrap(), suite("short-easy").unwrap());
        assert_eq!(standard_suites().len(), 4);
    }
}
