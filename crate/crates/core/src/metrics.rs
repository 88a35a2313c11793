//! Region similarity (J), contour accuracy (F) and their combined score.

use serde::{Deserialize, Serialize};

use crate::dataset::Mask;
use crate::error::{validation, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub object: u16,
    pub frame: usize,
    pub j: f64,
    pub f: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub mean_j: f64,
    pub mean_f: f64,
    pub jf: f64,
}

impl SequenceScore {
    pub fn new(mean_j: f64, mean_f: f64) -> Self {
        Self { mean_j, mean_f, jf: (mean_j + mean_f) / 2.0 }
    }
}

/// How frames without the groundtruth object are scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsencePolicy {
    /// Absent and predicted absent scores (1, 1); any false positive scores (0, 0).
    #[default]
    Score,
    /// Frames without the groundtruth object are left out.
    Skip,
}

fn check_dims(pred: &Mask, gt: &Mask) -> Result<()> {
    if !pred.same_size(gt) {
        return Err(validation(format!(
            "prediction {}x{} vs groundtruth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Intersection over union of the object's pixels; 1 when both are empty.
pub fn region_similarity(pred: &Mask, gt: &Mask, object: u16) -> Result<f64> {
    check_dims(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (a, b) = (p == object, g == object);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Object pixels with at least one 4-neighbour outside the object; the
/// image border counts as outside.
pub fn boundary(region: &[bool], width: usize, height: usize) -> Vec<bool> {
    let at = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height && region[y as usize * width + x as usize]
    };
    let mut out = vec![false; width * height];
    for y in 0..height as isize {
        for x in 0..width as isize {
            if at(x, y) && !(at(x - 1, y) && at(x + 1, y) && at(x, y - 1) && at(x, y + 1)) {
                out[y as usize * width + x as usize] = true;
            }
        }
    }
    out
}

/// DAVIS default match tolerance: `ceil(0.008 * image diagonal)` pixels.
pub fn default_tolerance(width: usize, height: usize) -> f64 {
    (0.008 * ((width * width + height * height) as f64).sqrt()).ceil()
}

fn disk(radius: f64) -> Vec<(isize, isize)> {
    let r = radius.floor() as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Number of `from` pixels within Euclidean `radius` of some `to` pixel.
fn matched(from: &[bool], to: &[bool], width: usize, height: usize, offsets: &[(isize, isize)]) -> usize {
    let mut n = 0;
    for y in 0..height {
        for x in 0..width {
            if !from[y * width + x] {
                continue;
            }
            let hit = offsets.iter().any(|&(dx, dy)| {
                let (xx, yy) = (x as isize + dx, y as isize + dy);
                xx >= 0 && yy >= 0 && (xx as usize) < width && (yy as usize) < height && to[yy as usize * width + xx as usize]
            });
            n += hit as usize;
        }
    }
    n
}

/// Harmonic mean of boundary precision and recall at `radius` pixels.
pub fn contour_accuracy(pred: &Mask, gt: &Mask, object: u16, radius: f64) -> Result<f64> {
    check_dims(pred, gt)?;
    if !(radius >= 0.0) {
        return Err(validation(format!("tolerance radius must be >= 0, got {radius}")));
    }
    let (w, h) = (gt.width(), gt.height());
    let pb = boundary(&pred.binary(object), w, h);
    let gb = boundary(&gt.binary(object), w, h);
    let np = pb.iter().filter(|&&b| b).count();
    let ng = gb.iter().filter(|&&b| b).count();
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let offsets = disk(radius);
    let precision = matched(&pb, &gb, w, h, &offsets) as f64 / np as f64;
    let recall = matched(&gb, &pb, w, h, &offsets) as f64 / ng as f64;
    Ok(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) })
}

/// Scores one object on one frame; `None` when the policy skips the frame.
pub fn score_frame(pred: &Mask, gt: &Mask, object: u16, frame: usize, radius: f64, policy: AbsencePolicy) -> Result<Option<FrameScore>> {
    check_dims(pred, gt)?;
    if policy == AbsencePolicy::Skip && gt.count(object) == 0 {
        return Ok(None);
    }
    Ok(Some(FrameScore {
        object,
        frame,
        j: region_similarity(pred, gt, object)?,
        f: contour_accuracy(pred, gt, object, radius)?,
    }))
}

/// Means of J and F over the scored frames, and their midpoint.
pub fn sequence_score(frames: &[FrameScore]) -> Result<SequenceScore> {
    if frames.is_empty() {
        return Err(validation("sequence_score needs at least one frame"));
    }
    let n = frames.len() as f64;
    let mj = frames.iter().map(|s| s.j).sum::<f64>() / n;
    let mf = frames.iter().map(|s| s.f).sum::<f64>() / n;
    Ok(SequenceScore::new(mj, mf))
}
