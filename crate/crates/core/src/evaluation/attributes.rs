//! Quantitative attribute labels computed from groundtruth masks.

use std::collections::BTreeSet;

use crate::dataset::{AttributeLabel, SequenceRecord};
use crate::error::{Error, Result};

/// Centroid displacement between consecutive frames, in pixels.
pub const FAST_MOTION_PX: f64 = 20.0;
/// Mean box area over image area.
pub const LOW_RESOLUTION_RATIO: f64 = 0.1;
/// Allowed range of box-area ratios between any two frames.
pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);
/// Invisible frames before a reappearance counts as long-term.
pub const REAPPEARANCE_GAP: usize = 100;

/// FM, LR, SV, OV and LRA for a sequence with groundtruth. A label holds
/// for the sequence when it holds for any of its objects.
///
/// Fast motion is measured only between consecutive frames where the
/// object is visible in both; a jump across a disappearance is not motion.
pub fn classify_attributes(seq: &SequenceRecord) -> Result<BTreeSet<AttributeLabel>> {
    let gt = seq
        .groundtruth
        .as_ref()
        .ok_or_else(|| Error::Protocol(format!("sequence {} has no groundtruth to classify", seq.id)))?;
    let mut out = BTreeSet::new();
    let Some(first) = gt.first() else {
        return Ok(out);
    };
    let image_area = (first.width() * first.height()) as f64;
    for &id in &seq.object_ids {
        let mut prev_centroid: Option<(f64, f64)> = None;
        let mut areas = Vec::new();
        let mut invisible_run = 0usize;
        let mut seen = false;
        for mask in gt {
            match (mask.bbox(id), mask.centroid(id)) {
                (Some(b), Some(c)) => {
                    if let Some((px, py)) = prev_centroid {
                        let d = ((c.0 - px) * (c.0 - px) + (c.1 - py) * (c.1 - py)).sqrt();
                        if d > FAST_MOTION_PX {
                            out.insert(AttributeLabel::FM);
                        }
                    }
                    if seen && invisible_run >= REAPPEARANCE_GAP {
                        out.insert(AttributeLabel::LRA);
                    }
                    prev_centroid = Some(c);
                    areas.push(b.area() as f64);
                    invisible_run = 0;
                    seen = true;
                }
                _ => {
                    out.insert(AttributeLabel::OV);
                    prev_centroid = None;
                    invisible_run += 1;
                }
            }
        }
        if areas.is_empty() {
            continue;
        }
        if areas.iter().sum::<f64>() / areas.len() as f64 / image_area < LOW_RESOLUTION_RATIO {
            out.insert(AttributeLabel::LR);
        }
        let max = areas.iter().cloned().fold(f64::MIN, f64::max);
        let min = areas.iter().cloned().fold(f64::MAX, f64::min);
        if min / max < SCALE_RANGE.0 || max / min > SCALE_RANGE.1 {
            out.insert(AttributeLabel::SV);
        }
    }
    Ok(out)
}
