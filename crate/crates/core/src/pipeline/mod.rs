//! Semi-automatic annotation: automatic masks at one frame per second,
//! a correction round, propagation to every frame, a second correction
//! round, and an audit against reference masks.
//!
//! Models plug in through three traits. Corrections are exchanged as files:
//! a `queue.json` listing flagged frames, and corrected masks written back
//! as indexed PNGs under `corrected/`.
//!
//! A propagator may also run out of process. [`SubprocessPropagator`] runs
//! `program args.. <input dir> <output dir>`, where the input directory
//! holds `images/%08d.png`, `anchor.png` and `request.json`
//! (`{"anchor": a, "targets": [..]}`); the program must write one
//! `%08d.png` mask per target into the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{read_masks, save_frame, save_mask, write_masks, BoxRegion, Mask, RgbImage, SequenceRecord, FPS};
use crate::error::{validation, Error, Result};
use crate::metrics::region_similarity;
use crate::model::{BankCombo, Model, OracleMode};

/// Proposes candidate instance masks (row-major binary, one per candidate).
pub trait InstanceSegmenter: Sync {
    fn candidates(&self, frame: usize, image: &RgbImage) -> Result<Vec<Vec<bool>>>;
}

/// Follows a box from its first appearance. Returns one entry per
/// requested frame; `None` means the object is not visible there.
pub trait BoxTracker: Sync {
    fn track(&self, seq: &SequenceRecord, object: u16, start: usize, first: BoxRegion, frames: &[usize]) -> Result<Vec<Option<BoxRegion>>>;
}

/// Propagates an anchor mask to the target frames, in the given order.
pub trait MaskPropagator: Sync {
    fn propagate(&self, seq: &SequenceRecord, anchor: usize, mask: &Mask, targets: &[usize]) -> Result<Vec<Mask>>;
}

/// The groundtruth instances of every frame, as candidates.
pub struct GroundtruthInstances<'a>(pub &'a [Mask]);

impl InstanceSegmenter for GroundtruthInstances<'_> {
    fn candidates(&self, frame: usize, _: &RgbImage) -> Result<Vec<Vec<bool>>> {
        let m = self.0.get(frame).ok_or_else(|| validation(format!("no groundtruth for frame {frame}")))?;
        Ok(m.ids().into_iter().filter(|&id| id != 0).map(|id| m.binary(id)).collect())
    }
}

/// Boxes of the groundtruth masks.
pub struct GroundtruthBoxes<'a>(pub &'a [Mask]);

impl BoxTracker for GroundtruthBoxes<'_> {
    fn track(&self, _: &SequenceRecord, object: u16, _: usize, _: BoxRegion, frames: &[usize]) -> Result<Vec<Option<BoxRegion>>> {
        frames
            .iter()
            .map(|&t| self.0.get(t).map(|m| m.bbox(object)).ok_or_else(|| validation(format!("no groundtruth for frame {t}"))))
            .collect()
    }
}

/// Returns the groundtruth of the target frames.
pub struct GroundtruthPropagator<'a>(pub &'a [Mask]);

impl MaskPropagator for GroundtruthPropagator<'_> {
    fn propagate(&self, _: &SequenceRecord, _: usize, _: &Mask, targets: &[usize]) -> Result<Vec<Mask>> {
        targets.iter().map(|&t| self.0.get(t).cloned().ok_or_else(|| validation(format!("no groundtruth for frame {t}")))).collect()
    }
}

/// Tracks the anchor's objects with the segmentation model, restarting
/// memory at every anchor.
pub struct ModelPropagator<'a> {
    pub model: &'a Model,
    pub combo: BankCombo,
}

impl MaskPropagator for ModelPropagator<'_> {
    fn propagate(&self, seq: &SequenceRecord, anchor: usize, mask: &Mask, targets: &[usize]) -> Result<Vec<Mask>> {
        let objects: BTreeSet<u16> = mask.ids().into_iter().filter(|&id| id != 0).collect();
        if objects.is_empty() {
            return Ok(targets.iter().map(|_| Mask::new(mask.width(), mask.height())).collect());
        }
        let mut tracker = self.model.init_tracker(&seq.frames[anchor].image, mask, &objects)?;
        let mut out = Vec::with_capacity(targets.len());
        for &t in targets {
            let (r, next) = self.model.segment_frame(&tracker, &seq.frames[t].image, OracleMode::None, None, self.combo)?;
            tracker = next;
            out.push(r.mask);
        }
        Ok(out)
    }
}

/// Runs an external propagator through files.
pub struct SubprocessPropagator {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub work_dir: PathBuf,
}

#[derive(Serialize)]
struct PropagationRequest<'a> {
    anchor: usize,
    targets: &'a [usize],
}

impl MaskPropagator for SubprocessPropagator {
    fn propagate(&self, seq: &SequenceRecord, anchor: usize, mask: &Mask, targets: &[usize]) -> Result<Vec<Mask>> {
        let plugin = || self.program.display().to_string();
        let job = self.work_dir.join(format!("{}-{anchor:08}", seq.id));
        let (input, output) = (job.join("in"), job.join("out"));
        std::fs::create_dir_all(input.join("images"))?;
        std::fs::create_dir_all(&output)?;
        for t in std::iter::once(anchor).chain(targets.iter().copied()) {
            save_frame(&seq.frames[t].image, &input.join("images").join(format!("{t:08}.png")))?;
        }
        save_mask(mask, &input.join("anchor.png"))?;
        std::fs::write(input.join("request.json"), serde_json::to_string(&PropagationRequest { anchor, targets })?)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| Error::Plugin { plugin: plugin(), reason: e.to_string() })?;
        if !status.success() {
            return Err(Error::Plugin { plugin: plugin(), reason: format!("exited with {status}") });
        }
        let masks = read_masks(&output).map_err(|e| Error::Plugin { plugin: plugin(), reason: e.to_string() })?;
        targets
            .iter()
            .map(|&t| {
                masks.get(&(t as u32)).cloned().ok_or_else(|| Error::Plugin { plugin: plugin(), reason: format!("no mask for frame {t}") })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagReason {
    /// Step one found no candidate inside the tracked box.
    Missing,
    /// A plugin call failed on this frame.
    PluginFailure,
    /// Empty while both neighbouring masks contain the object.
    Dropout,
    /// IoU with the previous mask fell below the threshold.
    IouDrop,
    /// Area changed by more than the spike factor.
    AreaSpike,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Round {
    #[serde(rename = "sparse-1fps")]
    Sparse,
    #[serde(rename = "dense-6fps")]
    Dense,
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Round::Sparse => "sparse-1fps",
            Round::Dense => "dense-6fps",
        })
    }
}

impl FromStr for Round {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse-1fps" => Ok(Round::Sparse),
            "dense-6fps" => Ok(Round::Dense),
            _ => Err(validation(format!("unknown round {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedFrame {
    pub frame: usize,
    pub object: u16,
    pub reason: FlagReason,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionQueue {
    pub sequence: String,
    pub round: Round,
    pub frames: usize,
    pub flagged: Vec<FlaggedFrame>,
}

impl CorrectionQueue {
    pub fn new(sequence: impl Into<String>, round: Round, frames: usize) -> Self {
        Self { sequence: sequence.into(), round, frames, flagged: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.flagged.is_empty()
    }

    /// Distinct flagged frame indices.
    pub fn frame_indices(&self) -> BTreeSet<usize> {
        self.flagged.iter().map(|f| f.frame).collect()
    }

    pub fn push(&mut self, frame: usize, object: u16, reason: FlagReason) -> Result<()> {
        if frame >= self.frames {
            return Err(validation(format!("flagged frame {frame} outside {} frames", self.frames)));
        }
        let f = FlaggedFrame { frame, object, reason };
        if !self.flagged.contains(&f) {
            self.flagged.push(f);
            self.flagged.sort_by_key(|f| (f.frame, f.object, f.reason));
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &CorrectionQueue) -> Result<()> {
        for f in &other.flagged {
            self.push(f.frame, f.object, f.reason)?;
        }
        Ok(())
    }

    /// Writes `queue.json` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("queue.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    pub fn import(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::NotFound(path.to_path_buf()))?;
        let q: Self = serde_json::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))?;
        if let Some(f) = q.flagged.iter().find(|f| f.frame >= q.frames) {
            return Err(validation(format!("flagged frame {} outside {} frames", f.frame, q.frames)));
        }
        Ok(q)
    }
}

/// Thresholds of the automatic flagging heuristics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlagConfig {
    pub iou_drop: f64,
    pub area_spike: f64,
}

impl Default for FlagConfig {
    fn default() -> Self {
        Self { iou_drop: 0.5, area_spike: 3.0 }
    }
}

/// Masks keyed by frame index.
pub type FrameMasks = BTreeMap<usize, Mask>;

/// First appearance of every object: frame and box.
pub fn first_boxes(gt: &[Mask], objects: &BTreeSet<u16>) -> BTreeMap<u16, (usize, BoxRegion)> {
    objects
        .iter()
        .filter_map(|&id| gt.iter().enumerate().find_map(|(t, m)| m.bbox(id).map(|b| (id, (t, b)))))
        .collect()
}

/// Frames sampled at one per second.
pub fn sample_frames(len: usize) -> Vec<usize> {
    (0..len).step_by(FPS as usize).collect()
}

fn bbox_of(binary: &[bool], width: usize) -> Option<BoxRegion> {
    let mut b: Option<BoxRegion> = None;
    for (i, _) in binary.iter().enumerate().filter(|(_, &v)| v) {
        let (x, y) = (i % width, i / width);
        b = Some(match b {
            None => BoxRegion { x0: x, y0: y, x1: x + 1, y1: y + 1 },
            Some(b) => BoxRegion { x0: b.x0.min(x), y0: b.y0.min(y), x1: b.x1.max(x + 1), y1: b.y1.max(y + 1) },
        });
    }
    b
}

/// Index of the candidate whose bounding box overlaps `target` most;
/// earlier candidates win ties. `None` when nothing overlaps.
pub fn select_candidate(candidates: &[Vec<bool>], width: usize, target: &BoxRegion) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let Some(b) = bbox_of(c, width) else { continue };
        let iou = b.iou(target);
        if iou > 0.0 && best.is_none_or(|(_, v)| iou > v) {
            best = Some((i, iou));
        }
    }
    best.map(|(i, _)| i)
}

/// Sparse masks at one frame per second, plus the frames that step one
/// could not label.
pub fn step1_auto_segment(
    seq: &SequenceRecord,
    first: &BTreeMap<u16, (usize, BoxRegion)>,
    segmenter: &dyn InstanceSegmenter,
    tracker: &dyn BoxTracker,
) -> Result<(FrameMasks, CorrectionQueue)> {
    let (w, h) = (seq.width(), seq.height());
    let samples = sample_frames(seq.len());
    let mut queue = CorrectionQueue::new(seq.id.clone(), Round::Sparse, seq.len());
    let mut masks: FrameMasks = samples.iter().map(|&t| (t, Mask::new(w, h))).collect();
    let mut candidates: BTreeMap<usize, Option<Vec<Vec<bool>>>> = BTreeMap::new();
    for (&id, &(start, b)) in first {
        if start >= seq.len() || b.is_empty() || b.x1 > w || b.y1 > h {
            return Err(validation(format!("first box of object {id} is invalid")));
        }
        let frames: Vec<usize> = samples.iter().copied().filter(|&t| t >= start).collect();
        let boxes = match tracker.track(seq, id, start, b, &frames) {
            Ok(bs) if bs.len() == frames.len() => bs,
            Ok(_) | Err(_) => {
                for &t in &frames {
                    queue.push(t, id, FlagReason::PluginFailure)?;
                }
                continue;
            }
        };
        for (&t, tracked) in frames.iter().zip(boxes) {
            let Some(tb) = tracked else { continue };
            let cands = candidates.entry(t).or_insert_with(|| {
                segmenter.candidates(t, &seq.frames[t].image).ok().filter(|cs| cs.iter().all(|c| c.len() == w * h))
            });
            let Some(cands) = cands else {
                queue.push(t, id, FlagReason::PluginFailure)?;
                continue;
            };
            match select_candidate(cands, w, &tb) {
                Some(i) => {
                    let m = masks.get_mut(&t).expect("sampled frame");
                    for (p, _) in cands[i].iter().enumerate().filter(|(_, &v)| v) {
                        if m.labels()[p] == 0 {
                            m.labels_mut()[p] = id;
                        }
                    }
                }
                None => queue.push(t, id, FlagReason::Missing)?,
            }
        }
    }
    Ok((masks, queue))
}

/// IoU after translating `prev` so the object centroids coincide; plain
/// motion between sampled frames is not a reason to flag.
pub fn aligned_iou(mask: &Mask, prev: &Mask, id: u16) -> f64 {
    let (Some(a), Some(b)) = (mask.centroid(id), prev.centroid(id)) else { return 0.0 };
    let (dx, dy) = ((a.0 - b.0).round() as isize, (a.1 - b.1).round() as isize);
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let mut inter = 0usize;
    for y in 0..prev.height() {
        for x in 0..prev.width() {
            let (sx, sy) = (x as isize + dx, y as isize + dy);
            if prev.get(x, y) == id && (0..w).contains(&sx) && (0..h).contains(&sy) && mask.get(sx as usize, sy as usize) == id {
                inter += 1;
            }
        }
    }
    let union = mask.count(id) + prev.count(id) - inter;
    inter as f64 / union as f64
}

/// Flags dropouts, IoU drops and area spikes between consecutive masks.
pub fn flag_for_correction(sequence: &str, frames: usize, masks: &FrameMasks, round: Round, cfg: &FlagConfig) -> Result<CorrectionQueue> {
    let mut queue = CorrectionQueue::new(sequence, round, frames);
    let ordered: Vec<(usize, &Mask)> = masks.iter().map(|(&t, m)| (t, m)).collect();
    let ids: BTreeSet<u16> = masks.values().flat_map(|m| m.ids()).filter(|&id| id != 0).collect();
    for &id in &ids {
        for (k, &(t, m)) in ordered.iter().enumerate() {
            let area = m.count(id);
            let prev = k.checked_sub(1).map(|p| ordered[p].1);
            let next = ordered.get(k + 1).map(|n| n.1);
            if area == 0 {
                if prev.is_some_and(|p| p.count(id) > 0) && next.is_some_and(|n| n.count(id) > 0) {
                    queue.push(t, id, FlagReason::Dropout)?;
                }
                continue;
            }
            let Some(p) = prev.filter(|p| p.count(id) > 0) else { continue };
            if aligned_iou(m, p, id) < cfg.iou_drop {
                queue.push(t, id, FlagReason::IouDrop)?;
            }
            let ratio = area as f64 / p.count(id) as f64;
            if ratio > cfg.area_spike || ratio < 1.0 / cfg.area_spike {
                queue.push(t, id, FlagReason::AreaSpike)?;
            }
        }
    }
    Ok(queue)
}

/// Corrected masks replace the originals; corrections are authoritative
/// even for frames that were not flagged.
pub fn apply_corrections(masks: &FrameMasks, corrections: &FrameMasks, frames: usize) -> Result<FrameMasks> {
    let mut out = masks.clone();
    let size = masks.values().next().map(|m| (m.width(), m.height()));
    for (&t, c) in corrections {
        if t >= frames {
            return Err(validation(format!("correction for frame {t} outside {frames} frames")));
        }
        if size.is_some_and(|s| s != (c.width(), c.height())) {
            return Err(validation(format!("correction for frame {t} has size {}x{}", c.width(), c.height())));
        }
        out.insert(t, c.clone());
    }
    Ok(out)
}

/// Corrected masks from `<dir>/corrected/%08d.png`; a missing directory
/// means no corrections.
pub fn load_corrections(dir: &Path) -> Result<FrameMasks> {
    let path = dir.join("corrected");
    if !path.exists() {
        return Ok(FrameMasks::new());
    }
    let masks = read_masks(&path).map_err(|e| validation(format!("unreadable corrections: {e}")))?;
    Ok(masks.into_iter().map(|(t, m)| (t as usize, m)).collect())
}

pub fn write_corrections(dir: &Path, corrections: &FrameMasks) -> Result<()> {
    write_masks(&dir.join("corrected"), corrections.iter().map(|(&t, m)| (t as u32, m)))
}

/// Which anchor seeds each frame: the closest anchor at or before it,
/// propagating forward; frames before the first anchor propagate
/// backward from it. Returns `(anchor, targets in propagation order)`.
pub fn anchor_segments(anchors: &BTreeSet<usize>, frames: usize) -> Vec<(usize, Vec<usize>)> {
    let list: Vec<usize> = anchors.iter().copied().filter(|&a| a < frames).collect();
    let mut out = Vec::new();
    let Some(&first) = list.first() else { return out };
    if first > 0 {
        out.push((first, (0..first).rev().collect()));
    }
    for (k, &a) in list.iter().enumerate() {
        let end = list.get(k + 1).copied().unwrap_or(frames);
        if end > a + 1 {
            out.push((a, (a + 1..end).collect()));
        }
    }
    out
}

/// Dense masks for every frame; anchors keep their masks. Frames whose
/// propagation failed are flagged and left empty.
pub fn step3_propagate(seq: &SequenceRecord, sparse: &FrameMasks, propagator: &dyn MaskPropagator) -> Result<(Vec<Mask>, CorrectionQueue)> {
    let expected: BTreeSet<usize> = sample_frames(seq.len()).into_iter().collect();
    let anchors: BTreeSet<usize> = sparse.keys().copied().collect();
    if !expected.is_subset(&anchors) {
        return Err(validation("sparse masks do not cover every one-per-second frame"));
    }
    let (w, h) = (seq.width(), seq.height());
    let mut dense: Vec<Option<Mask>> = (0..seq.len()).map(|t| sparse.get(&t).cloned()).collect();
    let mut queue = CorrectionQueue::new(seq.id.clone(), Round::Dense, seq.len());
    for (anchor, targets) in anchor_segments(&anchors, seq.len()) {
        match propagator.propagate(seq, anchor, &sparse[&anchor], &targets) {
            Ok(ms) if ms.len() == targets.len() && ms.iter().all(|m| (m.width(), m.height()) == (w, h)) => {
                for (t, m) in targets.into_iter().zip(ms) {
                    dense[t] = Some(m);
                }
            }
            _ => {
                for t in targets {
                    queue.push(t, 0, FlagReason::PluginFailure)?;
                }
            }
        }
    }
    Ok((dense.into_iter().map(|m| m.unwrap_or_else(|| Mask::new(w, h))).collect(), queue))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub frame: usize,
    pub object: u16,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mean_iou: f64,
    pub object_frames: usize,
    pub detail: Vec<AuditRow>,
}

/// Mean IoU over object-frames where the object appears in either mask.
pub fn audit_quality(produced: &[Mask], reference: &[Mask]) -> Result<AuditReport> {
    if produced.len() != reference.len() {
        return Err(validation(format!("{} produced frames vs {} reference frames", produced.len(), reference.len())));
    }
    let mut detail = Vec::new();
    for (t, (p, r)) in produced.iter().zip(reference).enumerate() {
        let ids: BTreeSet<u16> = p.ids().union(&r.ids()).copied().filter(|&id| id != 0).collect();
        for id in ids {
            detail.push(AuditRow { frame: t, object: id, iou: region_similarity(p, r, id)? });
        }
    }
    let mean_iou = if detail.is_empty() { 1.0 } else { detail.iter().map(|d| d.iou).sum::<f64>() / detail.len() as f64 };
    Ok(AuditReport { mean_iou, object_frames: detail.len(), detail })
}

/// Supplies corrected masks for a queue.
pub trait Annotator {
    fn correct(&self, queue: &CorrectionQueue, masks: &FrameMasks) -> Result<FrameMasks>;
}

/// Leaves every mask as it is.
pub struct NoCorrections;

impl Annotator for NoCorrections {
    fn correct(&self, _: &CorrectionQueue, _: &FrameMasks) -> Result<FrameMasks> {
        Ok(FrameMasks::new())
    }
}

/// Replaces flagged frames with groundtruth, standing in for a human.
pub struct GroundtruthAnnotator<'a>(pub &'a [Mask]);

impl Annotator for GroundtruthAnnotator<'_> {
    fn correct(&self, queue: &CorrectionQueue, _: &FrameMasks) -> Result<FrameMasks> {
        queue.frame_indices().into_iter().map(|t| Ok((t, self.0.get(t).cloned().ok_or_else(|| validation("no groundtruth"))?))).collect()
    }
}

/// Reads corrections that an external tool wrote next to the queue.
pub struct FileAnnotator(pub PathBuf);

impl Annotator for FileAnnotator {
    fn correct(&self, queue: &CorrectionQueue, _: &FrameMasks) -> Result<FrameMasks> {
        load_corrections(&self.0.join(queue.round.to_string()))
    }
}

pub struct Plugins<'a> {
    pub segmenter: &'a dyn InstanceSegmenter,
    pub tracker: &'a dyn BoxTracker,
    pub propagator: &'a dyn MaskPropagator,
    pub annotator: &'a dyn Annotator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub masks: Vec<Mask>,
    pub sparse_queue: CorrectionQueue,
    pub dense_queue: CorrectionQueue,
}

/// All four steps on one sequence. With `exchange`, both queues are
/// exported under `<exchange>/<round>/`.
pub fn run_pipeline(
    seq: &SequenceRecord,
    first: &BTreeMap<u16, (usize, BoxRegion)>,
    plugins: &Plugins<'_>,
    flags: &FlagConfig,
    exchange: Option<&Path>,
) -> Result<PipelineOutput> {
    let (sparse, step1_queue) = step1_auto_segment(seq, first, plugins.segmenter, plugins.tracker)?;
    let mut sparse_queue = flag_for_correction(&seq.id, seq.len(), &sparse, Round::Sparse, flags)?;
    sparse_queue.merge(&step1_queue)?;
    if let Some(dir) = exchange {
        sparse_queue.export(&dir.join(Round::Sparse.to_string()))?;
    }
    let fixes = plugins.annotator.correct(&sparse_queue, &sparse)?;
    let sparse = apply_corrections(&sparse, &fixes, seq.len())?;

    let (dense, step3_queue) = step3_propagate(seq, &sparse, plugins.propagator)?;
    let dense_map: FrameMasks = dense.into_iter().enumerate().collect();
    let mut dense_queue = flag_for_correction(&seq.id, seq.len(), &dense_map, Round::Dense, flags)?;
    dense_queue.merge(&step3_queue)?;
    if let Some(dir) = exchange {
        dense_queue.export(&dir.join(Round::Dense.to_string()))?;
    }
    let fixes = plugins.annotator.correct(&dense_queue, &dense_map)?;
    let masks = apply_corrections(&dense_map, &fixes, seq.len())?.into_values().collect();
    Ok(PipelineOutput { masks, sparse_queue, dense_queue })
}

#[cfg(test)]
mod tests;
