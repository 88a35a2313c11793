//! On-disk dataset layout, mask codec, manifests and dataset statistics.
//!
//! Layout (DAVIS / YouTube-VOS style):
//!
//! ```text
//! <root>/images/<seq>/00000000.png
//! <root>/annotations/<seq>/00000000.png   (8-bit indexed, value = object id)
//! <root>/manifests/<split>.json
//! ```

mod codec;
mod manifest;
mod mask;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use codec::{load_frame, load_mask, palette, save_frame, save_mask};
pub use manifest::{AttributeLabel, DatasetManifest, ManifestEntry, Split, MANIFEST_SCHEMA_VERSION};
pub use mask::{BoxRegion, Mask, RgbImage};

use crate::error::{format_err, validation, Error, Result};

/// Frame rate of every sequence.
pub const FPS: u32 = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: u32,
    pub path: Option<PathBuf>,
    pub image: RgbImage,
}

/// A video with optional dense groundtruth.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub id: String,
    pub fps: u32,
    pub frames: Vec<Frame>,
    pub object_ids: BTreeSet<u16>,
    /// One mask per frame when annotations exist.
    pub groundtruth: Option<Vec<Mask>>,
    /// Attributes supplied by the manifest or the generating script.
    pub attributes: BTreeSet<AttributeLabel>,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.image.width())
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.image.height())
    }

    pub fn gt(&self, t: usize) -> Option<&Mask> {
        self.groundtruth.as_ref().and_then(|g| g.get(t))
    }

    /// `visibility[o][t]` is true iff object `o` has pixels in groundtruth frame `t`.
    pub fn visibility(&self) -> Option<BTreeMap<u16, Vec<bool>>> {
        let gt = self.groundtruth.as_ref()?;
        Some(self.object_ids.iter().map(|&o| (o, gt.iter().map(|m| m.count(o) > 0).collect())).collect())
    }

    /// Visible object-frames summed over the sequence.
    pub fn annotation_count(&self) -> usize {
        self.visibility().map_or(0, |v| v.values().map(|f| f.iter().filter(|&&b| b).count()).sum())
    }

    /// Checks the record's structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(validation(format!("sequence {} has no frames", self.id)));
        }
        if self.frames.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(validation(format!("sequence {} frames are not strictly ordered", self.id)));
        }
        let (w, h) = (self.width(), self.height());
        if self.frames.iter().any(|f| f.image.width() != w || f.image.height() != h) {
            return Err(validation(format!("sequence {} mixes frame sizes", self.id)));
        }
        if let Some(gt) = &self.groundtruth {
            if gt.len() != self.frames.len() {
                return Err(validation(format!("sequence {}: {} masks for {} frames", self.id, gt.len(), self.frames.len())));
            }
            for (t, m) in gt.iter().enumerate() {
                if m.width() != w || m.height() != h {
                    return Err(validation(format!("sequence {} frame {t}: mask size differs from image", self.id)));
                }
                if let Some(bad) = m.ids().into_iter().find(|id| !self.object_ids.contains(id)) {
                    return Err(validation(format!(
                        "sequence {} frame {t}: label {bad} not in declared objects {:?}",
                        self.id, self.object_ids
                    )));
                }
            }
        }
        Ok(())
    }
}

fn frame_name(index: u32) -> String {
    format!("{index:08}.png")
}

pub fn image_dir(root: &Path, id: &str) -> PathBuf {
    root.join("images").join(id)
}

pub fn annotation_dir(root: &Path, id: &str) -> PathBuf {
    root.join("annotations").join(id)
}

pub fn manifest_path(root: &Path, split: Split) -> PathBuf {
    root.join("manifests").join(format!("{}.json", split.as_str()))
}

/// Sorted frame indices found in a directory of `%08d.png` files.
fn indexed_files(dir: &Path) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let index = stem.parse::<u32>().map_err(|_| format_err(&path, "frame file name is not an index"))?;
        out.push(index);
    }
    out.sort_unstable();
    Ok(out)
}

/// Loads a sequence, taking the declared objects from the first annotated frame.
pub fn load_sequence(root: &Path, id: &str) -> Result<SequenceRecord> {
    load_with_objects(root, id, None, BTreeSet::new())
}

/// Loads a manifest entry; objects are declared as `1..=entry.objects`.
pub fn load_entry(root: &Path, entry: &ManifestEntry) -> Result<SequenceRecord> {
    load_with_objects(root, &entry.id, Some(entry.object_ids()), entry.attributes.clone())
}

fn load_with_objects(
    root: &Path,
    id: &str,
    declared: Option<BTreeSet<u16>>,
    attributes: BTreeSet<AttributeLabel>,
) -> Result<SequenceRecord> {
    let img_dir = image_dir(root, id);
    if !img_dir.is_dir() {
        return Err(Error::NotFound(img_dir));
    }
    let indices = indexed_files(&img_dir)?;
    if indices.is_empty() {
        return Err(format_err(&img_dir, "no frames"));
    }
    let frames = indices
        .iter()
        .map(|&index| {
            let path = img_dir.join(frame_name(index));
            let image = load_frame(&path)?;
            Ok(Frame { index, path: Some(path), image })
        })
        .collect::<Result<Vec<_>>>()?;

    let ann_dir = annotation_dir(root, id);
    let groundtruth = if ann_dir.is_dir() {
        let masks = indices
            .iter()
            .zip(&frames)
            .map(|(&index, frame)| {
                let path = ann_dir.join(frame_name(index));
                let m = load_mask(&path)?;
                if m.width() != frame.image.width() || m.height() != frame.image.height() {
                    return Err(format_err(&path, "mask dimensions differ from the frame"));
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(masks)
    } else {
        None
    };

    let object_ids = match declared {
        Some(d) => d,
        None => groundtruth.as_ref().map(|g| g[0].ids()).unwrap_or_default(),
    };
    let rec = SequenceRecord { id: id.to_string(), fps: FPS, frames, object_ids, groundtruth, attributes };
    rec.validate()?;
    Ok(rec)
}

/// Writes frames (and groundtruth, when present) in the dataset layout and
/// records the written paths on the frames.
pub fn write_sequence(root: &Path, seq: &mut SequenceRecord) -> Result<()> {
    let img_dir = image_dir(root, &seq.id);
    std::fs::create_dir_all(&img_dir)?;
    for f in seq.frames.iter_mut() {
        let path = img_dir.join(frame_name(f.index));
        save_frame(&f.image, &path)?;
        f.path = Some(path);
    }
    if let Some(gt) = &seq.groundtruth {
        write_masks(&annotation_dir(root, &seq.id), seq.frames.iter().map(|f| f.index).zip(gt))?;
    }
    Ok(())
}

/// Writes `(frame index, mask)` pairs as `%08d.png` into `dir`.
pub fn write_masks<'a>(dir: &Path, masks: impl IntoIterator<Item = (u32, &'a Mask)>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (index, m) in masks {
        save_mask(m, &dir.join(frame_name(index)))?;
    }
    Ok(())
}

/// Reads every `%08d.png` mask in `dir`, keyed by frame index.
pub fn read_masks(dir: &Path) -> Result<BTreeMap<u32, Mask>> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    indexed_files(dir)?.into_iter().map(|i| Ok((i, load_mask(&dir.join(frame_name(i)))?))).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub videos: usize,
    pub total_frames: usize,
    pub mean_frames: f64,
    /// Visible object-frames.
    pub total_annotations: usize,
    pub mean_duration_minutes: f64,
    pub objects_per_video: f64,
    /// Sequences that failed to load, with the reason.
    pub failures: Vec<(String, String)>,
}

/// Published totals of the real long-term benchmark, for reference only.
pub mod reference_stats {
    pub const VIDEOS: usize = 220;
    pub const MEAN_DURATION_MINUTES: f64 = 1.59;
    pub const MEAN_FRAMES: usize = 574;
    pub const TOTAL_FRAMES: usize = 126_280;
    pub const TOTAL_ANNOTATIONS: usize = 156_432;
    pub const SPLIT_SIZES: [(&str, usize); 3] = [("train", 120), ("valid", 50), ("test", 50)];
}

/// Video-level statistics over a manifest; load failures are collected, not fatal.
pub fn dataset_stats(manifest: &DatasetManifest, root: &Path) -> StatsReport {
    let mut r = StatsReport::default();
    let mut objects = 0usize;
    let mut seconds = 0.0;
    for entry in &manifest.sequences {
        match load_entry(root, entry) {
            Ok(seq) => {
                r.videos += 1;
                r.total_frames += seq.len();
                r.total_annotations += seq.annotation_count();
                objects += seq.object_ids.len();
                seconds += seq.len() as f64 / seq.fps as f64;
            }
            Err(e) => r.failures.push((entry.id.clone(), e.to_string())),
        }
    }
    if r.videos > 0 {
        let n = r.videos as f64;
        r.mean_frames = r.total_frames as f64 / n;
        r.mean_duration_minutes = seconds / 60.0 / n;
        r.objects_per_video = objects as f64 / n;
    }
    r
}
