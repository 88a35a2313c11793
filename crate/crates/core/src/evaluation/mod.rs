//! Sequence and dataset evaluation, oracle and bank-ablation runs, and
//! attribute-conditioned aggregation.
//!
//! Reports are deterministic: wall-clock timing is kept beside the report
//! and written to its own file, so `report.json` and `frames.csv` are
//! byte-identical across runs.

mod attributes;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use attributes::{classify_attributes, FAST_MOTION_PX, LOW_RESOLUTION_RATIO, REAPPEARANCE_GAP, SCALE_RANGE};

use crate::dataset::{AttributeLabel, Mask, RgbImage, SequenceRecord};
use crate::error::{validation, Error, Result};
use crate::metrics::{default_tolerance, score_frame, sequence_score, AbsencePolicy, FrameScore, SequenceScore};
use crate::model::{BankCombo, Model, OracleMode, Tracker};

/// Frames after a reappearance within which the object must be found.
pub const REDETECTION_WINDOW: usize = 10;
/// J above which a reappeared object counts as found.
pub const REDETECTION_J: f64 = 0.5;

/// Anything that propagates first-frame masks through a video.
pub trait Segmenter: Sync {
    type State: Send;

    fn start(&self, image: &RgbImage, mask: &Mask, objects: &BTreeSet<u16>) -> Result<Self::State>;

    /// Segments the next frame. `gt` is that frame's groundtruth; only
    /// oracle modes may read it.
    fn step(&self, state: &Self::State, image: &RgbImage, gt: &Mask, oracle: OracleMode, combo: BankCombo) -> Result<(Mask, Self::State)>;

    /// Stored memory elements held by the state.
    fn footprint(&self, state: &Self::State) -> usize;
}

impl Segmenter for Model {
    type State = Tracker;

    fn start(&self, image: &RgbImage, mask: &Mask, objects: &BTreeSet<u16>) -> Result<Tracker> {
        self.init_tracker(image, mask, objects)
    }

    fn step(&self, state: &Tracker, image: &RgbImage, gt: &Mask, oracle: OracleMode, combo: BankCombo) -> Result<(Mask, Tracker)> {
        let (result, next) = self.segment_frame(state, image, oracle, Some(gt), combo)?;
        Ok((result.mask, next))
    }

    fn footprint(&self, state: &Tracker) -> usize {
        state.footprint()
    }
}

/// Returns the groundtruth of every frame; a perfect predictor.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundtruthSegmenter;

impl Segmenter for GroundtruthSegmenter {
    type State = ();

    fn start(&self, _: &RgbImage, _: &Mask, _: &BTreeSet<u16>) -> Result<()> {
        Ok(())
    }

    fn step(&self, _: &(), _: &RgbImage, gt: &Mask, _: OracleMode, _: BankCombo) -> Result<(Mask, ())> {
        Ok((gt.clone(), ()))
    }

    fn footprint(&self, _: &()) -> usize {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub oracle: OracleMode,
    pub combo: BankCombo,
    pub policy: AbsencePolicy,
    /// Boundary tolerance in pixels; `None` picks it from the frame size.
    pub tolerance: Option<f64>,
    pub workers: usize,
    #[serde(skip)]
    pub keep_masks: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { oracle: OracleMode::None, combo: BankCombo::FULL, policy: AbsencePolicy::Score, tolerance: None, workers: 1, keep_masks: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub object: u16,
    pub mean_j: f64,
    pub mean_f: f64,
    pub jf: f64,
}

/// A return after at least `REAPPEARANCE_GAP` invisible frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reappearance {
    pub object: u16,
    pub frame: usize,
    /// Frames from the reappearance to the first with J above the bar.
    pub found_after: Option<usize>,
}

impl Reappearance {
    pub fn redetected(&self) -> bool {
        self.found_after.is_some_and(|d| d < REDETECTION_WINDOW)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceEval {
    pub id: String,
    pub frames: usize,
    pub objects: Vec<ObjectScore>,
    /// Mean over the sequence's objects.
    pub score: Option<SequenceScore>,
    pub reappearances: Vec<Reappearance>,
    pub initial_footprint: usize,
    pub peak_footprint: usize,
    #[serde(skip)]
    pub detail: Vec<FrameScore>,
    #[serde(skip)]
    pub frame_seconds: Vec<f64>,
    #[serde(skip)]
    pub masks: Vec<Mask>,
}

/// Objects whose visibility returns after a long gap, with the frame of
/// each return.
pub fn reappearance_frames(gt: &[Mask], objects: &BTreeSet<u16>) -> Vec<(u16, usize)> {
    let mut out = Vec::new();
    for &id in objects {
        let (mut seen, mut gap) = (false, 0usize);
        for (t, m) in gt.iter().enumerate() {
            if m.count(id) > 0 {
                if seen && gap >= REAPPEARANCE_GAP {
                    out.push((id, t));
                }
                seen = true;
                gap = 0;
            } else {
                gap += 1;
            }
        }
    }
    out
}

/// Initialises from frame 0, segments the rest in order and scores every
/// predicted frame.
pub fn evaluate_sequence<S: Segmenter>(seg: &S, seq: &SequenceRecord, opts: &EvalOptions) -> Result<SequenceEval> {
    let gt = seq
        .groundtruth
        .as_ref()
        .ok_or_else(|| Error::Protocol(format!("sequence {} has no groundtruth", seq.id)))?;
    if seq.frames.is_empty() || gt.len() != seq.frames.len() {
        return Err(Error::Protocol(format!("sequence {} needs one groundtruth mask per frame", seq.id)));
    }
    for &id in &seq.object_ids {
        if gt[0].count(id) == 0 {
            return Err(Error::Protocol(format!("object {id} is missing from the first frame of {}", seq.id)));
        }
    }
    let radius = opts.tolerance.unwrap_or_else(|| default_tolerance(gt[0].width(), gt[0].height()));
    let mut state = seg.start(&seq.frames[0].image, &gt[0], &seq.object_ids)?;
    let initial_footprint = seg.footprint(&state);
    let mut peak_footprint = initial_footprint;
    let mut detail = Vec::new();
    let mut frame_seconds = Vec::with_capacity(seq.len());
    let mut masks = Vec::new();
    let mut j_at: BTreeMap<(u16, usize), f64> = BTreeMap::new();
    for t in 1..seq.len() {
        let clock = Instant::now();
        let (pred, next) = seg.step(&state, &seq.frames[t].image, &gt[t], opts.oracle, opts.combo)?;
        frame_seconds.push(clock.elapsed().as_secs_f64());
        state = next;
        peak_footprint = peak_footprint.max(seg.footprint(&state));
        for &id in &seq.object_ids {
            if let Some(s) = score_frame(&pred, &gt[t], id, t, radius, opts.policy)? {
                j_at.insert((id, t), s.j);
                detail.push(s);
            }
        }
        if opts.keep_masks {
            masks.push(pred);
        }
    }
    let mut objects = Vec::new();
    for &id in &seq.object_ids {
        let frames: Vec<FrameScore> = detail.iter().filter(|s| s.object == id).copied().collect();
        if let Ok(s) = sequence_score(&frames) {
            objects.push(ObjectScore { object: id, mean_j: s.mean_j, mean_f: s.mean_f, jf: s.jf });
        }
    }
    let score = (!objects.is_empty()).then(|| {
        let n = objects.len() as f64;
        SequenceScore::new(objects.iter().map(|o| o.mean_j).sum::<f64>() / n, objects.iter().map(|o| o.mean_f).sum::<f64>() / n)
    });
    let reappearances = reappearance_frames(gt, &seq.object_ids)
        .into_iter()
        .map(|(object, frame)| {
            let found_after = (frame..seq.len()).find(|&t| j_at.get(&(object, t)).is_some_and(|&j| j > REDETECTION_J)).map(|t| t - frame);
            Reappearance { object, frame, found_after }
        })
        .collect();
    Ok(SequenceEval {
        id: seq.id.clone(),
        frames: seq.len(),
        objects,
        score,
        reappearances,
        initial_footprint,
        peak_footprint,
        detail,
        frame_seconds,
        masks,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub sequence: String,
    pub error: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedetectionSummary {
    pub events: usize,
    pub redetected: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub oracle: OracleMode,
    pub combo: BankCombo,
    pub policy: AbsencePolicy,
    pub tracks: usize,
    /// Means over object-tracks.
    pub mean_j: f64,
    pub mean_f: f64,
    pub jf: f64,
    pub peak_footprint: usize,
    pub redetection: Option<RedetectionSummary>,
    pub sequences: Vec<SequenceEval>,
    pub failures: Vec<Failure>,
}

impl EvalReport {
    pub fn sequence(&self, id: &str) -> Option<&SequenceEval> {
        self.sequences.iter().find(|s| s.id == id)
    }

    /// Serialises everything except timing.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn write_frames_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sequence", "object", "frame", "j", "f"])?;
        for s in &self.sequences {
            for d in &s.detail {
                w.write_record([s.id.clone(), d.object.to_string(), d.frame.to_string(), d.j.to_string(), d.f.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_sequences_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sequence", "object", "j", "f", "jf"])?;
        for s in &self.sequences {
            for o in &s.objects {
                w.write_record([s.id.clone(), o.object.to_string(), o.mean_j.to_string(), o.mean_f.to_string(), o.jf.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Per-sequence wall clock; varies between runs.
    pub fn write_timing_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sequence", "frames", "seconds", "fps", "peak_footprint"])?;
        for s in &self.sequences {
            let secs: f64 = s.frame_seconds.iter().sum();
            let fps = if secs > 0.0 { s.frame_seconds.len() as f64 / secs } else { 0.0 };
            w.write_record([s.id.clone(), s.frames.to_string(), format!("{secs:.6}"), format!("{fps:.3}"), s.peak_footprint.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `report.json`, `sequences.csv`, `frames.csv` and `timing.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json() + "\n")?;
        self.write_sequences_csv(&dir.join("sequences.csv"))?;
        self.write_frames_csv(&dir.join("frames.csv"))?;
        self.write_timing_csv(&dir.join("timing.csv"))
    }

    pub fn frames_per_second(&self) -> f64 {
        let secs: f64 = self.sequences.iter().flat_map(|s| &s.frame_seconds).sum();
        let n: usize = self.sequences.iter().map(|s| s.frame_seconds.len()).sum();
        if secs > 0.0 {
            n as f64 / secs
        } else {
            0.0
        }
    }
}

/// Runs `f` over the items on `workers` threads; results keep input order.
pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("no worker panicked").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Evaluates every sequence; a sequence that fails is recorded and left
/// out of the means.
pub fn evaluate_dataset<S: Segmenter>(seg: &S, seqs: &[SequenceRecord], opts: &EvalOptions) -> Result<EvalReport> {
    if seqs.is_empty() {
        return Err(validation("no sequences to evaluate"));
    }
    let results = parallel_map(seqs, opts.workers, |s| evaluate_sequence(seg, s, opts));
    let mut sequences = Vec::new();
    let mut failures = Vec::new();
    for (seq, r) in seqs.iter().zip(results) {
        match r {
            Ok(e) => sequences.push(e),
            Err(e) => failures.push(Failure { sequence: seq.id.clone(), error: e.to_string() }),
        }
    }
    let tracks: Vec<&ObjectScore> = sequences.iter().flat_map(|s| &s.objects).collect();
    if tracks.is_empty() {
        return Err(validation(format!("no sequence produced a score ({} failures)", failures.len())));
    }
    let n = tracks.len() as f64;
    let mean_j = tracks.iter().map(|o| o.mean_j).sum::<f64>() / n;
    let mean_f = tracks.iter().map(|o| o.mean_f).sum::<f64>() / n;
    let events: Vec<&Reappearance> = sequences.iter().flat_map(|s| &s.reappearances).collect();
    let redetection = (!events.is_empty()).then(|| {
        let redetected = events.iter().filter(|e| e.redetected()).count();
        RedetectionSummary { events: events.len(), redetected, rate: redetected as f64 / events.len() as f64 }
    });
    Ok(EvalReport {
        oracle: opts.oracle,
        combo: opts.combo,
        policy: opts.policy,
        tracks: tracks.len(),
        mean_j,
        mean_f,
        jf: (mean_j + mean_f) / 2.0,
        peak_footprint: sequences.iter().map(|s| s.peak_footprint).max().unwrap_or(0),
        redetection,
        sequences,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeRow {
    pub attribute: AttributeLabel,
    pub sequences: usize,
    /// `None` when no evaluated sequence carries the attribute.
    pub mean_j: Option<f64>,
}

/// Mean J over the sequences carrying each attribute. Sequences count
/// towards every attribute they carry.
pub fn attribute_breakdown(report: &EvalReport, seqs: &[SequenceRecord]) -> Vec<AttributeRow> {
    let by_id: BTreeMap<&str, &SequenceRecord> = seqs.iter().map(|s| (s.id.as_str(), s)).collect();
    AttributeLabel::ALL
        .iter()
        .map(|&attribute| {
            let js: Vec<f64> = report
                .sequences
                .iter()
                .filter(|e| by_id.get(e.id.as_str()).is_some_and(|s| s.attributes.contains(&attribute)))
                .filter_map(|e| e.score.map(|s| s.mean_j))
                .collect();
            let mean_j = (!js.is_empty()).then(|| js.iter().sum::<f64>() / js.len() as f64);
            AttributeRow { attribute, sequences: js.len(), mean_j }
        })
        .collect()
}

pub fn write_attribute_csv(rows: &[AttributeRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["attribute", "sequences", "j"])?;
    for r in rows {
        w.write_record([r.attribute.to_string(), r.sequences.to_string(), r.mean_j.map_or_else(|| "absent".into(), |j| j.to_string())])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

impl SummaryRow {
    pub fn of(setting: impl Into<String>, report: &EvalReport) -> Self {
        Self { setting: setting.into(), j: report.mean_j, f: report.mean_f, jf: report.jf }
    }
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One report per bank combination, in `BankCombo::all()` order.
pub fn ablation_suite<S: Segmenter>(seg: &S, seqs: &[SequenceRecord], opts: &EvalOptions) -> Result<Vec<EvalReport>> {
    BankCombo::all().into_iter().map(|combo| evaluate_dataset(seg, seqs, &EvalOptions { combo, ..*opts })).collect()
}

/// One report per oracle mode, in `OracleMode::ALL` order.
pub fn oracle_suite<S: Segmenter>(seg: &S, seqs: &[SequenceRecord], opts: &EvalOptions) -> Result<Vec<EvalReport>> {
    OracleMode::ALL.into_iter().map(|oracle| evaluate_dataset(seg, seqs, &EvalOptions { oracle, ..*opts })).collect()
}

#[cfg(test)]
mod tests;
