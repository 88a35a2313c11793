use super::*;
use crate::dataset::Frame;
use crate::synthgen::{generate, short_easy_spec};

fn square(x0: usize, y0: usize, side: usize, id: u16) -> Mask {
    let mut m = Mask::new(32, 32);
    for y in y0..(y0 + side).min(32) {
        for x in x0..(x0 + side).min(32) {
            m.set(x, y, id);
        }
    }
    m
}

fn record(masks: Vec<Mask>) -> SequenceRecord {
    let object_ids = masks.iter().flat_map(|m| m.ids()).filter(|&i| i != 0).collect();
    SequenceRecord {
        id: "p".into(),
        fps: FPS,
        frames: (0..masks.len()).map(|i| Frame { index: i as u32, path: None, image: RgbImage::new(32, 32) }).collect(),
        object_ids,
        groundtruth: Some(masks),
        attributes: BTreeSet::new(),
    }
}

fn identity<'a>(gt: &'a [Mask]) -> (GroundtruthInstances<'a>, GroundtruthBoxes<'a>, GroundtruthPropagator<'a>) {
    (GroundtruthInstances(gt), GroundtruthBoxes(gt), GroundtruthPropagator(gt))
}

#[test]
fn identity_pipeline_reproduces_groundtruth() {
    let seq = generate(&short_easy_spec("id".into(), 5)).unwrap();
    let gt = seq.groundtruth.clone().unwrap();
    let (s, t, p) = identity(&gt);
    let plugins = Plugins { segmenter: &s, tracker: &t, propagator: &p, annotator: &NoCorrections };
    let first = first_boxes(&gt, &seq.object_ids);
    let out = run_pipeline(&seq, &first, &plugins, &FlagConfig::default(), None).unwrap();
    assert_eq!(out.masks, gt);
    assert!(out.sparse_queue.is_empty() && out.dense_queue.is_empty(), "{:?} {:?}", out.sparse_queue, out.dense_queue);
    assert_eq!(audit_quality(&out.masks, &gt).unwrap().mean_iou, 1.0);
}

#[test]
fn sparse_masks_are_sampled_once_per_second() {
    let seq = generate(&short_easy_spec("s".into(), 2)).unwrap();
    let gt = seq.groundtruth.clone().unwrap();
    let (s, t, _) = identity(&gt);
    let (sparse, queue) = step1_auto_segment(&seq, &first_boxes(&gt, &seq.object_ids), &s, &t).unwrap();
    assert_eq!(sparse.keys().copied().collect::<Vec<_>>(), vec![0, 6, 12, 18, 24, 30, 36]);
    assert!(sparse.iter().all(|(&k, m)| *m == gt[k]));
    assert!(queue.is_empty());
}

#[test]
fn higher_overlap_candidate_wins() {
    let a = square(0, 0, 10, 1).binary(1);
    let b = square(12, 12, 10, 1).binary(1);
    // Box 10..20 overlaps `a` on 0 pixels and `b` on 8x8 of its 10x10.
    let target = BoxRegion { x0: 10, y0: 10, x1: 20, y1: 20 };
    assert_eq!(select_candidate(&[a.clone(), b.clone()], 32, &target), Some(1));
    let near_a = BoxRegion { x0: 2, y0: 2, x1: 14, y1: 14 };
    // IoU with a: 64 / (100 + 144 - 64) = 0.356; with b: 4 / (100 + 144 - 4).
    assert_eq!(select_candidate(&[a.clone(), b], 32, &near_a), Some(0));
    assert_eq!(select_candidate(&[a], 32, &BoxRegion { x0: 25, y0: 25, x1: 30, y1: 30 }), None);
}

struct NoCandidates;

impl InstanceSegmenter for NoCandidates {
    fn candidates(&self, _: usize, _: &RgbImage) -> Result<Vec<Vec<bool>>> {
        Ok(Vec::new())
    }
}

#[test]
fn empty_segmenter_output_flags_missing_frames() {
    let gt = vec![square(4, 4, 8, 1); 13];
    let seq = record(gt.clone());
    let (sparse, queue) = step1_auto_segment(&seq, &first_boxes(&gt, &seq.object_ids), &NoCandidates, &GroundtruthBoxes(&gt)).unwrap();
    assert_eq!(sparse.len(), 3);
    assert_eq!(queue.frame_indices(), BTreeSet::from([0, 6, 12]));
    assert!(queue.flagged.iter().all(|f| f.reason == FlagReason::Missing));
}

#[test]
fn dropped_frame_is_the_only_flag() {
    let mut masks: FrameMasks = (0..8).map(|t| (t * 6, square(4 + t, 4, 10, 1))).collect();
    masks.insert(18, Mask::new(32, 32));
    let q = flag_for_correction("d", 48, &masks, Round::Sparse, &FlagConfig::default()).unwrap();
    assert_eq!(q.flagged, vec![FlaggedFrame { frame: 18, object: 1, reason: FlagReason::Dropout }]);
    masks.insert(18, square(7, 4, 10, 1));
    assert!(flag_for_correction("d", 48, &masks, Round::Sparse, &FlagConfig::default()).unwrap().is_empty());
}

#[test]
fn shape_change_and_area_spike_are_flagged() {
    let mut masks: FrameMasks = (0..3).map(|t| (t, square(4, 4, 10, 1))).collect();
    let mut thin = Mask::new(32, 32);
    (0..30).for_each(|x| thin.set(x, 20, 1));
    masks.insert(1, thin);
    masks.insert(2, square(0, 0, 30, 1));
    let q = flag_for_correction("s", 3, &masks, Round::Dense, &FlagConfig::default()).unwrap();
    let reasons: Vec<(usize, FlagReason)> = q.flagged.iter().map(|f| (f.frame, f.reason)).collect();
    assert!(reasons.contains(&(1, FlagReason::IouDrop)) && reasons.contains(&(1, FlagReason::AreaSpike)));
    assert!(reasons.contains(&(2, FlagReason::AreaSpike)));
}

#[test]
fn corrections_replace_frames_and_are_idempotent() {
    let masks: FrameMasks = (0..3).map(|t| (t, square(t, 0, 5, 1))).collect();
    assert_eq!(apply_corrections(&masks, &FrameMasks::new(), 3).unwrap(), masks);
    let fix: FrameMasks = [(1, square(9, 9, 5, 2))].into();
    let once = apply_corrections(&masks, &fix, 3).unwrap();
    assert_eq!(once[&1], fix[&1]);
    assert_eq!(once[&0], masks[&0]);
    assert_eq!(apply_corrections(&once, &fix, 3).unwrap(), once);
    assert!(apply_corrections(&masks, &[(5, square(0, 0, 2, 1))].into(), 3).is_err());
    let wrong: FrameMasks = [(0, Mask::new(8, 8))].into();
    assert!(matches!(apply_corrections(&masks, &wrong, 3), Err(Error::Validation(_))));
}

#[test]
fn corrections_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let fix: FrameMasks = [(6, square(1, 1, 5, 3)), (12, square(2, 2, 6, 1))].into();
    write_corrections(dir.path(), &fix).unwrap();
    assert_eq!(load_corrections(dir.path()).unwrap(), fix);
    std::fs::write(dir.path().join("corrected").join("00000018.png"), b"not a png").unwrap();
    assert!(matches!(load_corrections(dir.path()), Err(Error::Validation(_))));
    let mut q = CorrectionQueue::new("x", Round::Dense, 20);
    q.push(3, 1, FlagReason::IouDrop).unwrap();
    assert!(q.push(20, 1, FlagReason::IouDrop).is_err());
    let path = q.export(dir.path()).unwrap();
    assert_eq!(CorrectionQueue::import(&path).unwrap(), q);
    std::fs::write(&path, r#"{"sequence":"x","round":"dense-6fps","frames":2,"flagged":[{"frame":4,"object":1,"reason":"dropout"}]}"#).unwrap();
    assert!(CorrectionQueue::import(&path).is_err());
}

#[test]
fn frames_after_an_anchor_propagate_from_it() {
    assert_eq!(anchor_segments(&BTreeSet::from([0, 6]), 8), vec![(0, vec![1, 2, 3, 4, 5]), (6, vec![7])]);
    assert_eq!(anchor_segments(&BTreeSet::from([2]), 4), vec![(2, vec![1, 0]), (2, vec![3])]);
    assert!(anchor_segments(&BTreeSet::new(), 4).is_empty());
}

/// Copies the anchor mask to every target.
struct Copy;

impl MaskPropagator for Copy {
    fn propagate(&self, _: &SequenceRecord, _: usize, mask: &Mask, targets: &[usize]) -> Result<Vec<Mask>> {
        Ok(targets.iter().map(|_| mask.clone()).collect())
    }
}

#[test]
fn static_scene_propagates_to_constant_masks() {
    let gt = vec![square(3, 3, 9, 1); 14];
    let seq = record(gt.clone());
    let sparse: FrameMasks = sample_frames(14).into_iter().map(|t| (t, gt[t].clone())).collect();
    let (dense, q) = step3_propagate(&seq, &sparse, &Copy).unwrap();
    assert_eq!(dense, gt);
    assert!(q.is_empty());
    let partial: FrameMasks = [(0, gt[0].clone())].into();
    assert!(step3_propagate(&seq, &partial, &Copy).is_err());
}

struct Failing;

impl MaskPropagator for Failing {
    fn propagate(&self, _: &SequenceRecord, _: usize, _: &Mask, _: &[usize]) -> Result<Vec<Mask>> {
        Err(Error::Plugin { plugin: "failing".into(), reason: "down".into() })
    }
}

#[test]
fn propagation_failure_flags_frames() {
    let gt = vec![square(3, 3, 9, 1); 8];
    let seq = record(gt.clone());
    let sparse: FrameMasks = [(0, gt[0].clone()), (6, gt[6].clone())].into();
    let (dense, q) = step3_propagate(&seq, &sparse, &Failing).unwrap();
    assert_eq!(dense.len(), 8);
    assert_eq!(q.frame_indices(), BTreeSet::from([1, 2, 3, 4, 5, 7]));
}

#[test]
fn audit_scores_object_frames() {
    let gt = vec![square(0, 0, 8, 1), square(0, 0, 8, 1)];
    assert_eq!(audit_quality(&gt, &gt).unwrap().mean_iou, 1.0);
    let produced = vec![square(0, 0, 8, 1), square(0, 0, 4, 1)];
    let r = audit_quality(&produced, &gt).unwrap();
    assert_eq!(r.object_frames, 2);
    assert!((r.mean_iou - (1.0 + 0.25) / 2.0).abs() < 1e-12);
    assert!(audit_quality(&produced[..1], &gt).is_err());
}

#[test]
fn groundtruth_annotator_fixes_flagged_frames() {
    let gt = vec![square(4, 4, 10, 1); 13];
    let seq = record(gt.clone());
    let plugins = Plugins { segmenter: &NoCandidates, tracker: &GroundtruthBoxes(&gt), propagator: &Copy, annotator: &GroundtruthAnnotator(&gt) };
    let out = run_pipeline(&seq, &first_boxes(&gt, &seq.object_ids), &plugins, &FlagConfig::default(), None).unwrap();
    assert_eq!(out.masks, gt);
    assert_eq!(out.sparse_queue.frame_indices().len(), 3);
}

#[test]
fn subprocess_propagator_exchanges_files() {
    let dir = tempfile::tempdir().unwrap();
    let gt = vec![square(2, 2, 6, 1); 4];
    let seq = record(gt.clone());
    let script = "for t in 00000001 00000002 00000003; do cp \"$1/anchor.png\" \"$2/$t.png\"; done";
    let p = SubprocessPropagator { program: "sh".into(), args: vec!["-c".into(), script.into(), "sh".into()], work_dir: dir.path().to_path_buf() };
    assert_eq!(p.propagate(&seq, 0, &gt[0], &[1, 2, 3]).unwrap(), gt[1..].to_vec());
    let broken = SubprocessPropagator { program: "sh".into(), args: vec!["-c".into(), "exit 3".into(), "sh".into()], work_dir: dir.path().to_path_buf() };
    assert!(matches!(broken.propagate(&seq, 0, &gt[0], &[1]), Err(Error::Plugin { .. })));
}
