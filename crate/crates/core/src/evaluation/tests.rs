use super::*;
use crate::dataset::{Frame, FPS};
use crate::model::ModelConfig;

fn square(x0: usize, y0: usize, side: usize, id: u16) -> Mask {
    let mut m = Mask::new(32, 32);
    for y in y0..(y0 + side).min(32) {
        for x in x0..(x0 + side).min(32) {
            m.set(x, y, id);
        }
    }
    m
}

fn record(id: &str, masks: Vec<Mask>, attributes: &[AttributeLabel]) -> SequenceRecord {
    let object_ids = masks[0].ids().into_iter().filter(|&i| i != 0).collect();
    SequenceRecord {
        id: id.into(),
        fps: FPS,
        frames: (0..masks.len()).map(|i| Frame { index: i as u32, path: None, image: RgbImage::new(32, 32) }).collect(),
        object_ids,
        groundtruth: Some(masks),
        attributes: attributes.iter().copied().collect(),
    }
}

/// Predicts a fixed mask for every frame.
struct Constant(Mask);

impl Segmenter for Constant {
    type State = ();
    fn start(&self, _: &RgbImage, _: &Mask, _: &BTreeSet<u16>) -> Result<()> {
        Ok(())
    }
    fn step(&self, _: &(), _: &RgbImage, _: &Mask, _: OracleMode, _: BankCombo) -> Result<(Mask, ())> {
        Ok((self.0.clone(), ()))
    }
    fn footprint(&self, _: &()) -> usize {
        7
    }
}

#[test]
fn perfect_predictor_scores_one_everywhere() {
    let seq = record("a", vec![square(4, 4, 8, 1), square(6, 4, 8, 1), Mask::new(32, 32), square(9, 9, 8, 1)], &[]);
    for oracle in OracleMode::ALL {
        for combo in BankCombo::all() {
            let r = evaluate_dataset(&GroundtruthSegmenter, std::slice::from_ref(&seq), &EvalOptions { oracle, combo, ..Default::default() }).unwrap();
            assert_eq!((r.mean_j, r.mean_f, r.jf), (1.0, 1.0, 1.0));
        }
    }
}

#[test]
fn dataset_mean_is_over_object_tracks() {
    // Prediction covers half the object in "half" and all of it in "full".
    let gt = square(0, 0, 8, 1);
    let half = record("half", vec![gt.clone(); 3], &[]);
    let full = record("full", vec![square(0, 0, 4, 1); 3], &[]);
    let pred = Constant(square(0, 0, 4, 1));
    let r = evaluate_dataset(&pred, &[half, full], &EvalOptions::default()).unwrap();
    assert_eq!(r.tracks, 2);
    let j_half = 16.0 / 64.0;
    assert!((r.mean_j - (j_half + 1.0) / 2.0).abs() < 1e-12);
    assert!((r.jf - (r.mean_j + r.mean_f) / 2.0).abs() < 1e-15);
    assert_eq!(r.peak_footprint, 7);
}

#[test]
fn missing_first_frame_object_is_a_protocol_error() {
    let mut seq = record("x", vec![square(0, 0, 8, 1); 2], &[]);
    seq.object_ids.insert(2);
    assert!(matches!(evaluate_sequence(&GroundtruthSegmenter, &seq, &EvalOptions::default()), Err(Error::Protocol(_))));
    let good = record("y", vec![square(0, 0, 8, 1); 2], &[]);
    let r = evaluate_dataset(&GroundtruthSegmenter, &[seq, good], &EvalOptions::default()).unwrap();
    assert_eq!(r.failures.len(), 1);
    assert_eq!(r.tracks, 1);
    assert!(evaluate_dataset(&GroundtruthSegmenter, &[], &EvalOptions::default()).is_err());
}

#[test]
fn attribute_rows_average_sequence_j() {
    let gt = square(0, 0, 8, 1);
    let seqs = vec![
        record("a", vec![gt.clone(); 2], &[AttributeLabel::LRA, AttributeLabel::FM]),
        record("b", vec![square(0, 0, 4, 1); 2], &[AttributeLabel::LRA]),
        record("c", vec![square(0, 0, 2, 1); 2], &[AttributeLabel::LRA, AttributeLabel::FM]),
    ];
    let r = evaluate_dataset(&Constant(square(0, 0, 4, 1)), &seqs, &EvalOptions::default()).unwrap();
    let rows = attribute_breakdown(&r, &seqs);
    assert_eq!(rows.len(), 13);
    let row = |a| rows.iter().find(|r| r.attribute == a).unwrap().clone();
    // J per sequence: 16/64, 1, 4/16.
    assert!((row(AttributeLabel::FM).mean_j.unwrap() - (0.25 + 0.25) / 2.0).abs() < 1e-12);
    assert_eq!(row(AttributeLabel::LRA).mean_j.unwrap(), r.mean_j);
    assert_eq!(row(AttributeLabel::BC), AttributeRow { attribute: AttributeLabel::BC, sequences: 0, mean_j: None });
}

#[test]
fn reappearance_is_scored_against_the_window() {
    let mut masks = vec![square(0, 0, 8, 1); 3];
    masks.extend(vec![Mask::new(32, 32); REAPPEARANCE_GAP]);
    masks.extend(vec![square(0, 0, 8, 1); 20]);
    let seq = record("lra", masks, &[]);
    let hit = evaluate_sequence(&GroundtruthSegmenter, &seq, &EvalOptions::default()).unwrap();
    assert_eq!(hit.reappearances, vec![Reappearance { object: 1, frame: 3 + REAPPEARANCE_GAP, found_after: Some(0) }]);
    let miss = evaluate_sequence(&Constant(Mask::new(32, 32)), &seq, &EvalOptions::default()).unwrap();
    assert!(!miss.reappearances[0].redetected());
}

#[test]
fn ablation_and_oracle_suites_enumerate_settings() {
    let seq = record("s", vec![square(4, 4, 12, 1); 3], &[]);
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let ab = ablation_suite(&model, std::slice::from_ref(&seq), &EvalOptions::default()).unwrap();
    assert_eq!(ab.len(), 7);
    let full = evaluate_dataset(&model, std::slice::from_ref(&seq), &EvalOptions::default()).unwrap();
    assert_eq!(ab[6].to_json(), full.to_json());
    let or = oracle_suite(&model, std::slice::from_ref(&seq), &EvalOptions::default()).unwrap();
    assert_eq!(or.len(), 4);
    assert_eq!(or[0].to_json(), full.to_json());
}

#[test]
fn footprint_is_constant_across_sequence_lengths() {
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let short = record("short", vec![square(4, 4, 12, 1); 3], &[]);
    let long = record("long", vec![square(4, 4, 12, 1); 30], &[]);
    let r = evaluate_dataset(&model, &[short, long], &EvalOptions::default()).unwrap();
    let f: Vec<usize> = r.sequences.iter().flat_map(|s| [s.initial_footprint, s.peak_footprint]).collect();
    assert!(f.iter().all(|&x| x == f[0] && x > 0));
}

#[test]
fn workers_do_not_change_the_report() {
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let seqs: Vec<_> = (0..4).map(|i| record(&format!("s{i}"), vec![square(i * 3, 4, 12, 1); 4], &[])).collect();
    let one = evaluate_dataset(&model, &seqs, &EvalOptions::default()).unwrap();
    let three = evaluate_dataset(&model, &seqs, &EvalOptions { workers: 3, ..Default::default() }).unwrap();
    assert_eq!(one.to_json(), three.to_json());
}
