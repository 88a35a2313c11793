use std::collections::BTreeSet;

use super::*;
use crate::dataset::Frame;
use crate::model::ModelConfig;

fn square(w: usize, h: usize, x0: usize, y0: usize, side: usize, id: u16) -> Mask {
    let mut m = Mask::new(w, h);
    for y in y0..(y0 + side).min(h) {
        for x in x0..(x0 + side).min(w) {
            m.set(x, y, id);
        }
    }
    m
}

fn logits_for(mask: &Mask, id: u16, confidence: f64) -> Vec<f64> {
    mask.binary(id).iter().map(|&b| if b { confidence } else { -confidence }).collect()
}

/// A bright square sliding right over a dark flat background.
fn sliding_square(frames: usize, size: usize) -> SequenceRecord {
    let side = size / 3;
    let mut images = Vec::new();
    let mut masks = Vec::new();
    for t in 0..frames {
        let x0 = (2 + t) % (size - side);
        let m = square(size, size, x0, size / 3, side, 1);
        let mut img = RgbImage::new(size, size);
        for y in 0..size {
            for x in 0..size {
                img.put(x, y, if m.get(x, y) == 1 { [230, 200, 40] } else { [20, 30, 60] });
            }
        }
        images.push(img);
        masks.push(m);
    }
    SequenceRecord {
        id: "slide".into(),
        fps: crate::dataset::FPS,
        frames: images.into_iter().enumerate().map(|(i, image)| Frame { index: i as u32, path: None, image }).collect(),
        object_ids: BTreeSet::from([1]),
        groundtruth: Some(masks),
        attributes: BTreeSet::new(),
    }
}

#[test]
fn dice_is_zero_for_confident_match_and_one_for_complement() {
    let m = square(8, 8, 2, 2, 4, 1);
    assert!(dice_loss(&logits_for(&m, 1, 40.0), &m, 1).unwrap() < 1e-12);
    let anti: Vec<f64> = logits_for(&m, 1, -40.0);
    // Complement: |P∩G| = 0, |P| + |G| = 64, so 1 - 1/65.
    let got = dice_loss(&anti, &m, 1).unwrap();
    assert!((got - (1.0 - 1.0 / 65.0)).abs() < 1e-9, "{got}");
}

#[test]
fn dice_on_half_overlap_matches_hand_value() {
    // Target is the left column of a 2x2 frame, prediction the top row.
    let target = Mask::from_labels(2, 2, vec![1, 0, 1, 0]).unwrap();
    let logits = [50.0, 50.0, -50.0, -50.0];
    let want = 1.0 - (2.0 * 1.0 + 1.0) / (2.0 + 2.0 + 1.0);
    assert!((dice_loss(&logits, &target, 1).unwrap() - want).abs() < 1e-12);
}

#[test]
fn bootstrapped_ce_keeps_the_hardest_pixels() {
    let target = Mask::from_labels(4, 1, vec![1, 1, 1, 1]).unwrap();
    // Logits chosen so the per-pixel losses are exactly 0.1 .. 0.4.
    let losses = [0.1f64, 0.2, 0.3, 0.4];
    let logits: Vec<f64> = losses.iter().map(|l| -((l.exp() - 1.0).ln())).collect();
    let full = bootstrapped_ce(&logits, &target, 1, 1.0).unwrap();
    assert!((full - 0.25).abs() < 1e-12);
    let half = bootstrapped_ce(&logits, &target, 1, 0.5).unwrap();
    assert!((half - 0.35).abs() < 1e-12);
    assert!(bootstrapped_ce(&logits, &target, 1, 0.0).is_err());
    assert!(bootstrapped_ce(&logits[..3], &target, 1, 0.5).is_err());
}

#[test]
fn schedules_warm_up_then_decay() {
    let cfg = TrainConfig { steps: 100, warmup_steps: 10, keep_warmup: 0.5, ..reference_schedule()[0].clone() };
    assert!((cfg.lr_at(0) - cfg.learning_rate / 10.0).abs() < 1e-15);
    assert!((cfg.lr_at(9) - cfg.learning_rate).abs() < 1e-15);
    assert!(cfg.lr_at(50) < cfg.lr_at(10));
    assert!(cfg.lr_at(99) > 0.0);
    assert_eq!(cfg.keep_at(0), 1.0);
    assert!((cfg.keep_at(25) - 0.7).abs() < 1e-12);
    assert!((cfg.keep_at(80) - 0.4).abs() < 1e-12);
}

#[test]
fn reference_schedule_values() {
    let [pre, main] = reference_schedule();
    assert_eq!((pre.learning_rate, pre.weight_decay, pre.steps, pre.batch_size), (4e-4, 0.03, 100_100, 16));
    assert_eq!((main.learning_rate, main.weight_decay, main.steps, main.batch_size), (2e-4, 0.07, 100_100, 16));
    let ft = FinetuneConfig::default();
    assert_eq!((ft.epochs, ft.learning_rate), (2, 5e-4));
    assert!(pre.validate().is_ok() && main.validate().is_ok());
    assert_eq!(main.bank_dropout, 0.0);
    assert!(TrainConfig { bank_dropout: 1.5, ..pre.clone() }.validate().is_err());
    assert!(TrainConfig { clip_length: 1, ..pre }.validate().is_err());
}

#[test]
fn phase_names_round_trip() {
    for p in [Phase::PretrainStatic, Phase::MainVideo] {
        assert_eq!(p.as_str().parse::<Phase>().unwrap(), p);
        assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{p}\""));
    }
    assert!("warmup".parse::<Phase>().is_err());
}

#[test]
fn deformation_keeps_labels_and_size() {
    let seq = sliding_square(4, 32);
    let mut rng = seeded(3);
    let (img, mask) = deform(&seq.frames[0].image, &seq.groundtruth.as_ref().unwrap()[0], &mut rng, 1.0);
    assert_eq!((img.width(), img.height(), mask.width(), mask.height()), (32, 32, 32, 32));
    assert!(mask.ids().is_subset(&BTreeSet::from([0, 1])));
    assert!(mask.count(1) > 0);
}

#[test]
fn clips_start_with_visible_objects_and_are_ordered() {
    let data = TrainData { videos: vec![sliding_square(30, 32)] };
    let mut rng = seeded(1);
    for _ in 0..20 {
        let c = data.video_clip(&mut rng, 5, 250);
        assert_eq!((c.images.len(), c.frames.len()), (5, 5));
        assert!(c.frames.windows(2).all(|w| w[0] < w[1]));
        assert!(c.objects.iter().all(|&id| c.masks[0].count(id) > 0));
        let s = data.static_clip(&mut rng, 3);
        assert_eq!(s.images.len(), 3);
        assert_eq!(s.frames, vec![0, 1, 2]);
    }
    assert!(TrainData::default().validate().is_err());
}

#[test]
fn loss_curve_is_reproducible() {
    let data = TrainData { videos: vec![sliding_square(12, 32)] };
    let cfg = TrainConfig { steps: 3, batch_size: 2, clip_length: 3, warmup_steps: 1, ..desk_schedule()[1].clone() };
    let run = || {
        let mut model = Model::new(ModelConfig::tiny()).unwrap();
        train(&mut model, &data, std::slice::from_ref(&cfg), |_| {}).unwrap().losses()
    };
    let a = run();
    assert_eq!(a.len(), 3);
    assert!(a.iter().all(|l| l.is_finite()));
    assert_eq!(a, run());
}

#[test]
fn finetune_with_zero_epochs_is_a_no_op() {
    let data = TrainData { videos: vec![sliding_square(6, 32)] };
    let mut model = Model::new(ModelConfig::tiny()).unwrap();
    let before = model.store().clone();
    let log = finetune(&mut model, &data, &FinetuneConfig { epochs: 0, ..FinetuneConfig::default() }, |_| {}).unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(model.store(), &before);
}

#[test]
fn training_overfits_a_single_video() {
    let data = TrainData { videos: vec![sliding_square(10, 32)] };
    let cfg = TrainConfig {
        steps: 300,
        batch_size: 1,
        clip_length: 3,
        learning_rate: 5e-3,
        warmup_steps: 5,
        keep_warmup: 0.2,
        box_probability: 0.0,
        bank_dropout: 0.0,
        ..desk_schedule()[1].clone()
    };
    let mut model = Model::new(ModelConfig::tiny()).unwrap();
    let log = train(&mut model, &data, &[cfg], |_| {}).unwrap();
    let tail: f64 = log.losses()[290..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.05, "final loss {tail}, first {}", log.rows[0].loss);
}

#[test]
fn augmentation_moves_pixels_and_labels_together() {
    let mut m = square(8, 8, 1, 2, 3, 1);
    m.set(7, 0, 2);
    let mut img = RgbImage::new(8, 8);
    for y in 0..8 {
        for x in 0..8 {
            let id = m.get(x, y) as u8;
            img.put(x, y, [id * 100, (x * 10) as u8, (y * 10) as u8]);
        }
    }
    let clip = Clip { images: vec![img.clone(), img], masks: vec![m.clone(), m], objects: vec![1, 2], frames: vec![0, 1] };
    let mut rng = seeded(3);
    for _ in 0..20 {
        let out = augment_clip(clip.clone(), &mut rng);
        assert_eq!(out.objects, vec![1, 2]);
        assert_eq!(out.images[0], out.images[1]);
        assert_eq!(out.masks[0], out.masks[1]);
        let mk = &out.masks[0];
        assert_eq!((mk.count(1), mk.count(2)), (9, 1));
        for y in 0..8 {
            for x in 0..8 {
                let p = out.images[0].pixel(x, y);
                assert!(p.contains(&(mk.get(x, y) as u8 * 100)));
            }
        }
    }
}

#[test]
fn clip_loss_respects_the_bank_subset() {
    let frame = |x0: usize| {
        let m = square(16, 16, x0, 4, 6, 1);
        let mut img = RgbImage::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                img.put(x, y, if m.get(x, y) == 1 { [220, 40, 40] } else { [20, 20, 90] });
            }
        }
        (img, m)
    };
    let (frames, masks): (Vec<_>, Vec<_>) = [1, 4, 8].into_iter().map(frame).unzip();
    let clip = Clip { images: frames, masks, objects: vec![1], frames: vec![0, 1, 2] };
    let model = Model::new(ModelConfig::tiny()).unwrap();
    let losses: Vec<f64> = BankCombo::all()
        .into_iter()
        .map(|c| clip_loss(&model, &mut Graph::new(), &clip, 1.0, false, c).1.total)
        .collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    assert_ne!(losses[0], losses[2]);
}
