mod common;

use common::map_oracle::brute_force_map;
use common::rng;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use renet_events::BBox;
use renet_model::detector::Detection;
use renet_model::metrics::{average_precision, frame_map, iou, FrameEval};

fn random_box(r: &mut ChaCha8Rng) -> BBox {
    let (x, y) = (r.gen_range(0..20) as f32, r.gen_range(0..20) as f32);
    let (w, h) = (r.gen_range(2..12) as f32, r.gen_range(2..12) as f32);
    BBox::new(x, y, x + w, y + h)
}

/// Frames with at most five boxes each, detections jittered from ground truth or random.
fn random_instance(r: &mut ChaCha8Rng, classes: u8) -> Vec<FrameEval> {
    (0..r.gen_range(1..=4))
        .map(|_| {
            let n_gt = r.gen_range(0..=3);
            let ground_truth: Vec<(u8, BBox)> = (0..n_gt).map(|_| (r.gen_range(0..classes), random_box(r))).collect();
            let n_det = r.gen_range(0..=5 - n_gt.min(2));
            let detections = (0..n_det)
                .map(|_| {
                    let bbox = if !ground_truth.is_empty() && r.gen_bool(0.6) {
                        let g = ground_truth[r.gen_range(0..ground_truth.len())].1;
                        let (dx, dy) = (r.gen_range(-2..=2) as f32, r.gen_range(-2..=2) as f32);
                        g.translate(dx, dy)
                    } else {
                        random_box(r)
                    };
                    // Coarse scores so ties across frames occur.
                    Detection { class_id: r.gen_range(0..classes), bbox, score: r.gen_range(1..6) as f32 / 6.0 }
                })
                .collect();
            FrameEval { detections, ground_truth }
        })
        .collect()
}

#[test]
fn iou_cases() {
    let a = BBox::new(0.0, 0.0, 2.0, 2.0);
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &BBox::new(3.0, 3.0, 4.0, 4.0)), 0.0);
    assert_eq!(iou(&a, &BBox::new(2.0, 0.0, 4.0, 2.0)), 0.0);
    assert!((iou(&a, &BBox::new(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-15);
}

#[test]
fn exact_detections_score_one_and_none_score_zero() {
    let mut r = rng(1);
    for _ in 0..20 {
        let gt: Vec<(u8, BBox)> = (0..4).map(|i| (i % 2, random_box(&mut r))).collect();
        let dets = gt.iter().map(|&(c, b)| Detection { class_id: c, bbox: b, score: r.gen_range(0.1..1.0) }).collect();
        let frames = [FrameEval { detections: dets, ground_truth: gt.clone() }];
        assert_eq!(frame_map(&frames, 0.5).map, 1.0);
        let empty = [FrameEval { detections: vec![], ground_truth: gt }];
        let rep = frame_map(&empty, 0.5);
        assert_eq!(rep.map, 0.0);
        assert!(rep.per_class.values().all(|c| c.n_det == 0));
    }
    assert_eq!(frame_map(&[], 0.5).map, 0.0);
}

#[test]
fn three_detections_two_ground_truths() {
    // d0 overlaps both ground truths, d1 only the first. Best matching at rank 2 is two.
    let g0 = BBox::new(0.0, 0.0, 10.0, 10.0);
    let g1 = BBox::new(4.0, 0.0, 14.0, 10.0);
    let dets = vec![
        Detection { class_id: 0, bbox: BBox::new(2.0, 0.0, 12.0, 10.0), score: 0.9 },
        Detection { class_id: 0, bbox: BBox::new(0.0, 0.0, 9.0, 10.0), score: 0.8 },
        Detection { class_id: 0, bbox: BBox::new(40.0, 40.0, 50.0, 50.0), score: 0.7 },
    ];
    let frames = [FrameEval { detections: dets, ground_truth: vec![(0, g0), (0, g1)] }];
    let rep = frame_map(&frames, 0.5);
    assert_eq!(rep.per_class[&0].true_positives, 2);
    assert_eq!(rep.map, 1.0);
    assert_eq!(rep.map, brute_force_map(&frames, 0.5));
}

#[test]
fn matches_exhaustive_matcher() {
    let mut r = rng(2);
    for case in 0..200 {
        let frames = random_instance(&mut r, 1 + (case % 3) as u8);
        for tau in [0.5, 0.2] {
            let fast = frame_map(&frames, tau).map;
            let slow = brute_force_map(&frames, tau);
            assert!((fast - slow).abs() <= 1e-12, "case {case} tau {tau}: {fast} vs {slow}");
        }
    }
}

#[test]
fn ap_examples() {
    assert_eq!(average_precision(&[1, 2, 3], 3), 1.0);
    assert_eq!(average_precision(&[0, 0], 2), 0.0);
    // FP then TP: precision 1/2 at recall 1
    assert_eq!(average_precision(&[0, 1], 1), 0.5);
    assert_eq!(average_precision(&[1], 0), 0.0);
}

proptest! {
    #[test]
    fn ap_properties(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let frames = random_instance(&mut r, 1);
        let base = frame_map(&frames, 0.5);
        prop_assert!((0.0..=1.0).contains(&base.map));
        prop_assert!(frame_map(&frames, 0.2).map >= base.map - 1e-12);

        let gt_count: usize = frames.iter().map(|f| f.ground_truth.len()).sum();
        if gt_count > 0 {
            // A lowest-ranked false positive never helps.
            let mut worse = frames.clone();
            let far = BBox::new(200.0, 200.0, 210.0, 210.0);
            worse[0].detections.push(Detection { class_id: 0, bbox: far, score: 0.0 });
            prop_assert!(frame_map(&worse, 0.5).map <= base.map + 1e-12);

            // A new object found by a new top-ranked detection never hurts. (A top-ranked hit on
            // an object that is already found can, since it displaces a later true positive.)
            let mut better = frames.clone();
            let fresh = BBox::new(300.0, 300.0, 310.0, 310.0);
            better[0].ground_truth.push((0, fresh));
            better[0].detections.push(Detection { class_id: 0, bbox: fresh, score: 2.0 });
            prop_assert!(frame_map(&better, 0.5).map >= base.map - 1e-12);
        }
    }
}
