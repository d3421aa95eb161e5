mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tarspot::metrics::{
    evaluate, greedy_match, match_instances, pairwise_iou, time_detection, Averaging, Counts,
};
use tarspot::{detector::Detection, Detector, MatchConfig, RgbImage};

#[test]
fn hand_computed_fixtures() {
    let cfg = MatchConfig::default();
    for f in metric_fixtures() {
        let pred = labels_from_rows(f.pred);
        let truth = labels_from_rows(f.truth);
        let report = evaluate(&[pred], &[truth], &cfg).unwrap();
        let c = report.counts;
        assert_eq!((c.tp, c.fp, c.fn_), (f.tp, f.fp, f.fn_), "{}", f.name);
        assert_eq!(report.precision, f.precision, "{}", f.name);
        assert_eq!(report.recall, f.recall, "{}", f.name);
        assert!((report.f1 - f.f1).abs() < 1e-12, "{}: {} vs {}", f.name, report.f1, f.f1);
        assert_eq!(report.mean_count_error, f.count_error as f64, "{}", f.name);
    }
}

#[test]
fn iou_matches_pixel_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let a = random_rects(&mut rng, 10, 8, 6);
        let b = random_rects(&mut rng, 10, 8, 6);
        let iou = pairwise_iou(&a, &b).unwrap();
        let oracle = brute_iou(&a, &b);
        for p in 1..=a.len() {
            for t in 1..=b.len() {
                assert_eq!(iou.get(p as u32, t as u32), oracle[p][t]);
            }
        }
    }
}

#[test]
fn greedy_never_beats_and_usually_equals_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut equal = 0;
    let trials = 1000;
    for _ in 0..trials {
        let a = random_rects(&mut rng, 8, 6, 6);
        let b = random_rects(&mut rng, 8, 6, 6);
        let threshold = [0.1, 0.2, 0.3, 0.5][rng.gen_range(0..4)];
        let greedy = greedy_match(&pairwise_iou(&a, &b).unwrap(), threshold).pairs.len();
        let best = exhaustive_max_matches(&brute_iou(&a, &b), threshold);
        assert!(greedy <= best);
        equal += (greedy == best) as usize;
    }
    assert!(equal * 100 >= trials * 95, "greedy optimal in {equal}/{trials}");
}

#[test]
fn swapping_roles_swaps_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let cfg = MatchConfig::default();
    for _ in 0..200 {
        let a = random_rects(&mut rng, 10, 8, 6);
        let b = random_rects(&mut rng, 10, 8, 6);
        let ab = match_instances(&a, &b, &cfg).unwrap().counts();
        let ba = match_instances(&b, &a, &cfg).unwrap().counts();
        assert_eq!(ab.tp, ba.tp);
        assert_eq!(ab.fp, ba.fn_);
        assert_eq!(ab.fn_, ba.fp);
        assert_eq!(ab.tp + ab.fn_, b.len());
        assert_eq!(ab.tp + ab.fp, a.len());
    }
}

#[test]
fn evaluation_ignores_image_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let preds: Vec<_> = (0..12).map(|_| random_rects(&mut rng, 10, 8, 6)).collect();
    let truths: Vec<_> = (0..12).map(|_| random_rects(&mut rng, 10, 8, 6)).collect();
    for averaging in [Averaging::Micro, Averaging::Macro] {
        let cfg = MatchConfig { averaging, ..Default::default() };
        let base = evaluate(&preds, &truths, &cfg).unwrap();
        let mut order: Vec<usize> = (0..12).collect();
        order.shuffle(&mut rng);
        let p: Vec<_> = order.iter().map(|&i| preds[i].clone()).collect();
        let t: Vec<_> = order.iter().map(|&i| truths[i].clone()).collect();
        let shuffled = evaluate(&p, &t, &cfg).unwrap();
        assert_eq!(base.counts, shuffled.counts);
        assert_eq!(base.f1, shuffled.f1);
        assert_eq!(base.mean_count_error, shuffled.mean_count_error);
        assert_eq!(base.mean_area_error, shuffled.mean_area_error);
    }
}

#[test]
fn micro_scores_recomputed_from_pooled_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let preds: Vec<_> = (0..8).map(|_| random_rects(&mut rng, 10, 8, 6)).collect();
    // Every other image is predicted perfectly so the pooled tp is nonzero.
    let truths: Vec<_> = (0..8)
        .map(|i| if i % 2 == 0 { preds[i].clone() } else { random_rects(&mut rng, 10, 8, 6) })
        .collect();
    let report = evaluate(&preds, &truths, &MatchConfig::default()).unwrap();
    let (tp, fp, fn_) = report.per_image.iter().fold((0, 0, 0), |acc, e| {
        (acc.0 + e.counts.tp, acc.1 + e.counts.fp, acc.2 + e.counts.fn_)
    });
    assert_eq!((report.counts.tp, report.counts.fp, report.counts.fn_), (tp, fp, fn_));
    assert!(tp > 0 && fp + fn_ > 0);
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    assert!((report.precision - p).abs() < 1e-12);
    assert!((report.recall - r).abs() < 1e-12);
    assert!((report.f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
}

#[test]
fn self_evaluation_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let sets: Vec<_> = (0..5).map(|_| random_rects(&mut rng, 10, 8, 6)).collect();
    let report = evaluate(&sets, &sets, &MatchConfig::default()).unwrap();
    assert_eq!(report.f1, 1.0);
    assert_eq!(report.mean_count_error, 0.0);
    assert_eq!(report.mean_area_error, 0.0);
}

proptest! {
    #[test]
    fn scores_stay_in_range(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
        let c = Counts { tp, fp, fn_ };
        for v in [c.precision(), c.recall(), c.f1()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if tp > 0 {
            prop_assert!(c.f1() <= c.precision() + c.recall());
        }
    }
}

struct Sleeper;

impl Detector for Sleeper {
    fn name(&self) -> String {
        "sleeper".into()
    }

    fn detect_batch(&self, patches: &[RgbImage]) -> tarspot::Result<Vec<Vec<Detection>>> {
        std::thread::sleep(std::time::Duration::from_millis(100));
        Ok(vec![Vec::new(); patches.len()])
    }
}

#[test]
fn timing_measures_the_detect_call() {
    let img = RgbImage::filled(8, 8, [0, 0, 0]);
    let t = time_detection(&img, &Sleeper).unwrap();
    assert!((0.1..=0.2).contains(&t), "measured {t}");
}
