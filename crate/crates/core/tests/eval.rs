use std::collections::BTreeMap;

use dapi2ck::eval::{compare_synthetic_vs_stained, confusion, evaluate_against_annotations, metrics, Aggregation, Roi};
use dapi2ck::{ConfusionCounts, Error, Mask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-pixel count over the pixels where `roi` is set.
fn oracle_counts(pred: &[bool], reference: &[bool], roi: &[bool]) -> [u64; 4] {
    let mut c = [0u64; 4];
    for i in 0..pred.len() {
        if !roi[i] {
            continue;
        }
        let slot = match (pred[i], reference[i]) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        c[slot] += 1;
    }
    c
}

fn oracle_metric(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

fn random_mask(w: usize, h: usize, density: f64, rng: &mut ChaCha8Rng) -> Mask {
    Mask::new(w, h, (0..w * h).map(|_| rng.random_bool(density)).collect())
}

fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
    ConfusionCounts { tp, fp, fn_, tn }
}

fn mask_strategy(w: usize, h: usize) -> impl Strategy<Value = Mask> {
    prop::collection::vec(any::<bool>(), w * h).prop_map(move |d| Mask::new(w, h, d))
}

#[test]
fn confusion_and_metrics_match_a_per_pixel_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..100 {
        // Every tenth pair is empty or full so that denominators vanish.
        let (dp, dr) = match i % 10 {
            0 => (0.0, 0.0),
            1 => (0.0, 0.5),
            2 => (0.5, 0.0),
            3 => (1.0, 1.0),
            _ => (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)),
        };
        let pred = random_mask(32, 32, dp, &mut rng);
        let reference = random_mask(32, 32, dr, &mut rng);
        let [tp, fp, fn_, tn] = oracle_counts(pred.data(), reference.data(), &[true; 1024]);
        let c = confusion(&pred, &reference, None).unwrap();
        assert_eq!(c, counts(tp, fp, fn_, tn));
        let m = metrics(c, "r");
        assert_eq!(m.precision, oracle_metric(tp, tp + fp));
        assert_eq!(m.sensitivity, oracle_metric(tp, tp + fn_));
        assert_eq!(m.f1, oracle_metric(2 * tp, 2 * tp + fp + fn_));
        for (name, v) in [("f1", m.f1), ("precision", m.precision), ("sensitivity", m.sensitivity)] {
            assert_eq!(m.undefined.contains(&name.to_string()), v.is_none());
        }
    }
}

#[test]
fn hand_laid_4x4_example() {
    #[rustfmt::skip]
    let pred = [
        1, 1, 1, 1,
        1, 1, 1, 0,
        1, 1, 0, 0,
        0, 0, 0, 1,
    ];
    #[rustfmt::skip]
    let reference = [
        1, 1, 1, 1,
        1, 1, 0, 0,
        1, 0, 0, 1,
        0, 0, 0, 0,
    ];
    let mk = |b: [u8; 16]| Mask::new(4, 4, b.iter().map(|&v| v == 1).collect());
    let c = confusion(&mk(pred), &mk(reference), None).unwrap();
    assert_eq!(c, counts(7, 3, 1, 5));
}

#[test]
fn metric_examples() {
    let m = metrics(counts(5, 0, 0, 0), "perfect");
    assert_eq!((m.precision, m.sensitivity, m.f1), (Some(1.0), Some(1.0), Some(1.0)));
    let m = metrics(counts(7, 3, 1, 5), "x");
    assert_eq!(m.precision, Some(0.7));
    assert_eq!(m.sensitivity, Some(0.875));
    assert!((m.f1.unwrap() - 14.0 / 18.0).abs() < 1e-15);
    let m = metrics(counts(0, 0, 0, 16), "empty");
    assert_eq!((m.precision, m.sensitivity, m.f1), (None, None, None));
    assert_eq!(m.undefined.len(), 3);
    let json = serde_json::to_value(&m).unwrap();
    assert!(json["f1"].is_null());
}

#[test]
fn identical_all_positive_masks_count_only_true_positives() {
    let m = Mask::full(10, 7);
    assert_eq!(confusion(&m, &m, None).unwrap(), counts(70, 0, 0, 0));
}

#[test]
fn pooled_report_sums_counts() {
    let a = Mask::new(1, 1, vec![true]);
    let b = Mask::new(1, 1, vec![false]);
    let preds = BTreeMap::from([("a".to_string(), a.clone()), ("b".to_string(), a.clone())]);
    let refs = BTreeMap::from([("a".to_string(), a.clone()), ("b".to_string(), b.clone())]);
    // (tp=1) and (fp=1); add a false negative to the second region.
    let mut preds2 = preds.clone();
    let two = |p: [bool; 2]| Mask::new(2, 1, p.to_vec());
    preds2.insert("b".into(), two([true, false]));
    let mut refs2 = refs.clone();
    refs2.insert("b".into(), two([false, true]));
    let e = evaluate_against_annotations(&preds2, &refs2, None).unwrap();
    assert_eq!(e.pooled.counts, counts(1, 1, 1, 0));
    assert_eq!((e.pooled.precision, e.pooled.sensitivity, e.pooled.f1), (Some(0.5), Some(0.5), Some(0.5)));
    assert_eq!(e.pooled.aggregation, Aggregation::Micro);
    assert_eq!(e.per_region.len(), 2);

    let single = evaluate_against_annotations(
        &BTreeMap::from([("a".to_string(), a.clone())]),
        &BTreeMap::from([("a".to_string(), b)]),
        None,
    )
    .unwrap();
    assert_eq!(single.pooled.counts, single.per_region[0].counts);
    assert_eq!(single.pooled.f1, single.per_region[0].f1);
}

#[test]
fn pooled_counts_equal_confusion_over_the_concatenated_regions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sizes = [(12, 9), (32, 5), (7, 21)];
    let (mut preds, mut refs) = (BTreeMap::new(), BTreeMap::new());
    let (mut all_p, mut all_r) = (Vec::new(), Vec::new());
    for (i, &(w, h)) in sizes.iter().enumerate() {
        let p = random_mask(w, h, 0.4, &mut rng);
        let r = random_mask(w, h, 0.6, &mut rng);
        all_p.extend_from_slice(p.data());
        all_r.extend_from_slice(r.data());
        preds.insert(format!("fov{i}"), p);
        refs.insert(format!("fov{i}"), r);
    }
    let e = evaluate_against_annotations(&preds, &refs, None).unwrap();
    let n = all_p.len();
    let union = confusion(&Mask::new(n, 1, all_p), &Mask::new(n, 1, all_r), None).unwrap();
    assert_eq!(e.pooled.counts, union);
}

#[test]
fn mismatched_ids_are_listed() {
    let m = Mask::full(2, 2);
    let preds = BTreeMap::from([("a".to_string(), m.clone()), ("b".to_string(), m.clone())]);
    let refs = BTreeMap::from([("b".to_string(), m.clone()), ("c".to_string(), m)]);
    match evaluate_against_annotations(&preds, &refs, None).unwrap_err() {
        Error::IdMismatch { missing_pred, missing_ref } => {
            assert_eq!(missing_pred, vec!["c".to_string()]);
            assert_eq!(missing_ref, vec!["a".to_string()]);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn dimension_mismatch_is_rejected() {
    assert!(confusion(&Mask::full(3, 3), &Mask::full(3, 4), None).is_err());
    let roi = Roi::Rect { x: 2, y: 0, width: 2, height: 1 };
    assert!(confusion(&Mask::full(3, 3), &Mask::full(3, 3), Some(&roi)).is_err());
}

#[test]
fn extra_synthetic_positives_lower_precision_only() {
    let stained = Mask::rect(16, 16, 0, 0, 8, 16);
    let synthetic = Mask::rect(16, 16, 0, 0, 10, 16);
    let key = |m: Mask| BTreeMap::from([("s".to_string(), m)]);
    let e = compare_synthetic_vs_stained(&key(synthetic), &key(stained.clone())).unwrap();
    assert!(e.pooled.precision.unwrap() < 1.0);
    assert_eq!(e.pooled.sensitivity, Some(1.0));
    assert_eq!(e.reference, "stained");
    let same = compare_synthetic_vs_stained(&key(stained.clone()), &key(stained)).unwrap();
    assert_eq!(same.pooled.f1, Some(1.0));
}

proptest! {
    #[test]
    fn swapping_roles_swaps_fp_and_fn(p in mask_strategy(9, 7), r in mask_strategy(9, 7)) {
        let a = confusion(&p, &r, None).unwrap();
        let b = confusion(&r, &p, None).unwrap();
        prop_assert_eq!((a.tp, a.tn, a.fp, a.fn_), (b.tp, b.tn, b.fn_, b.fp));
        prop_assert_eq!(metrics(a, "a").f1, metrics(b, "b").f1);
    }

    #[test]
    fn f1_is_the_harmonic_mean(tp in 0u64..10_000, fp in 0u64..10_000, fn_ in 0u64..10_000) {
        let m = metrics(counts(tp, fp, fn_, 0), "x");
        if let (Some(f1), Some(p), Some(s)) = (m.f1, m.precision, m.sensitivity) {
            let hm = if p + s == 0.0 { 0.0 } else { 2.0 * p * s / (p + s) };
            prop_assert!((f1 - hm).abs() <= 1e-12);
        }
    }

    #[test]
    fn disjoint_rois_add_up(p in mask_strategy(10, 10), r in mask_strategy(10, 10), split in mask_strategy(10, 10)) {
        let other = Mask::full(10, 10).and_not(&split);
        let a = confusion(&p, &r, Some(&Roi::Mask(split.clone()))).unwrap();
        let b = confusion(&p, &r, Some(&Roi::Mask(other))).unwrap();
        prop_assert_eq!(a + b, confusion(&p, &r, None).unwrap());
        prop_assert_eq!(a.total() as usize, split.count());
    }

    #[test]
    fn adding_a_true_positive_never_lowers_a_metric(p in mask_strategy(8, 8), r in mask_strategy(8, 8), pick in 0usize..64) {
        let candidates: Vec<usize> = (0..64).filter(|&i| r.data()[i] && !p.data()[i]).collect();
        prop_assume!(!candidates.is_empty());
        let i = candidates[pick % candidates.len()];
        let mut better = p.clone();
        better.data_mut()[i] = true;
        let before = metrics(confusion(&p, &r, None).unwrap(), "b");
        let after = metrics(confusion(&better, &r, None).unwrap(), "a");
        for (x, y) in [(before.f1, after.f1), (before.precision, after.precision), (before.sensitivity, after.sensitivity)] {
            if let (Some(x), Some(y)) = (x, y) {
                prop_assert!(y >= x);
            }
        }
        prop_assert!(after.f1.is_some() && after.sensitivity.is_some() && after.precision.is_some());
    }

    #[test]
    fn rect_roi_equals_counting_the_crop(
        p in mask_strategy(16, 12), r in mask_strategy(16, 12), x in 0usize..8, y in 0usize..6,
    ) {
        let (w, h) = (8, 6);
        let roi = Roi::Rect { x, y, width: w, height: h };
        let restricted = confusion(&p, &r, Some(&roi)).unwrap();
        let cropped = confusion(&p.crop(x, y, w, h), &r.crop(x, y, w, h), None).unwrap();
        prop_assert_eq!(restricted, cropped);
    }
}
