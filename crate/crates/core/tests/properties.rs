mod common;

use common::*;
use divsynth::data::{count_compositions, NoiseVector, SemanticLayout};
use divsynth::evaluation::{accuracy, iou};
use divsynth::losses;
use divsynth::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn layout_pair(max_classes: u8) -> impl Strategy<Value = (SemanticLayout, SemanticLayout)> {
    (1..=max_classes, 1usize..9, 1usize..9).prop_flat_map(|(c, w, h)| {
        let px = proptest::collection::vec(0..c, w * h);
        (px.clone(), px).prop_map(move |(a, b)| {
            (
                SemanticLayout::new(w, h, c as usize, a).unwrap(),
                SemanticLayout::new(w, h, c as usize, b).unwrap(),
            )
        })
    })
}

#[test]
fn metrics_equal_counting_on_a_thousand_pairs() {
    assert_eq!(metric_mismatches(3, 1000), 0);
}

#[test]
fn compositions_equal_enumeration() {
    assert_eq!(composition_mismatches(4, 100), 0);
    assert_eq!(count_compositions(&[2, 2, 2]).unwrap(), 8);
}

#[test]
fn partition_identity_holds() {
    assert!(partition_error(5, 500) <= 1e-6);
}

#[test]
fn unconditional_diversity_is_bilinear() {
    assert!(bilinearity_error(6, 500) <= 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn accuracy_matches_counting((pred, truth) in layout_pair(6)) {
        prop_assert_eq!(accuracy(&pred, &truth).unwrap(), brute_accuracy(&pred, &truth));
    }

    #[test]
    fn iou_matches_counting((pred, truth) in layout_pair(6)) {
        let rep = iou(&pred, &truth).unwrap();
        let (mean, per) = brute_iou(&pred, &truth);
        prop_assert_eq!(rep.mean, mean);
        prop_assert_eq!(rep.per_class, per);
    }

    #[test]
    fn per_class_iou_is_symmetric((a, b) in layout_pair(5)) {
        prop_assert_eq!(iou(&a, &b).unwrap().per_class, iou(&b, &a).unwrap().per_class);
    }

    #[test]
    fn accuracy_is_symmetric_and_bounded((a, b) in layout_pair(5)) {
        let x = accuracy(&a, &b).unwrap();
        prop_assert_eq!(x, accuracy(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(accuracy(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn compositions_are_a_product(ks in proptest::collection::vec(1u64..8, 1..6)) {
        prop_assert_eq!(count_compositions(&ks).unwrap(), enumerate_compositions(&ks));
        let k = *ks.iter().min().unwrap() as u128;
        prop_assert!(count_compositions(&ks).unwrap() >= k.pow(ks.len() as u32));
    }

    #[test]
    fn partition_identity(seed in any::<u64>()) {
        prop_assert!(partition_error(seed, 4) <= 1e-6);
    }

    #[test]
    fn bilinearity(seed in any::<u64>()) {
        prop_assert!(bilinearity_error(seed, 4) <= 1e-6);
    }

    #[test]
    fn diversity_vanishes_at_zero_noise(seed in any::<u64>(), classes in 1usize..5) {
        let mut r = rng(seed);
        let l = random_layout(&mut r, 5, 4, classes);
        let (g0, gn) = (uniform(&mut r, &[3, 4, 5], 0.0, 1.0), uniform(&mut r, &[3, 4, 5], 0.0, 1.0));
        let n = NoiseVector::zeros(classes);
        let mut t = Tape::new();
        let (a, b) = (t.constant(g0), t.constant(gn));
        let h = losses::diversity_hinged(&mut t, a, b, &l, &n, &vec![0.3; classes]).unwrap();
        let s = losses::diversity_segmentwise(&mut t, a, b, &l, &n).unwrap();
        let u = losses::diversity_unconditional(&mut t, a, b, &n).unwrap();
        prop_assert_eq!(t.value(h).item(), 0.0);
        prop_assert_eq!(t.value(s).item().abs(), 0.0);
        prop_assert_eq!(t.value(u).item().abs(), 0.0);
    }

    #[test]
    fn hinge_is_zero_beyond_the_bound(seed in any::<u64>(), extra in 0.0f64..0.3) {
        let mut r = rng(seed);
        let l = full_layout(&mut r, 5, 4, 3);
        let g0 = uniform(&mut r, &[3, 4, 5], 0.0, 0.3);
        let gn = Tensor::from_vec(&[3, 4, 5], g0.data().iter().map(|v| v + 0.3 + extra).collect()).unwrap();
        let n = random_noise(&mut r, 3);
        let mut t = Tape::new();
        let (a, b) = (t.constant(g0), t.constant(gn));
        let h = losses::diversity_hinged(&mut t, a, b, &l, &n, &[0.3; 3]).unwrap();
        prop_assert_eq!(t.value(h).item(), 0.0);
    }

    #[test]
    fn hinge_is_bounded_by_weighted_lambda(seed in any::<u64>()) {
        let mut r = rng(seed);
        let l = full_layout(&mut r, 5, 4, 3);
        let (g0, gn) = (uniform(&mut r, &[3, 4, 5], 0.0, 1.0), uniform(&mut r, &[3, 4, 5], 0.0, 1.0));
        let n = random_noise(&mut r, 3);
        let mut t = Tape::new();
        let (a, b) = (t.constant(g0), t.constant(gn));
        let hv = losses::diversity_hinged(&mut t, a, b, &l, &n, &[0.3; 3]).unwrap();
        let h = t.value(hv).item();
        let bound: f64 = n.values().iter().map(|v| 0.3 * v.abs() as f64).sum();
        prop_assert!(h >= 0.0 && h <= bound + 1e-12);
    }
}
