mod common;

use common::*;
use densee::metrics::{f_from, wf_mismatch, BinaryScore};
use densee::phantoms::{analytic_wavefront, PhantomSampler};
use densee::radon::FULL_ANGLES;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn shearlet_translation_covariance(img in image(SHEARLET_SIDE), di in -40isize..40, dj in -40isize..40) {
        translation_covariance(&img, di, dj)?;
    }

    #[test]
    fn shearlet_energy_is_preserved(img in image(SHEARLET_SIDE)) {
        let e = system32().transform(&img).unwrap().norm_sq();
        let n = img.norm_sq();
        prop_assert!((e - n).abs() / n < 1e-8);
    }

    #[test]
    fn shearlet_is_linear(a in image(SHEARLET_SIDE), b in image(SHEARLET_SIDE), s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let sys = system32();
        let lhs = sys.transform(&a.combine(s, &b, t).unwrap()).unwrap();
        let (ta, tb) = (sys.transform(&a).unwrap(), sys.transform(&b).unwrap());
        for ((l, x), y) in lhs.data().iter().zip(ta.data()).zip(tb.data()) {
            prop_assert!((l - (s * x + t * y)).abs() < 1e-10);
        }
    }

    #[test]
    fn phantom_wavefront_ignores_shape_order(seed in 0u64..1000, k in 0usize..8) {
        let spec = PhantomSampler::new(64).sample(seed).unwrap();
        let mut permuted = spec.clone();
        let len = permuted.shapes.len();
        permuted.shapes.rotate_left(k % len);
        permuted.shapes.swap(0, len - 1);
        prop_assert_eq!(analytic_wavefront(&spec), analytic_wavefront(&permuted));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_map_is_a_union_morphism(
        x1 in sparse_set(CANON_SIDE, CANON_SIDE, 60),
        x2 in sparse_set(CANON_SIDE, CANON_SIDE, 60),
    ) {
        canonical_union(&x1, &x2)?;
    }

    #[test]
    fn inverse_canonical_map_is_a_union_morphism(
        y1 in sparse_set(CANON_SIDE, FULL_ANGLES, 40),
        y2 in sparse_set(CANON_SIDE, FULL_ANGLES, 40),
    ) {
        inverse_canonical_union(&y1, &y2)?;
    }

    #[test]
    fn hausdorff_distance_is_a_metric(a in bin_set(), b in bin_set(), c in bin_set()) {
        hausdorff_axioms(&a, &b, &c)?;
    }

    #[test]
    fn corner_rule_matches_truth_table(bins in bin_set()) {
        corner_rule(&bins)?;
    }

    #[test]
    fn tensor_files_round_trip(t in tensor()) {
        tensor_round_trip(&t)?;
    }

    #[test]
    fn f_score_is_bounded(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 0u64..50) {
        let s = BinaryScore::new(tp, fp, fn_, tn);
        let (p, r, f) = (s.precision(), s.recall(), s.f_score());
        prop_assert!(f <= 1.0 + 1e-12);
        prop_assert!(f <= 2.0 * p + 1e-12 && f <= 2.0 * r + 1e-12);
        prop_assert!((f - f_from(p, r)).abs() < 1e-12);
    }

    #[test]
    fn mismatch_is_symmetric_and_separating(
        a in sparse_set(8, 8, 30),
        b in sparse_set(8, 8, 30),
    ) {
        let ab = wf_mismatch(&a, &b).unwrap();
        prop_assert_eq!(ab, wf_mismatch(&b, &a).unwrap());
        prop_assert_eq!(ab == 0, a == b);
        prop_assert_eq!(wf_mismatch(&a, &a).unwrap(), 0);
    }
}
