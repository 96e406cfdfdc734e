mod support;

use proptest::prelude::*;

use ood_forge_core::dataset::{generate_synthetic, SyntheticSpec};
use ood_forge_core::detectors::{classify_ood, Threshold, Verdict};
use ood_forge_core::eval::{acc_at_tpr, auroc, ScoredDataset};
use ood_forge_core::numerics::norm;
use support::invariants as inv;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(-5i32..5).prop_map(f64::from), -5.0..5.0f64], 1..40)
}

proptest! {
    #[test]
    fn softmax_is_normalized(v in inv::logits()) {
        inv::softmax_normalized(&v)?;
    }

    #[test]
    fn energy_is_shift_equivariant(v in inv::logits(), c in -100.0..100.0f64, t in 0.05..50.0f64) {
        inv::energy_shift(&v, c, t)?;
    }

    #[test]
    fn max_softmax_is_shift_invariant(v in inv::logits(), c in -100.0..100.0f64) {
        inv::maxsoftmax_shift(&v, c)?;
    }

    #[test]
    fn mahalanobis_scores_are_non_positive(seed in any::<u64>()) {
        inv::mahalanobis(seed)?;
    }

    #[test]
    fn openmax_conserves_mass(seed in any::<u64>()) {
        inv::openmax(seed)?;
    }

    #[test]
    fn auroc_swap_and_monotone_transform(id in scores(), ood in scores()) {
        let s = ScoredDataset::from_scores(id.clone(), ood.clone()).unwrap();
        let a = auroc(&s);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + auroc(&s.swapped()) - 1.0).abs() <= f64::EPSILON);
        let f = |v: &f64| (v / 3.0).exp() * 2.0 - 7.0;
        let t = ScoredDataset::from_scores(id.iter().map(f).collect(), ood.iter().map(f).collect()).unwrap();
        prop_assert_eq!(auroc(&t), a);
    }

    #[test]
    fn acc_at_tpr_keeps_requested_tpr(id in scores(), ood in scores(), tpr in 0.0..=1.0f64) {
        let s = ScoredDataset::from_scores(id.clone(), ood).unwrap();
        let acc = acc_at_tpr(&s, tpr, false).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        let th = Threshold::at_tpr(&id, tpr).unwrap();
        let accepted = id.iter().filter(|&&v| classify_ood(v, th) == Verdict::InDomain).count();
        prop_assert!(accepted as f64 >= tpr * id.len() as f64 - 1e-9);
    }

    #[test]
    fn synthetic_data_is_unit_norm_and_balanced(
        classes in 2usize..5,
        extra in 1usize..6,
        per_class in 1usize..20,
        sigma in 0.01..1.0f64,
        shift in 0.0..3.0f64,
        seed in any::<u64>(),
    ) {
        let spec = SyntheticSpec { classes, dim: classes + extra, per_class, noise_sigma: sigma, ood_shift: shift, seed };
        let s = generate_synthetic(&spec).unwrap();
        for ds in [&s.id_train, &s.id_test, &s.ood] {
            for row in ds.features().iter_rows() {
                prop_assert!((norm(row) - 1.0).abs() < 1e-6);
            }
        }
        let mut counts = vec![0usize; classes];
        for &l in s.id_train.labels().unwrap() {
            counts[l] += 1;
        }
        prop_assert!(counts.iter().all(|&n| n == per_class));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cider_keeps_everything_on_the_sphere(seed in any::<u64>()) {
        inv::cider_steps(seed)?;
    }
}
