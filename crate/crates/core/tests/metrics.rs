//! Metric invariants.

use anchorflow::gmm::EditTask;
use anchorflow::metrics::{cancellation_ratio, energy_distance, identity_error, paired_oracle_point};
use anchorflow::Latent;
use proptest::prelude::*;

fn cloud() -> impl Strategy<Value = Vec<Latent>> {
    prop::collection::vec(prop::array::uniform2(-5.0f64..5.0).prop_map(Latent::from), 1..30)
}

proptest! {
    #[test]
    fn energy_distance_is_symmetric_and_nonnegative(a in cloud(), b in cloud()) {
        let ab = energy_distance(&a, &b).unwrap();
        let ba = energy_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
        prop_assert!(ab >= -1e-12);
    }

    #[test]
    fn energy_distance_is_translation_invariant(a in cloud(), b in cloud(), shift in prop::array::uniform2(-3.0f64..3.0)) {
        let s = Latent::from(shift);
        let a2: Vec<Latent> = a.iter().map(|x| x + &s).collect();
        let b2: Vec<Latent> = b.iter().map(|x| x + &s).collect();
        let d = energy_distance(&a, &b).unwrap();
        prop_assert!((d - energy_distance(&a2, &b2).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn cancellation_ratio_in_unit_interval(u in prop::collection::vec(prop::array::uniform2(-2.0f64..2.0).prop_map(Latent::from), 2..40)) {
        let r = cancellation_ratio(&u).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r));
    }

    #[test]
    fn oracle_point_has_zero_identity_error(x in prop::array::uniform2(-6.0f64..0.0)) {
        let task = EditTask::paired_two_mode();
        let x = Latent::from(x);
        let oracle = paired_oracle_point(&task, &x).unwrap();
        let (err, _) = identity_error(&task, &x, &oracle.point).unwrap();
        prop_assert_eq!(err, 0.0);
        prop_assert!((&oracle.point - &x).max_abs_diff(&Latent::from([6.0, 0.0])) < 1e-12);
    }
}
