use proptest::prelude::*;
use vibrancy_core::features::{shannon_diversity, standardize, FeatureTable, N_COVARIATES};
use vibrancy_core::grid::CellId;

proptest! {
    #[test]
    fn diversity_within_bounds(counts in prop::collection::vec(0u64..1000, 0..30)) {
        let h: f64 = shannon_diversity(counts.iter().copied());
        let m = counts.iter().filter(|&&c| c > 0).count();
        prop_assert!(h >= 0.0);
        if m > 0 {
            prop_assert!(h <= (m as f64).log2());
        } else {
            prop_assert_eq!(h, 0.0);
        }
    }

    #[test]
    fn uniform_counts_reach_the_maximum(m in 1usize..64, c in 1u64..500) {
        let h: f64 = shannon_diversity(vec![c; m]);
        prop_assert!((h - (m as f64).log2()).abs() < 1e-12);
    }

    #[test]
    fn moving_mass_off_uniform_lowers_diversity(m in 2usize..40, c in 2u64..500) {
        let mut counts = vec![c; m];
        counts[0] += 1;
        counts[1] -= 1;
        let h: f64 = shannon_diversity(counts);
        prop_assert!(h < (m as f64).log2());
    }

    #[test]
    fn diversity_ignores_label_order(mut counts in prop::collection::vec(1u64..100, 1..20)) {
        let a: f64 = shannon_diversity(counts.clone());
        counts.reverse();
        let b: f64 = shannon_diversity(counts);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_sd(
        rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, N_COVARIATES), 2..30)
    ) {
        let n = rows.len();
        let t = FeatureTable::from_rows(vec![CellId::new(0, 0); n], rows.concat()).unwrap();
        let z = standardize(&t).unwrap();
        for j in 0..N_COVARIATES {
            let col = z.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
            let raw = t.column(j);
            let constant = raw.iter().all(|&v| v == raw[0]);
            if constant {
                prop_assert!(col.iter().all(|&v| v == 0.0));
            } else {
                prop_assert!((var - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn two_equal_labels_give_one_bit() {
    assert_eq!(shannon_diversity::<f64, _>([1, 1]), 1.0);
    assert_eq!(shannon_diversity::<f32, _>([1, 1]), 1.0);
}
