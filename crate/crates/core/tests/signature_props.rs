use chrono::NaiveDate;
use proptest::prelude::*;
use vibrancy_core::grid::{CellId, CityRegion, GridSpec};
use vibrancy_core::ingest::{Direction, ServiceTaxonomy, TrafficRecord};
use vibrancy_core::signatures::{
    build_signatures, relative_risk, relative_risk_column, BuildOptions, DayType, DEFAULT_RISK_CAP,
};

fn positive_column() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1e4, 2..40)
}

proptest! {
    #[test]
    fn risk_is_scale_invariant(col in positive_column(), exp in -6i32..=6) {
        let c = 10f64.powi(exp);
        let scaled: Vec<f64> = col.iter().map(|x| x * c).collect();
        let (a, _) = relative_risk_column(&col, DEFAULT_RISK_CAP);
        let (b, _) = relative_risk_column(&scaled, DEFAULT_RISK_CAP);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn risk_times_mean_of_others_reconstructs(col in positive_column()) {
        let (rr, capped) = relative_risk_column(&col, DEFAULT_RISK_CAP);
        prop_assert_eq!(capped, 0);
        let n = col.len() as f64;
        for i in 0..col.len() {
            let others: f64 = col.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, v)| v).sum();
            let back = rr[i] * others / (n - 1.0);
            prop_assert!((back - col[i]).abs() <= 1e-10 * col[i].abs().max(1.0));
        }
    }

    #[test]
    fn risk_commutes_with_permutation(col in positive_column(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..col.len()).collect();
        let mut s = seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted: Vec<f64> = perm.iter().map(|&i| col[i]).collect();
        let (a, _) = relative_risk_column(&col, DEFAULT_RISK_CAP);
        let (b, _) = relative_risk_column(&permuted, DEFAULT_RISK_CAP);
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((b[j] - a[i]).abs() <= 1e-12 * a[i].max(1.0));
        }
    }

    #[test]
    fn constant_column_is_all_ones(v in 0.0f64..1e6, n in 2usize..50) {
        let (rr, _) = relative_risk_column(&vec![v; n], DEFAULT_RISK_CAP);
        prop_assert!(rr.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn aggregation_ignores_record_order(
        volumes in prop::collection::vec((0u32..4, 0u32..24, 0usize..2, 0.0f64..100.0), 1..60),
        seed in any::<u64>(),
    ) {
        let grid = GridSpec::new("t", (0.0, 0.0), 100.0, 2, 2).unwrap();
        let region = CityRegion::full(grid, None).unwrap();
        let taxonomy = ServiceTaxonomy::from_pairs([("a", "x"), ("b", "y")]).unwrap();
        let day = NaiveDate::from_ymd_opt(2023, 3, 7).unwrap();
        let records: Vec<TrafficRecord> = volumes
            .iter()
            .map(|&(cell, hour, svc, v)| TrafficRecord {
                cell: CellId::new(cell % 2, cell / 2),
                timestamp: day.and_hms_opt(hour, 15, 0).unwrap(),
                service: ["a", "b"][svc].into(),
                direction: if hour % 2 == 0 { Direction::Uplink } else { Direction::Downlink },
                volume: v,
            })
            .collect();
        let mut shuffled = records.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let opts = BuildOptions::default();
        let a = build_signatures::<f64>(&records, &taxonomy, &region, DayType::Weekday, opts).unwrap();
        let b = build_signatures::<f64>(&shuffled, &taxonomy, &region, DayType::Weekday, opts).unwrap();
        prop_assert_eq!(a.values(), b.values());
        let total: f64 = volumes.iter().map(|v| v.3).sum();
        prop_assert!((a.values().iter().sum::<f64>() - total).abs() < 1e-9 * total.max(1.0));
    }
}

#[test]
fn tensor_risk_matches_column_function() {
    let grid = GridSpec::new("t", (0.0, 0.0), 100.0, 3, 1).unwrap();
    let region = CityRegion::full(grid, None).unwrap();
    let taxonomy = ServiceTaxonomy::from_pairs([("a", "x")]).unwrap();
    let day = NaiveDate::from_ymd_opt(2023, 3, 11).unwrap();
    let records: Vec<TrafficRecord> = [2.0, 1.0, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &v)| TrafficRecord {
            cell: CellId::new(i as u32, 0),
            timestamp: day.and_hms_opt(9, 0, 0).unwrap(),
            service: "a".into(),
            direction: Direction::Downlink,
            volume: v,
        })
        .collect();
    let t = build_signatures::<f64>(&records, &taxonomy, &region, DayType::Weekend, BuildOptions::default()).unwrap();
    let rr = relative_risk(&t, DEFAULT_RISK_CAP).unwrap();
    // bin 4 holds the traffic; every other bin is all-zero and maps to 1
    assert_eq!(rr.get(0, 4, 0), 2.0);
    assert!((rr.get(1, 4, 0) - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(rr.get(2, 0, 0), 1.0);
    assert!(rr.quality().capped_columns.is_empty());
}
