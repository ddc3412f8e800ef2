use loadcast::metrics::{coverage, mape, quartiles};
use proptest::prelude::*;

fn day() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((0.1..10.0f64, -5.0..5.0f64, 0.0..2.0f64, 0.0..2.0f64), 24)
}

proptest! {
    #[test]
    fn coverage_ignores_hour_order(rows in day(), rotate in 0usize..24, reverse in any::<bool>()) {
        let split = |rows: &[(f64, f64, f64, f64)]| -> (Vec<f64>, Vec<(f64, f64)>) {
            rows.iter().map(|&(a, p, lo, hi)| (a, (p - lo, p + hi))).unzip()
        };
        let (a, iv) = split(&rows);
        let mut shuffled = rows.clone();
        shuffled.rotate_left(rotate);
        if reverse {
            shuffled.reverse();
        }
        let (b, jv) = split(&shuffled);
        prop_assert_eq!(coverage(&a, &iv).unwrap(), coverage(&b, &jv).unwrap());
    }

    #[test]
    fn mape_is_scale_invariant(rows in day(), scale in 1e-3..1e3f64) {
        let a: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let p: Vec<f64> = rows.iter().map(|r| r.0 + r.1).collect();
        let sa: Vec<f64> = a.iter().map(|v| v * scale).collect();
        let sp: Vec<f64> = p.iter().map(|v| v * scale).collect();
        let (m, s) = (mape(&a, &p).unwrap(), mape(&sa, &sp).unwrap());
        prop_assert!((m - s).abs() <= 1e-12 * m.max(1.0));
        prop_assert!(m >= 0.0);
    }

    #[test]
    fn quartiles_are_ordered(values in prop::collection::vec(-1e3..1e3f64, 1..100)) {
        let q = quartiles(&values).unwrap();
        prop_assert!(q.min <= q.q1 && q.q1 <= q.median && q.median <= q.q3 && q.q3 <= q.max);
        prop_assert!(q.min <= q.mean && q.mean <= q.max);
        prop_assert_eq!(q.count, values.len());
    }
}
