use loadcast::gsa::select_features;
use proptest::prelude::*;

#[test]
fn dominant_feature_is_selected() {
    let scores = [0.834, 0.084, 0.011, 0.002, 0.05, 0.0, 0.03];
    assert_eq!(select_features(&scores, 1).unwrap(), vec![0]);
}

proptest! {
    #[test]
    fn selection_ignores_positive_rescaling(
        scores in prop::collection::vec(0.0..1.0f64, 2..12),
        scale in 1e-3..1e3f64,
        count in 1usize..4,
    ) {
        let count = count.min(scores.len());
        let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
        prop_assert_eq!(select_features(&scores, count).unwrap(), select_features(&scaled, count).unwrap());
    }
}
