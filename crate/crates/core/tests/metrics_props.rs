mod common;

use common::{check_ap_exhaustive, precision_curve_ap};
use kgzsl::train_eval::average_precision;
use proptest::prelude::*;

#[test]
fn every_labelling_of_every_ranking_up_to_twelve() {
    let n = check_ap_exhaustive(12, average_precision).unwrap();
    assert_eq!(n, (1..=12).map(|k| 1usize << k).sum::<usize>());
}

proptest! {
    #[test]
    fn permuted_and_tied_scores(items in prop::collection::vec((0u8..6, any::<bool>()), 1..=12)) {
        let scores: Vec<f64> = items.iter().map(|(s, _)| *s as f64 / 5.0).collect();
        let pos: Vec<bool> = items.iter().map(|(_, p)| *p).collect();
        prop_assert_eq!(average_precision(&scores, &pos), precision_curve_ap(&scores, &pos));
        if let Some(ap) = average_precision(&scores, &pos) {
            prop_assert!(ap > 0.0 && ap <= 1.0);
        }
    }

    #[test]
    fn positives_first_is_perfect(n_pos in 1usize..8, n_neg in 0usize..8) {
        let n = n_pos + n_neg;
        let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let pos: Vec<bool> = (0..n).map(|i| i < n_pos).collect();
        prop_assert_eq!(average_precision(&scores, &pos), Some(1.0));
    }
}
