use kgzsl::data::{synth_generate, Dataset, SynthSpec};
use kgzsl::train_eval::average_precision;
use nalgebra::{DMatrix, DVector};

fn column(d: &Dataset, c: usize) -> Vec<bool> {
    d.samples.iter().map(|s| s.labels[c] == 1.0).collect()
}

fn mean_ap(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> f64 {
    let aps: Vec<f64> = scores.iter().zip(labels).filter_map(|(s, l)| average_precision(s, l)).collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

#[test]
fn noiseless_aux_probabilities_rank_unseen_classes_perfectly() {
    let spec = SynthSpec { aux_noise: 0.0, d_s: 16, ..SynthSpec::default() };
    let b = synth_generate(&spec, 5).unwrap();
    let n_s = spec.n_seen;
    for u in 0..spec.n_unseen {
        let owned: Vec<usize> = (0..spec.n_aux).filter(|&k| b.aux_owner[k] == n_s + u).collect();
        assert!(!owned.is_empty());
        let scores: Vec<f64> = b
            .test
            .samples
            .iter()
            .map(|s| owned.iter().map(|&k| s.p_a.as_ref().unwrap()[k]).fold(0.0, f64::max))
            .collect();
        assert_eq!(average_precision(&scores, &column(&b.test, n_s + u)), Some(1.0), "unseen {u}");
    }
}

/// A least-squares probe from features fits seen classes well but cannot
/// rank unseen ones: they leave no trace in the features.
#[test]
fn features_carry_no_unseen_signal() {
    let spec = SynthSpec { n_test: 1200, d_s: 16, aux_noise: 0.0, ..SynthSpec::default() };
    let b = synth_generate(&spec, 9).unwrap();
    let n_t = spec.n_seen + spec.n_unseen;
    let (fit, held) = b.test.samples.split_at(600);
    let design = |rows: &[kgzsl::data::Sample]| {
        DMatrix::from_fn(rows.len(), spec.d_x + 1, |i, j| if j == spec.d_x { 1.0 } else { rows[i].x_feat[j] })
    };
    let x_fit = design(fit);
    let x_held = design(held);
    let mut seen_scores = Vec::new();
    let mut seen_labels = Vec::new();
    let mut unseen_scores = Vec::new();
    let mut unseen_labels = Vec::new();
    let svd = x_fit.clone().svd(true, true);
    for c in 0..n_t {
        let y = DVector::from_iterator(fit.len(), fit.iter().map(|s| s.labels[c]));
        let w = svd.solve(&y, 1e-10).unwrap();
        let pred = &x_held * w;
        let labels: Vec<bool> = held.iter().map(|s| s.labels[c] == 1.0).collect();
        if c < spec.n_seen {
            seen_scores.push(pred.iter().copied().collect());
            seen_labels.push(labels);
        } else {
            unseen_scores.push(pred.iter().copied().collect());
            unseen_labels.push(labels);
        }
    }
    let seen = mean_ap(&seen_scores, &seen_labels);
    let unseen = mean_ap(&unseen_scores, &unseen_labels);
    let prevalence = spec.label_prob;
    assert!(seen > 0.8, "seen mAP {seen}");
    assert!(unseen < prevalence + 0.1, "unseen mAP {unseen} vs prevalence {prevalence}");
}
