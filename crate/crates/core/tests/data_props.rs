mod common;

use common::{check_manifest_text, check_sample_rule, manifest, valid_sample, SAMPLE_RULES};
use kgzsl::data::{validate_sample, Sample};
use kgzsl::graph::GraphMode;
use proptest::prelude::*;

proptest! {
    #[test]
    fn each_sample_rule_is_enforced(c in valid_sample(), which in 0..SAMPLE_RULES, pick in any::<prop::sample::Index>()) {
        check_sample_rule(&c, which, pick)?;
    }

    #[test]
    fn manifest_round_trip_and_key_checks(c in valid_sample(), key in "[a-z]{3,8}") {
        check_manifest_text(&c, &key)?;
    }
}

#[test]
fn unseen_positive_in_train_names_the_class() {
    let m = manifest(GraphMode::Train, 1, 1, 2, 0);
    let s = Sample {
        id: "train_4".into(),
        x_feat: vec![0.0],
        labels: vec![1.0, 0.0, 1.0],
        p_a: None,
    };
    let err = validate_sample(&s, &m).unwrap_err().to_string();
    assert!(err.contains("u1") && err.contains("train_4"), "{err}");
}
