mod common;

use common::{small_for, world};
use tblind_core::dataset::training_examples;
use tblind_core::model::{train_base, Target, TrainSettings, TrainingFailure};

#[test]
fn single_fact_is_memorised() {
    let (_, corpus) = world(1, 7);
    let examples: Vec<_> = training_examples(&corpus).into_iter().filter(|e| matches!(e.target, Target::Token(_))).collect();
    let settings = TrainSettings { max_epochs: 200, stop_accuracy: 1.0, target_accuracy: 1.0, ..TrainSettings::default() };
    let out = train_base(&examples, &small_for(&corpus, 1), &settings).unwrap();
    assert_eq!(out.accuracy, 1.0);
}

#[test]
fn training_is_bit_reproducible() {
    let (_, corpus) = world(40, 7);
    let examples = training_examples(&corpus);
    let settings = TrainSettings { max_epochs: 3, target_accuracy: 0.0, ..TrainSettings::default() };
    let cfg = small_for(&corpus, 2);
    let a = train_base(&examples, &cfg, &settings).unwrap();
    let b = train_base(&examples, &cfg, &settings).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.loss_curve, b.loss_curve);
    for (_, data) in a.params.named_tensors() {
        assert!(data.iter().all(|&x| f64::from(x as f32) == x));
    }
}

#[test]
fn unreachable_accuracy_reports_the_curve() {
    let (_, corpus) = world(40, 7);
    let examples = training_examples(&corpus);
    let settings = TrainSettings { max_epochs: 1, target_accuracy: 1.01, ..TrainSettings::default() };
    match train_base(&examples, &small_for(&corpus, 2), &settings) {
        Err(TrainingFailure::DidNotConverge { loss_curve, accuracy, .. }) => {
            assert_eq!(loss_curve.len(), 1);
            assert!(accuracy <= 1.0);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(train_base(&[], &small_for(&corpus, 2), &settings).unwrap_err(), TrainingFailure::EmptyCorpus);
}
