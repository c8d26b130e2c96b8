use lane_core::corpus::{build_pairs, lexicographic_split, synth_corpus, DatasetSplits, SynthConfig};
use lane_core::model::EncoderParams;
use lane_core::schedule::{adversarial_probability, ScheduleConfig, ScheduleMode};
use lane_core::train::{fit, lr_at, TrainConfig};

fn small_splits() -> DatasetSplits {
    let cfg = SynthConfig {
        n_lemmas: 30,
        contexts_per_sense: 6,
        context_length: 6,
        vocab_size: 120,
        ..SynthConfig::default()
    };
    let pairs = build_pairs(&synth_corpus(&cfg).unwrap(), Some(20), 3);
    lexicographic_split(&pairs, 60, 3).unwrap()
}

fn quick(epochs: usize, schedule: ScheduleConfig) -> TrainConfig {
    TrainConfig { epochs, batch_size: 32, warmup_steps: 20, schedule, seed: 5, ..TrainConfig::default() }
}

#[test]
fn fit_is_bitwise_deterministic() {
    let splits = small_splits();
    let cfg = quick(3, ScheduleConfig { warmup_epochs: 1, ..ScheduleConfig::default() });
    let a = fit(&splits, &cfg).unwrap();
    let b = fit(&splits, &cfg).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    let ca = serde_json::to_string(&a.params.to_checkpoint(Some(a.threshold))).unwrap();
    let cb = serde_json::to_string(&b.params.to_checkpoint(Some(b.threshold))).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn single_epoch_single_batch_logs_once() {
    let mut splits = small_splits();
    splits.train.truncate(20);
    let cfg = TrainConfig { batch_size: 64, ..quick(1, ScheduleConfig::none()) };
    let out = fit(&splits, &cfg).unwrap();
    assert_eq!(out.log.epochs.len(), 1);
    assert_eq!(out.log.epochs[0].epoch, 0);
    assert_eq!(out.best_epoch, 0);
}

#[test]
fn selected_epoch_is_first_best_dev_accuracy() {
    let splits = small_splits();
    let out = fit(&splits, &quick(6, ScheduleConfig::none())).unwrap();
    let best = out.log.epochs.iter().map(|r| r.dev_acc).fold(f64::MIN, f64::max);
    let first = out.log.epochs.iter().position(|r| r.dev_acc == best).unwrap();
    assert_eq!(out.best_epoch, first);
}

#[test]
fn logged_probability_follows_schedule() {
    let splits = small_splits();
    let linear = ScheduleConfig { mode: ScheduleMode::Linear, warmup_epochs: 1, ramp_epochs: 2, p_max: 0.3 };
    let lane = fit(&splits, &quick(5, linear)).unwrap();
    let none = fit(&splits, &quick(5, ScheduleConfig::none())).unwrap();
    for (e, r) in lane.log.epochs.iter().enumerate() {
        assert_eq!(r.adv_prob, adversarial_probability(e, &linear));
    }
    assert_eq!(lane.log.epochs.iter().map(|r| r.adv_prob).collect::<Vec<_>>(), vec![0.0, 0.15, 0.3, 0.3, 0.3]);
    assert!(none.log.epochs.iter().all(|r| r.adv_prob == 0.0));
    // Identical until adversarials start.
    assert_eq!(lane.log.epochs[0], none.log.epochs[0]);
}

#[test]
fn all_equal_labels_only_decay() {
    let mut splits = small_splits();
    splits.train.retain(|p| p.label == 1.0);
    splits.train.truncate(40);
    let base = TrainConfig { batch_size: 64, ..quick(1, ScheduleConfig::none()) };
    let init = EncoderParams::init_from_pairs(&splits.train, base.dim, base.seed);

    let frozen = fit(&splits, &TrainConfig { weight_decay: 0.0, ..base.clone() }).unwrap();
    assert_eq!(frozen.log.epochs[0].train_loss, 0.0);
    assert_eq!(frozen.params, init);

    let decayed = fit(&splits, &TrainConfig { weight_decay: 0.5, ..base.clone() }).unwrap();
    assert_eq!(decayed.log.epochs[0].train_loss, 0.0);
    let factor = 1.0 - lr_at(1, &base) * 0.5;
    for (a, b) in decayed.params.embeddings.iter().zip(&init.embeddings) {
        assert!((a - b * factor).abs() <= 1e-15);
    }
    for (a, b) in decayed.params.marker.iter().zip(&init.marker) {
        assert!((a - b * factor).abs() <= 1e-15);
    }
}

#[test]
fn empty_splits_are_rejected() {
    let splits = small_splits();
    let no_dev = DatasetSplits { dev: vec![], ..splits.clone() };
    assert!(fit(&no_dev, &quick(1, ScheduleConfig::none())).is_err());
    let no_train = DatasetSplits { train: vec![], ..splits };
    assert!(fit(&no_train, &quick(1, ScheduleConfig::none())).is_err());
}
