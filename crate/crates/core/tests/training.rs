mod support;

use vpn_core::data_io::make_blobs;
use vpn_core::inference::evaluate_clean;
use vpn_core::models::{BaseClassifier, Checkpoint, Generator};
use vpn_core::training::{
    train, train_baseline, train_fixed_base, train_joint, train_random, Mode, TrainConfig,
};

fn quick(mode: Mode, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: 0.01,
        seed: 3,
        ..TrainConfig::with_mode(mode)
    }
}

#[test]
fn baseline_sr_separates_blobs() {
    let split = make_blobs(3, 10, 80, 2.0, 1).unwrap();
    let (base, metrics) = train_baseline(&split, BaseClassifier::sr(10, 3, 0), &quick(Mode::Baseline, 20)).unwrap();
    assert_eq!(metrics.records().len(), 20);
    let acc = evaluate_clean(&base, split.train()).unwrap();
    assert!(acc >= 0.99, "train accuracy {acc}");
    assert_eq!(
        Some(evaluate_clean(&base, split.test()).unwrap()),
        metrics.selected_test_accuracy()
    );
}

#[test]
fn joint_sr_reaches_full_train_accuracy_in_five_epochs() {
    let split = make_blobs(2, 8, 200, 2.0, 4).unwrap();
    let gen = support::small_generator(8, 2, 16, 0.1 * (8f64).sqrt(), 5);
    let (_, gen, metrics) = train_joint(&split, BaseClassifier::sr(8, 2, 6), gen, &quick(Mode::Joint, 5)).unwrap();
    let last = metrics.last().unwrap();
    assert!(last.train_acc >= 0.99, "train accuracy {}", last.train_acc);
    assert!(gen.trained_steps() > 0);
    let first = &metrics.records()[0];
    assert!(first.train_loss < first.batch_losses[0]);
}

fn bytes_of(base: &BaseClassifier, gen: Option<&Generator>) -> Vec<Vec<u8>> {
    let mut out = vec![Checkpoint::Base(base.clone()).to_bytes().unwrap()];
    if let Some(g) = gen {
        out.push(Checkpoint::Generator(g.clone()).to_bytes().unwrap());
    }
    out
}

#[test]
fn every_mode_is_a_pure_function_of_its_inputs() {
    let split = support::blobs(3, 6, 30, 2);
    for mode in [Mode::Baseline, Mode::Random, Mode::Joint, Mode::FixedBase] {
        let run = || {
            let base = BaseClassifier::dnn3(6, 3, 8, 1);
            let gen = mode.uses_generator().then(|| support::small_generator(6, 3, 8, 0.3, 2));
            let cfg = TrainConfig {
                noise_size: 2,
                ..quick(mode, 3)
            };
            train(&split, base, gen, &cfg, None).unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.metrics.same_trajectory(&b.metrics), "{mode}");
        assert_eq!(
            bytes_of(&a.base, a.generator.as_ref()),
            bytes_of(&b.base, b.generator.as_ref()),
            "{mode}"
        );
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let split = support::blobs(3, 6, 30, 2);
    let run = |seed| {
        let cfg = TrainConfig { seed, ..quick(Mode::Random, 2) };
        train_random(&split, BaseClassifier::sr(6, 3, 0), &cfg).unwrap().1
    };
    assert!(!run(1).same_trajectory(&run(2)));
}

#[test]
fn joint_with_vanishing_cap_tracks_baseline_per_batch() {
    let split = support::blobs(3, 8, 40, 7);
    let base = BaseClassifier::dnn3(8, 3, 12, 8);
    let gen = support::small_generator(8, 3, 12, 1e-12, 9);
    let (_, plain) = train_baseline(&split, base.clone(), &quick(Mode::Baseline, 3)).unwrap();
    let (_, _, joint) = train_joint(&split, base, gen, &quick(Mode::Joint, 3)).unwrap();
    for (p, j) in plain.records().iter().zip(joint.records()) {
        assert_eq!(p.batch_losses.len(), j.batch_losses.len());
        for (a, b) in p.batch_losses.iter().zip(&j.batch_losses) {
            assert!((a - b).abs() < 1e-6, "epoch {}: {a} vs {b}", p.epoch);
        }
    }
}

#[test]
fn joint_and_baseline_use_the_same_base_forwards_at_m1() {
    let split = support::blobs(3, 5, 37, 3);
    let n = split.train().len() as u64;
    let (_, plain) = train_baseline(&split, BaseClassifier::sr(5, 3, 0), &quick(Mode::Baseline, 2)).unwrap();
    let gen = support::small_generator(5, 3, 6, 0.2, 0);
    let (_, _, joint) = train_joint(&split, BaseClassifier::sr(5, 3, 0), gen, &quick(Mode::Joint, 2)).unwrap();
    for (p, j) in plain.records().iter().zip(joint.records()) {
        assert_eq!(p.base_forward_rows, n);
        assert_eq!(j.base_forward_rows, n);
        assert_eq!(j.generator_forward_rows, n);
        assert_eq!(p.generator_forward_rows, 0);
    }
    let gen = support::small_generator(5, 3, 6, 0.2, 0);
    let cfg = TrainConfig { noise_size: 4, ..quick(Mode::Joint, 1) };
    let (_, _, m4) = train_joint(&split, BaseClassifier::sr(5, 3, 0), gen, &cfg).unwrap();
    assert_eq!(m4.records()[0].base_forward_rows, 4 * n);
    assert_eq!(m4.records()[0].generator_forward_rows, n);
}

#[test]
fn fixed_base_keeps_base_bits() {
    let split = support::blobs(3, 6, 30, 4);
    let (base, _) = train_baseline(&split, BaseClassifier::sr(6, 3, 1), &quick(Mode::Baseline, 2)).unwrap();
    let before = base.net().checksum();
    let gen = support::small_generator(6, 3, 8, 0.5, 1);
    let (gen, metrics) = train_fixed_base(&split, &base, gen, &quick(Mode::FixedBase, 2)).unwrap();
    assert_eq!(base.net().checksum(), before);
    assert_eq!(metrics.records().len(), 2);
    assert!(gen.trained_steps() > 0);
    assert!(metrics.records().iter().all(|r| r.clean_test_acc.is_some()));
}

#[test]
fn larger_noise_size_lowers_batch_loss_variance() {
    let split = make_blobs(4, 16, 120, 0.6, 11).unwrap();
    let cap = 0.5 * (16f64).sqrt();
    let spread = |m| {
        let gen = support::small_generator(16, 4, 16, cap, 12);
        let cfg = TrainConfig { noise_size: m, ..quick(Mode::Joint, 4) };
        let (_, _, metrics) = train_joint(&split, BaseClassifier::sr(16, 4, 13), gen, &cfg).unwrap();
        metrics.records().iter().map(|r| r.batch_loss_variance()).sum::<f64>() / metrics.records().len() as f64
    };
    let (v1, v4) = (spread(1), spread(4));
    assert!(v4 < v1, "m=4 variance {v4} vs m=1 variance {v1}");
}

#[test]
fn best_validation_epoch_selects_models() {
    let split = support::blobs(3, 6, 30, 5);
    let cfg = quick(Mode::Baseline, 4);
    let run = train(&split, BaseClassifier::sr(6, 3, 0), None, &cfg, None).unwrap();
    let best = run.metrics.best_record().unwrap();
    let max_val = run.metrics.records().iter().map(|r| r.val_acc).fold(0.0, f64::max);
    assert_eq!(best.val_acc, max_val);
    assert_eq!(evaluate_clean(&run.base, split.test()).unwrap(), best.test_acc);
}
