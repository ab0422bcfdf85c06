mod common;

use affectkit::dataio::{generate_synthetic, SyntheticSpec, Target, Task};
use affectkit::heads::{
    self, loss_and_grad, predict_proba, predict_va, save_model, train_au_head, train_classifier,
    train_va_head, ClassWeights, Dense, FeatureSelector, HeadError, HeadModel, Loss,
    OutputActivation, TrainConfig,
};
use affectkit::metrics::{mean_ccc, multilabel_f1};
use affectkit::Matrix;
use common::*;
use rand::Rng;

fn planted_va(seed: u64, n: usize) -> (Matrix, Matrix, HeadModel) {
    let mut r = rng(seed);
    let x = random_matrix(&mut r, n, 10, 1.0);
    let mut w = random_matrix(&mut r, 2, 10, 0.3);
    w.as_mut_slice().iter_mut().for_each(|v| *v *= 1.0);
    let planted = HeadModel {
        selector: FeatureSelector::LogitsVa,
        hidden: None,
        output: Dense {
            weight: w,
            bias: vec![0.1, -0.2],
        },
        activation: OutputActivation::Tanh2,
        loss: Loss::Ccc,
        seed: 0,
    };
    let y = predict_va(&planted, &x).unwrap();
    (x, y, planted)
}

#[test]
fn planted_head_predictions_are_exact() {
    let (x, y, planted) = planted_va(1, 50);
    let out = predict_va(&planted, &x).unwrap();
    for r in 0..x.rows() {
        let row = x.row(r);
        for c in 0..2 {
            let z: f64 = planted.output.bias[c]
                + planted
                    .output
                    .weight
                    .row(c)
                    .iter()
                    .zip(row)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            assert!((out.get(r, c) - z.tanh()).abs() < 1e-6);
        }
    }
    assert_eq!(out, y);
}

#[test]
fn va_head_recovers_planted_targets() {
    let (x, y, _) = planted_va(2, 2000);
    let cfg = TrainConfig {
        learning_rate: 0.5,
        epochs: 150,
        batch_size: 256,
        ..TrainConfig::va_default()
    };
    let trained = train_va_head(FeatureSelector::LogitsVa, &x, &y, &cfg, None).unwrap();
    let p = predict_va(&trained.model, &x).unwrap();
    let r = mean_ccc(&p.column(0), &p.column(1), &y.column(0), &y.column(1)).unwrap();
    assert!(r.p_va >= 0.99, "training P_VA {}", r.p_va);
    let losses: Vec<f64> = trained.log.epochs.iter().filter_map(|e| e.loss).collect();
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn va_head_returns_best_validation_epoch() {
    let (x, y, _) = planted_va(3, 600);
    let (vx, vy, _) = planted_va(3, 200);
    let cfg = TrainConfig {
        learning_rate: 0.2,
        epochs: 20,
        batch_size: 128,
        ..TrainConfig::va_default()
    };
    let t = train_va_head(FeatureSelector::LogitsVa, &x, &y, &cfg, Some((&vx, &vy))).unwrap();
    let best = t.log.best_epoch.unwrap();
    let vals: Vec<f64> = t.log.epochs.iter().map(|e| e.validation.unwrap()).collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(vals[best - 1], max);
    let p = predict_va(&t.model, &vx).unwrap();
    let r = mean_ccc(&p.column(0), &p.column(1), &vy.column(0), &vy.column(1)).unwrap();
    assert!((r.p_va - max).abs() < 1e-12);
}

#[test]
fn zero_epochs_rejected() {
    let (x, y, _) = planted_va(4, 10);
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::va_default()
    };
    assert!(matches!(
        train_va_head(FeatureSelector::LogitsVa, &x, &y, &cfg, None),
        Err(HeadError::Config(_))
    ));
    let one = Matrix::from_vec(1, 10, vec![0.0; 10]);
    let one_y = Matrix::from_vec(1, 2, vec![0.0; 2]);
    assert!(matches!(
        train_va_head(
            FeatureSelector::LogitsVa,
            &one,
            &one_y,
            &TrainConfig::va_default(),
            None
        ),
        Err(HeadError::TooFewPairs { .. })
    ));
}

#[test]
fn constant_batches_are_skipped_and_counted() {
    let x = Matrix::from_vec(4, 10, (0..40).map(|v| v as f64 / 40.0).collect());
    let y = Matrix::from_vec(4, 2, vec![0.1, 0.2, 0.1, 0.2, 0.3, 0.4, 0.3, 0.4]);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 1,
        ..TrainConfig::va_default()
    };
    let t = train_va_head(FeatureSelector::LogitsVa, &x, &y, &cfg, None).unwrap();
    assert_eq!(t.log.skipped_batches, 12);
    assert!(t.log.epochs.iter().all(|e| e.loss.is_none()));
    assert_eq!(t.log.warnings.len(), 1);
}

#[test]
fn same_seed_same_parameters() {
    let (x, y, _) = planted_va(5, 300);
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 64,
        seed: 9,
        ..TrainConfig::va_default()
    };
    let a = train_va_head(FeatureSelector::LogitsVa, &x, &y, &cfg, None)
        .unwrap()
        .model;
    let b = train_va_head(FeatureSelector::LogitsVa, &x, &y, &cfg, None)
        .unwrap()
        .model;
    assert_eq!(a, b);

    let classes: Vec<usize> = (0..300).map(|i| i % 8).collect();
    let ccfg = TrainConfig {
        epochs: 3,
        hidden_size: 8,
        seed: 2,
        ..TrainConfig::default()
    };
    let a = train_classifier(FeatureSelector::LogitsVa, &x, &classes, 8, &ccfg, None)
        .unwrap()
        .model;
    let b = train_classifier(FeatureSelector::LogitsVa, &x, &classes, 8, &ccfg, None)
        .unwrap()
        .model;
    assert_eq!(a, b);

    let bits = Matrix::from_vec(
        300,
        12,
        (0..3600).map(|i| ((i * 7) % 3 == 0) as u8).collect(),
    );
    let a = train_au_head(FeatureSelector::LogitsVa, &x, &bits, &ccfg, None)
        .unwrap()
        .model;
    let b = train_au_head(FeatureSelector::LogitsVa, &x, &bits, &ccfg, None)
        .unwrap()
        .model;
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    save_model(&a, dir.path().join("a.json")).unwrap();
    save_model(&b, dir.path().join("b.json")).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("a.json")).unwrap(),
        std::fs::read(dir.path().join("b.json")).unwrap()
    );
}

#[test]
fn separable_two_class_toy_reaches_full_accuracy() {
    let mut r = rng(6);
    let n = 200;
    let mut data = Vec::new();
    let mut classes = Vec::new();
    for i in 0..n {
        let c = i % 2;
        let center = if c == 0 { -1.0 } else { 1.0 };
        for _ in 0..4 {
            data.push(center + r.gen_range(-0.6..0.6));
        }
        classes.push(c);
    }
    let x = Matrix::from_vec(n, 4, data);
    let cfg = TrainConfig {
        epochs: 200,
        hidden_size: 16,
        batch_size: 32,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let t = train_classifier(FeatureSelector::Embeddings, &x, &classes, 8, &cfg, None).unwrap();
    // absent classes get zero weight with a warning
    assert_eq!(t.log.warnings.len(), 6);
    let p = predict_proba(&t.model, &x).unwrap();
    let correct = p
        .iter_rows()
        .zip(&classes)
        .filter(|(row, &c)| heads::argmax(row) == c)
        .count();
    assert_eq!(correct, n);
}

#[test]
fn auto_weights_on_balanced_set_are_ones() {
    let classes: Vec<usize> = (0..80).map(|i| i % 8).collect();
    let (w, warnings) = heads::expr_class_weights(&classes, 8);
    assert_eq!(w, vec![1.0; 8]);
    assert!(warnings.is_empty());
    let mut r = rng(7);
    let x = random_matrix(&mut r, 80, 5, 1.0);
    let base = TrainConfig {
        epochs: 2,
        hidden_size: 4,
        ..TrainConfig::default()
    };
    let auto = train_classifier(FeatureSelector::Embeddings, &x, &classes, 8, &base, None).unwrap();
    let ones = TrainConfig {
        class_weights: ClassWeights::Explicit(vec![1.0; 8]),
        ..base
    };
    let explicit =
        train_classifier(FeatureSelector::Embeddings, &x, &classes, 8, &ones, None).unwrap();
    assert_eq!(auto.model, explicit.model);

    let (w, _) = heads::expr_class_weights(&[0, 0, 0, 1], 3);
    assert_eq!(w[2], 0.0);
    assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-12);
    assert!((w[1] / w[0] - 3.0).abs() < 1e-12);
}

#[test]
fn au_weights_capped_and_defaulted() {
    let mut bits = Matrix::<u8>::zeros(202, 12);
    bits.set(0, 0, 1);
    for r in 0..101 {
        bits.set(r, 1, 1);
    }
    let (w, warnings) = heads::au_pos_weights(&bits);
    assert_eq!(w[0], 100.0);
    assert!((w[1] - 1.0).abs() < 1e-12);
    assert_eq!(w[2], 1.0);
    assert_eq!(warnings.len(), 10);
}

fn au_data(sigma: f64, seed: u64) -> (Matrix, Matrix<u8>) {
    let (ds, labels) = generate_synthetic(SyntheticSpec {
        task: Task::Au,
        n_videos: 10,
        frames_per_video: 300,
        noise_sigma: sigma,
        seed,
    })
    .unwrap();
    let frames: Vec<_> = ds.tracks.iter().flat_map(|t| &t.frames).collect();
    let x = FeatureSelector::Embeddings
        .matrix(frames.iter().copied(), ds.dim)
        .unwrap();
    let mut bits = Vec::new();
    for tl in labels.values() {
        for r in &tl.records {
            let Some(Target::Au(b)) = r.target else {
                unreachable!()
            };
            bits.extend_from_slice(&b);
        }
    }
    (x, Matrix::from_vec(frames.len(), 12, bits))
}

#[test]
fn au_head_fits_planted_functionals() {
    let (x, bits) = au_data(0.0, 21);
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 500,
        batch_size: 32,
        hidden_size: 64,
        ..TrainConfig::default()
    };
    let t = train_au_head(FeatureSelector::Embeddings, &x, &bits, &cfg, None).unwrap();
    let scores = predict_proba(&t.model, &x).unwrap();
    let pred = scores.map(|s| u8::from(s >= 0.5));
    let f1 = multilabel_f1(&pred, &bits).unwrap();
    for (u, f) in f1.per_class_f1.iter().enumerate() {
        let positives = (0..bits.rows()).filter(|&r| bits.get(r, u) == 1).count();
        if positives > 0 {
            assert!(*f >= 0.99, "unit {u}: F1 {f} ({positives} positives)");
        }
    }
}

#[test]
fn all_zero_labels_drive_scores_down() {
    let (x, _) = au_data(0.0, 22);
    let zeros = Matrix::<u8>::zeros(x.rows(), 12);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        epochs: 30,
        batch_size: 64,
        hidden_size: 8,
        ..TrainConfig::default()
    };
    let t = train_au_head(FeatureSelector::Embeddings, &x, &zeros, &cfg, None).unwrap();
    assert_eq!(t.log.warnings.len(), 12);
    let s = predict_proba(&t.model, &x).unwrap();
    let mean = s.as_slice().iter().sum::<f64>() / s.as_slice().len() as f64;
    assert!(mean < 0.05, "mean score {mean}");
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut r = rng(31);
    for activation in [
        OutputActivation::Tanh2,
        OutputActivation::Softmax8,
        OutputActivation::Softmax2,
        OutputActivation::Sigmoid12,
    ] {
        for trial in 0..10 {
            let inputs = r.gen_range(2..6);
            let hidden = (activation != OutputActivation::Tanh2).then(|| r.gen_range(2..6));
            let m = random_model(&mut r, activation, inputs, hidden);
            let b = r.gen_range(3..9);
            let x = random_matrix(&mut r, b, inputs, 1.0);
            let t = random_targets(&mut r, activation, b);
            let l2 = if trial % 2 == 0 { 0.0 } else { 0.01 };
            let err = gradient_check(&m, &x, &t, l2, 1e-5);
            assert!(
                err < 1e-4,
                "{activation:?} trial {trial}: relative error {err}"
            );
        }
    }
}

#[test]
fn small_step_does_not_increase_loss() {
    let mut r = rng(41);
    for activation in [
        OutputActivation::Tanh2,
        OutputActivation::Softmax8,
        OutputActivation::Sigmoid12,
    ] {
        let mut non_increasing = 0;
        for _ in 0..100 {
            let hidden = (activation != OutputActivation::Tanh2).then_some(4);
            let mut m = random_model(&mut r, activation, 5, hidden);
            let x = random_matrix(&mut r, 16, 5, 1.0);
            let t = random_targets(&mut r, activation, 16);
            let (before, g) = loss_and_grad(&m, &x, &t, 0.0).unwrap().unwrap();
            let grads: Vec<Vec<f64>> = g.blocks().iter().map(|(_, v)| v.to_vec()).collect();
            for ((_, p), gv) in m.parameters_mut().into_iter().zip(&grads) {
                for (pv, gg) in p.iter_mut().zip(gv) {
                    *pv -= 1e-4 * gg;
                }
            }
            let (after, _) = loss_and_grad(&m, &x, &t, 0.0).unwrap().unwrap();
            if after <= before {
                non_increasing += 1;
            }
        }
        assert!(non_increasing >= 99, "{activation:?}: {non_increasing}/100");
    }
}
