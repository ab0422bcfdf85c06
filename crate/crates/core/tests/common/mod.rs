#![allow(dead_code)]

use affectkit::heads::{
    loss_and_grad, Dense, FeatureSelector, HeadModel, Loss, OutputActivation, Targets,
};
use affectkit::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-scale..scale))
            .collect(),
    )
}

pub fn random_dense(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Dense {
    Dense {
        weight: random_matrix(rng, outputs, inputs, 1.0),
        bias: (0..outputs).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    }
}

/// Random small model of the given head kind.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    activation: OutputActivation,
    inputs: usize,
    hidden: Option<usize>,
) -> HeadModel {
    let h = hidden.map(|h| random_dense(rng, inputs, h));
    let out_in = hidden.unwrap_or(inputs);
    let o = activation.outputs();
    let loss = match activation {
        OutputActivation::Tanh2 => Loss::Ccc,
        OutputActivation::Sigmoid12 => Loss::WeightedBce {
            pos_weights: (0..o).map(|_| rng.gen_range(0.5..5.0)).collect(),
        },
        _ => Loss::WeightedCrossEntropy {
            class_weights: (0..o).map(|_| rng.gen_range(0.2..3.0)).collect(),
        },
    };
    HeadModel {
        selector: FeatureSelector::Embeddings,
        hidden: h,
        output: random_dense(rng, out_in, o),
        activation,
        loss,
        seed: 0,
    }
}

pub fn random_targets(rng: &mut ChaCha8Rng, activation: OutputActivation, rows: usize) -> Targets {
    match activation {
        OutputActivation::Tanh2 => Targets::Regression(random_matrix(rng, rows, 2, 0.9)),
        OutputActivation::Sigmoid12 => Targets::Bits(Matrix::from_vec(
            rows,
            12,
            (0..rows * 12)
                .map(|_| u8::from(rng.gen_bool(0.3)))
                .collect(),
        )),
        a => Targets::Classes((0..rows).map(|_| rng.gen_range(0..a.outputs())).collect()),
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Worst per-tensor relative error between analytic gradients and central
/// finite differences with step `h`.
pub fn gradient_check(model: &HeadModel, x: &Matrix, t: &Targets, l2: f64, h: f64) -> f64 {
    let (_, grads) = loss_and_grad(model, x, t, l2)
        .unwrap()
        .expect("non-degenerate batch");
    let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|(_, g)| g.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (b, analytic) in analytic.iter().enumerate() {
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let mut plus = model.clone();
                plus.parameters_mut()[b].1[i] += h;
                let mut minus = model.clone();
                minus.parameters_mut()[b].1[i] -= h;
                let lp = loss_and_grad(&plus, x, t, l2).unwrap().unwrap().0;
                let lm = loss_and_grad(&minus, x, t, l2).unwrap().unwrap().0;
                (lp - lm) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(analytic).max(norm(&numeric));
        let err = if scale < 1e-8 {
            norm(&diff)
        } else {
            norm(&diff) / scale
        };
        worst = worst.max(err);
    }
    worst
}

/// Naive box filter used as an oracle for the prefix-sum implementation.
pub fn naive_smooth(values: &Matrix, k: usize) -> Matrix {
    let (t_len, cols) = values.shape();
    let mut out = Matrix::zeros(t_len, cols);
    for t in 0..t_len {
        let lo = t.saturating_sub(k);
        let hi = (t + k).min(t_len - 1);
        for c in 0..cols {
            let s: f64 = (lo..=hi).map(|i| values.get(i, c)).sum();
            out.set(t, c, s / (hi - lo + 1) as f64);
        }
    }
    out
}
