//! Training objectives and their analytic gradients.

use serde::{Deserialize, Serialize};

use super::{sigmoid, softmax_in_place, Dense, HeadError, HeadModel};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Loss {
    /// `1 - (CCC_V + CCC_A) / 2` over the batch, on `tanh` outputs.
    Ccc,
    /// `sum_n w[y_n] * (-log p_n[y_n]) / B` on softmax outputs.
    WeightedCrossEntropy { class_weights: Vec<f64> },
    /// Binary cross-entropy per unit with the positive term scaled by
    /// `pos_weights[u]`, summed over units and averaged over the batch.
    WeightedBce { pos_weights: Vec<f64> },
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::Ccc => "ccc",
            Loss::WeightedCrossEntropy { .. } => "weighted_cross_entropy",
            Loss::WeightedBce { .. } => "weighted_bce",
        }
    }

    /// Loss and its gradient with respect to the output pre-activations.
    /// `None` means the batch carries no usable signal (constant targets in
    /// both CCC dimensions) and should be skipped.
    pub fn evaluate(
        &self,
        z: &Matrix,
        targets: &Targets,
    ) -> Result<Option<(f64, Matrix)>, HeadError> {
        let b = z.rows();
        if b == 0 {
            return Ok(None);
        }
        match (self, targets) {
            (Loss::Ccc, Targets::Regression(y)) => {
                if y.shape() != z.shape() {
                    return Err(HeadError::DimensionMismatch {
                        expected: z.cols(),
                        found: y.cols(),
                    });
                }
                Ok(ccc_loss(z, y))
            }
            (Loss::WeightedCrossEntropy { class_weights }, Targets::Classes(y)) => {
                let mut p = z.clone();
                let mut loss = 0.0;
                for (n, &c) in y.iter().enumerate() {
                    if c >= z.cols() {
                        return Err(HeadError::LabelOutOfRange {
                            label: c,
                            n_outputs: z.cols(),
                        });
                    }
                    let row = p.row_mut(n);
                    let zr = z.row(n);
                    let max = zr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + zr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    let w = class_weights[c];
                    loss += w * (lse - zr[c]);
                    softmax_in_place(row);
                    row[c] -= 1.0;
                    row.iter_mut().for_each(|g| *g *= w / b as f64);
                }
                Ok(Some((loss / b as f64, p)))
            }
            (Loss::WeightedBce { pos_weights }, Targets::Bits(y)) => {
                if y.shape() != z.shape() {
                    return Err(HeadError::DimensionMismatch {
                        expected: z.cols(),
                        found: y.cols(),
                    });
                }
                let mut grad = Matrix::zeros(b, z.cols());
                let mut loss = 0.0;
                for n in 0..b {
                    for (u, &w) in pos_weights.iter().enumerate() {
                        let x = z.get(n, u);
                        let t = f64::from(y.get(n, u));
                        // -log sigmoid(x) = softplus(-x), -log(1 - sigmoid(x)) = softplus(x)
                        loss += w * t * softplus(-x) + (1.0 - t) * softplus(x);
                        let s = sigmoid(x);
                        grad.set(n, u, (s * (w * t + 1.0 - t) - w * t) / b as f64);
                    }
                }
                Ok(Some((loss / b as f64, grad)))
            }
            _ => Err(HeadError::Config(format!(
                "loss {} cannot be used with these targets",
                self.name()
            ))),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn ccc_loss(z: &Matrix, y: &Matrix) -> Option<(f64, Matrix)> {
    let (b, cols) = z.shape();
    let constant = |c: usize| (1..b).all(|n| y.get(n, c) == y.get(0, c));
    if (0..cols).all(constant) {
        return None;
    }
    let bf = b as f64;
    let x = z.map(f64::tanh);
    let mut grad = Matrix::zeros(b, cols);
    let mut ccc_sum = 0.0;
    for c in 0..cols {
        let mx = (0..b).map(|n| x.get(n, c)).sum::<f64>() / bf;
        let my = (0..b).map(|n| y.get(n, c)).sum::<f64>() / bf;
        let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
        for n in 0..b {
            let (dx, dy) = (x.get(n, c) - mx, y.get(n, c) - my);
            vx += dx * dx;
            vy += dy * dy;
            cov += dx * dy;
        }
        let (vx, vy, cov) = (vx / bf, vy / bf, cov / bf);
        let gap = mx - my;
        let den = vx + vy + gap * gap;
        if den == 0.0 {
            // predictions and targets are the same constant
            ccc_sum += 1.0;
            continue;
        }
        let num = 2.0 * cov;
        ccc_sum += num / den;
        for n in 0..b {
            let xn = x.get(n, c);
            let d_num = 2.0 * (y.get(n, c) - my) / bf;
            let d_den = 2.0 * (xn - mx) / bf + 2.0 * gap / bf;
            let d_ccc = (d_num * den - num * d_den) / (den * den);
            // L = 1 - mean_c ccc_c; chain through tanh
            grad.set(n, c, -d_ccc / cols as f64 * (1.0 - xn * xn));
        }
    }
    Some((1.0 - ccc_sum / cols as f64, grad))
}

/// Training targets for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Matrix),
    Classes(Vec<usize>),
    Bits(Matrix<u8>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(m) => m.rows(),
            Targets::Classes(v) => v.len(),
            Targets::Bits(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Regression(m) => Targets::Regression(m.select_rows(idx)),
            Targets::Classes(v) => Targets::Classes(idx.iter().map(|&i| v[i]).collect()),
            Targets::Bits(m) => Targets::Bits(m.select_rows(idx)),
        }
    }
}

/// Gradients laid out like [`HeadModel::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Option<Dense>,
    pub output: Dense,
}

impl Gradients {
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            out.push(("hidden.weight", h.weight.as_slice()));
            out.push(("hidden.bias", &h.bias[..]));
        }
        out.push(("output.weight", self.output.weight.as_slice()));
        out.push(("output.bias", &self.output.bias[..]));
        out
    }
}

fn dense_backward(layer: &Dense, input: &Matrix, g_out: &Matrix, l2: f64) -> Dense {
    let mut grad = Dense::zeros(layer.inputs(), layer.outputs());
    for n in 0..input.rows() {
        let xr = input.row(n);
        for o in 0..layer.outputs() {
            let g = g_out.get(n, o);
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            for (w, &x) in grad.weight.row_mut(o).iter_mut().zip(xr) {
                *w += g * x;
            }
        }
    }
    if l2 > 0.0 {
        for (g, w) in grad
            .weight
            .as_mut_slice()
            .iter_mut()
            .zip(layer.weight.as_slice())
        {
            *g += l2 * w;
        }
    }
    grad
}

/// Mini-batch objective and gradients for every parameter tensor.
///
/// `l2` adds `0.5 * l2 * |W|^2` over weight matrices (biases excluded).
pub fn loss_and_grad(
    model: &HeadModel,
    x: &Matrix,
    targets: &Targets,
    l2: f64,
) -> Result<Option<(f64, Gradients)>, HeadError> {
    if x.cols() != model.input_dim() {
        return Err(HeadError::DimensionMismatch {
            expected: model.input_dim(),
            found: x.cols(),
        });
    }
    let hidden_act = model.hidden.as_ref().map(|h| {
        let mut a = h.forward(x);
        a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        a
    });
    let out_in = hidden_act.as_ref().unwrap_or(x);
    let z = model.output.forward(out_in);
    let Some((mut loss, g_z)) = model.loss.evaluate(&z, targets)? else {
        return Ok(None);
    };
    if l2 > 0.0 {
        let sq: f64 = model
            .layers()
            .flat_map(|d| d.weight.as_slice())
            .map(|w| w * w)
            .sum();
        loss += 0.5 * l2 * sq;
    }
    let g_output = dense_backward(&model.output, out_in, &g_z, l2);
    let g_hidden = match (&model.hidden, &hidden_act) {
        (Some(h), Some(act)) => {
            // back through the output layer and the ReLU
            let mut g_act = Matrix::zeros(act.rows(), act.cols());
            for n in 0..act.rows() {
                for o in 0..model.output.outputs() {
                    let g = g_z.get(n, o);
                    if g == 0.0 {
                        continue;
                    }
                    for (ga, &w) in g_act.row_mut(n).iter_mut().zip(model.output.weight.row(o)) {
                        *ga += g * w;
                    }
                }
                for (ga, &a) in g_act.row_mut(n).iter_mut().zip(act.row(n)) {
                    if a <= 0.0 {
                        *ga = 0.0;
                    }
                }
            }
            Some(dense_backward(h, x, &g_act, l2))
        }
        _ => None,
    };
    Ok(Some((
        loss,
        Gradients {
            hidden: g_hidden,
            output: g_output,
        },
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ccc_loss_zero_for_perfect_fit() {
        let y = Matrix::from_vec(3, 2, vec![0.1, -0.2, 0.5, 0.3, -0.4, 0.0]);
        let z = y.map(f64::atanh);
        let (loss, grad) = ccc_loss(&z, &y).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.as_slice().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn constant_targets_skip_batch() {
        let y = Matrix::from_vec(3, 2, vec![0.2, 0.1, 0.2, 0.1, 0.2, 0.1]);
        let z = Matrix::from_vec(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(Loss::Ccc
            .evaluate(&z, &Targets::Regression(y))
            .unwrap()
            .is_none());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let z = Matrix::zeros(2, 4);
        let loss = Loss::WeightedCrossEntropy {
            class_weights: vec![1.0, 2.0, 1.0, 1.0],
        };
        let (l, _) = loss
            .evaluate(&z, &Targets::Classes(vec![0, 1]))
            .unwrap()
            .unwrap();
        assert!((l - 1.5 * 4f64.ln()).abs() < 1e-12);
        assert!(loss.evaluate(&z, &Targets::Classes(vec![0, 4])).is_err());
    }

    #[test]
    fn bce_at_zero_logit() {
        let z = Matrix::zeros(1, 2);
        let loss = Loss::WeightedBce {
            pos_weights: vec![3.0, 1.0],
        };
        let y = Matrix::from_vec(1, 2, vec![1u8, 0]);
        let (l, g) = loss.evaluate(&z, &Targets::Bits(y)).unwrap().unwrap();
        assert!((l - 4.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g.get(0, 0) - (0.5 * 3.0 - 3.0)).abs() < 1e-12);
        assert!((g.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_targets_rejected() {
        let z = Matrix::zeros(2, 2);
        assert!(Loss::Ccc
            .evaluate(&z, &Targets::Classes(vec![0, 1]))
            .is_err());
    }
}
