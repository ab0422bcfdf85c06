//! Task heads on top of per-frame features.
//!
//! * valence/arousal: a single dense layer with two `tanh` outputs trained to
//!   maximize mean CCC,
//! * expressions: one hidden ReLU layer and an 8-way softmax trained with
//!   weighted cross-entropy,
//! * action units: one hidden ReLU layer and 12 sigmoids trained with
//!   weighted binary cross-entropy,
//! * Other/non-Other detector: a 2-way softmax used together with
//!   [`adapt_pretrained_logits`] to reuse the backbone's own expression
//!   logits.

mod adapter;
mod io;
mod loss;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{FrameFeatures, LOGIT_COUNT};
use crate::matrix::Matrix;

pub use adapter::{
    adapt_pretrained_logits, gate_other, pretrained_expression_probs, AFFECTNET_TO_CHALLENGE,
};
pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use loss::{loss_and_grad, Gradients, Loss, Targets};
pub use train::{
    au_pos_weights, expr_class_weights, train_au_head, train_classifier, train_other_detector,
    train_va_head, Architecture, ClassWeights, EpochRecord, TrainConfig, TrainLog, Trained,
};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("need at least {needed} training pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {n_outputs} outputs")]
    LabelOutOfRange { label: usize, n_outputs: usize },
    #[error("model is a {found:?} head, expected {expected}")]
    WrongHead {
        expected: &'static str,
        found: OutputActivation,
    },
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("expected {expected} logits, got {found}")]
    LogitCount { expected: usize, found: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which per-frame features feed a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSelector {
    /// 8 logits, then valence and arousal.
    LogitsVa,
    Embeddings,
    /// Embedding, then the 10 `LogitsVa` values.
    EmbeddingsPlusLogits,
}

impl FeatureSelector {
    pub fn input_dim(self, dim: usize) -> usize {
        match self {
            FeatureSelector::LogitsVa => LOGIT_COUNT + 2,
            FeatureSelector::Embeddings => dim,
            FeatureSelector::EmbeddingsPlusLogits => dim + LOGIT_COUNT + 2,
        }
    }

    pub fn extend(self, f: &FrameFeatures, out: &mut Vec<f64>) {
        if self != FeatureSelector::LogitsVa {
            out.extend_from_slice(&f.embedding);
        }
        if self != FeatureSelector::Embeddings {
            out.extend_from_slice(&f.logits);
            out.push(f.valence);
            out.push(f.arousal);
        }
    }

    /// Stacks the selected features of `frames` into an `N x F` matrix.
    pub fn matrix<'a>(
        self,
        frames: impl IntoIterator<Item = &'a FrameFeatures>,
        dim: usize,
    ) -> Result<Matrix, HeadError> {
        let cols = self.input_dim(dim);
        let mut data = Vec::new();
        let mut rows = 0;
        for f in frames {
            if f.embedding.len() != dim {
                return Err(HeadError::DimensionMismatch {
                    expected: dim,
                    found: f.embedding.len(),
                });
            }
            self.extend(f, &mut data);
            rows += 1;
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    /// Valence and arousal.
    Tanh2,
    /// Challenge expression classes.
    Softmax8,
    /// Action units.
    Sigmoid12,
    /// Other/non-Other detector; output 1 is "Other".
    Softmax2,
}

impl OutputActivation {
    pub fn outputs(self) -> usize {
        match self {
            OutputActivation::Tanh2 | OutputActivation::Softmax2 => 2,
            OutputActivation::Softmax8 => 8,
            OutputActivation::Sigmoid12 => 12,
        }
    }

    pub fn softmax_for(n_outputs: usize) -> Option<Self> {
        match n_outputs {
            2 => Some(OutputActivation::Softmax2),
            8 => Some(OutputActivation::Softmax8),
            _ => None,
        }
    }

    /// Applies the activation to each row of pre-activations in place.
    pub fn apply(self, z: &mut Matrix) {
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            match self {
                OutputActivation::Tanh2 => row.iter_mut().for_each(|v| *v = v.tanh()),
                OutputActivation::Sigmoid12 => row.iter_mut().for_each(|v| *v = sigmoid(*v)),
                OutputActivation::Softmax2 | OutputActivation::Softmax8 => softmax_in_place(row),
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Fully connected layer; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.outputs());
        for n in 0..x.rows() {
            let xr = x.row(n);
            let or = out.row_mut(n);
            for (o, v) in or.iter_mut().enumerate() {
                let w = self.weight.row(o);
                *v = self.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Trained parameters of one task head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub selector: FeatureSelector,
    pub hidden: Option<Dense>,
    pub output: Dense,
    pub activation: OutputActivation,
    pub loss: Loss,
    pub seed: u64,
}

impl HeadModel {
    /// Checks the structural invariants of a head.
    pub fn validate(&self) -> Result<(), HeadError> {
        let malformed = |m: String| Err(HeadError::Malformed(m));
        if self.output.outputs() != self.activation.outputs() {
            return malformed(format!(
                "{:?} head needs {} outputs, has {}",
                self.activation,
                self.activation.outputs(),
                self.output.outputs()
            ));
        }
        if self.activation == OutputActivation::Tanh2 && self.hidden.is_some() {
            return malformed("valence/arousal head has no hidden layer".into());
        }
        if let Some(h) = &self.hidden {
            if h.outputs() == 0 || h.outputs() != self.output.inputs() {
                return malformed(format!(
                    "hidden layer width {} does not feed output layer of width {}",
                    h.outputs(),
                    self.output.inputs()
                ));
            }
        }
        for d in self.layers() {
            if d.bias.len() != d.outputs() {
                return malformed("bias length differs from layer width".into());
            }
            if !d.is_finite() {
                return malformed("non-finite parameter".into());
            }
        }
        let loss_ok = matches!(
            (&self.loss, self.activation),
            (Loss::Ccc, OutputActivation::Tanh2)
                | (
                    Loss::WeightedCrossEntropy { .. },
                    OutputActivation::Softmax2 | OutputActivation::Softmax8
                )
                | (Loss::WeightedBce { .. }, OutputActivation::Sigmoid12)
        );
        if !loss_ok {
            return malformed(format!(
                "loss {} does not match {:?}",
                self.loss.name(),
                self.activation
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.output).inputs()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain(std::iter::once(&self.output))
    }

    /// Output pre-activations for an `N x F` input batch.
    pub fn pre_activations(&self, x: &Matrix) -> Result<Matrix, HeadError> {
        if x.cols() != self.input_dim() {
            return Err(HeadError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        Ok(match &self.hidden {
            Some(h) => {
                let mut a = h.forward(x);
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                self.output.forward(&a)
            }
            None => self.output.forward(x),
        })
    }

    /// Activated outputs, whatever the head kind.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix, HeadError> {
        let mut z = self.pre_activations(x)?;
        self.activation.apply(&mut z);
        Ok(z)
    }

    /// Parameter tensors in a fixed order: hidden weight, hidden bias,
    /// output weight, output bias.
    pub fn parameters(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &self.hidden {
            out.push(("hidden.weight", h.weight.as_slice()));
            out.push(("hidden.bias", &h.bias[..]));
        }
        out.push(("output.weight", self.output.weight.as_slice()));
        out.push(("output.bias", &self.output.bias[..]));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out = Vec::with_capacity(4);
        if let Some(h) = &mut self.hidden {
            out.push(("hidden.weight", h.weight.as_mut_slice()));
            out.push(("hidden.bias", &mut h.bias[..]));
        }
        out.push(("output.weight", self.output.weight.as_mut_slice()));
        out.push(("output.bias", &mut self.output.bias[..]));
        out
    }
}

/// Per-frame `(valence, arousal)` from a `tanh` head, as an `N x 2` matrix.
pub fn predict_va(model: &HeadModel, x: &Matrix) -> Result<Matrix, HeadError> {
    if model.activation != OutputActivation::Tanh2 {
        return Err(HeadError::WrongHead {
            expected: "valence/arousal",
            found: model.activation,
        });
    }
    model.forward(x)
}

/// Class probabilities (softmax heads) or per-unit scores (sigmoid head).
pub fn predict_proba(model: &HeadModel, x: &Matrix) -> Result<Matrix, HeadError> {
    if model.activation == OutputActivation::Tanh2 {
        return Err(HeadError::WrongHead {
            expected: "classification",
            found: model.activation,
        });
    }
    model.forward(x)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(activation: OutputActivation, inputs: usize, hidden: Option<usize>) -> HeadModel {
        let out_in = hidden.unwrap_or(inputs);
        HeadModel {
            selector: FeatureSelector::Embeddings,
            hidden: hidden.map(|h| Dense::zeros(inputs, h)),
            output: Dense::zeros(out_in, activation.outputs()),
            activation,
            loss: match activation {
                OutputActivation::Tanh2 => Loss::Ccc,
                OutputActivation::Sigmoid12 => Loss::WeightedBce {
                    pos_weights: vec![1.0; 12],
                },
                _ => Loss::WeightedCrossEntropy {
                    class_weights: vec![1.0; activation.outputs()],
                },
            },
            seed: 0,
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        )
    }

    fn randomize(m: &mut HeadModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, p) in m.parameters_mut() {
            p.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
    }

    #[test]
    fn zero_va_head_predicts_zero() {
        let m = model(OutputActivation::Tanh2, 10, None);
        m.validate().unwrap();
        let out = predict_va(&m, &random(5, 10, 1)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn va_outputs_inside_open_interval() {
        let mut m = model(OutputActivation::Tanh2, 10, None);
        randomize(&mut m, 3);
        let out = predict_va(&m, &random(200, 10, 4)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = model(OutputActivation::Tanh2, 10, None);
        assert!(matches!(
            predict_va(&m, &random(2, 9, 0)),
            Err(HeadError::DimensionMismatch {
                expected: 10,
                found: 9
            })
        ));
        assert!(matches!(
            predict_proba(&m, &random(2, 10, 0)),
            Err(HeadError::WrongHead { .. })
        ));
    }

    #[test]
    fn zero_output_layer_gives_uniform_softmax() {
        let mut m = model(OutputActivation::Softmax8, 6, Some(4));
        randomize(&mut m, 1);
        m.output = Dense::zeros(4, 8);
        let p = predict_proba(&m, &random(3, 6, 2)).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn softmax_rows_and_argmax() {
        let mut m = model(OutputActivation::Softmax8, 6, Some(5));
        randomize(&mut m, 9);
        let x = random(100, 6, 10);
        let p = predict_proba(&m, &x).unwrap();
        let z = m.pre_activations(&x).unwrap();
        for r in 0..p.rows() {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(argmax(p.row(r)), argmax(z.row(r)));
        }
    }

    #[test]
    fn sigmoid_scores_in_open_interval() {
        let mut m = model(OutputActivation::Sigmoid12, 6, Some(5));
        randomize(&mut m, 5);
        let s = predict_proba(&m, &random(100, 6, 6)).unwrap();
        assert!(s.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn validate_catches_bad_structure() {
        let mut m = model(OutputActivation::Tanh2, 10, Some(3));
        assert!(m.validate().is_err());
        m = model(OutputActivation::Sigmoid12, 4, Some(3));
        m.output = Dense::zeros(3, 8);
        assert!(m.validate().is_err());
        m = model(OutputActivation::Softmax8, 4, Some(3));
        m.output.bias[0] = f64::NAN;
        assert!(m.validate().is_err());
        m = model(OutputActivation::Softmax8, 4, Some(3));
        m.loss = Loss::Ccc;
        assert!(m.validate().is_err());
    }

    #[test]
    fn selector_layout() {
        let f = FrameFeatures {
            frame_index: 0,
            embedding: vec![10.0, 11.0],
            logits: [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            valence: 0.5,
            arousal: -0.5,
        };
        let x = FeatureSelector::EmbeddingsPlusLogits
            .matrix([&f], 2)
            .unwrap();
        assert_eq!(
            x.row(0),
            &[10.0, 11.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 0.5, -0.5]
        );
        assert_eq!(FeatureSelector::LogitsVa.input_dim(2), 10);
        assert_eq!(
            FeatureSelector::Embeddings.matrix([&f], 2).unwrap().row(0),
            &[10.0, 11.0]
        );
        assert!(FeatureSelector::Embeddings.matrix([&f], 3).is_err());
    }
}
