//! Mini-batch gradient descent for the task heads.

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::loss::{loss_and_grad, Loss, Targets};
use super::{argmax, Dense, FeatureSelector, HeadError, HeadModel, OutputActivation};
use crate::dataio::AU_COUNT;
use crate::matrix::Matrix;
use crate::metrics::{macro_f1, mean_ccc, multilabel_f1};

const AU_WEIGHT_CAP: f64 = 100.0;

/// Per-class (or per-unit) loss weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ClassWeights {
    /// Derived from label frequencies in the training set.
    #[default]
    Auto,
    Explicit(Vec<f64>),
}

impl Serialize for ClassWeights {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ClassWeights::Auto => s.serialize_str("auto"),
            ClassWeights::Explicit(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ClassWeights {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Keyword(String),
            Values(Vec<f64>),
        }
        match Repr::deserialize(d)? {
            Repr::Keyword(k) if k.eq_ignore_ascii_case("auto") => Ok(ClassWeights::Auto),
            Repr::Keyword(k) => Err(serde::de::Error::custom(format!(
                "class_weights must be \"auto\" or a list of reals, got {k:?}"
            ))),
            Repr::Values(v) => Ok(ClassWeights::Explicit(v)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// One hidden ReLU layer of `hidden_size` units.
    #[default]
    Mlp,
    /// No hidden layer; pair with `l2 > 0` for a regularized linear model.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_size: usize,
    pub seed: u64,
    pub class_weights: ClassWeights,
    pub architecture: Architecture,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 512,
            hidden_size: 128,
            seed: 0,
            class_weights: ClassWeights::Auto,
            architecture: Architecture::Mlp,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    /// Defaults for the valence/arousal head, whose CCC objective needs large
    /// batches for stable batch statistics.
    pub fn va_default() -> Self {
        Self {
            batch_size: 4096,
            ..Self::default()
        }
    }

    pub fn validate(&self, has_hidden: bool) -> Result<(), HeadError> {
        let err = |m: &str| Err(HeadError::Config(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return err("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1");
        }
        if has_hidden && self.hidden_size == 0 {
            return err("hidden_size must be at least 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return err("l2 must be non-negative");
        }
        if let ClassWeights::Explicit(w) = &self.class_weights {
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return err("class weights must be finite and non-negative");
            }
        }
        Ok(())
    }

    fn has_hidden(&self) -> bool {
        self.architecture == Architecture::Mlp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch loss; `None` when every batch was skipped.
    pub loss: Option<f64>,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub skipped_batches: usize,
    /// Epoch whose parameters were returned when validating.
    pub best_epoch: Option<usize>,
    pub warnings: Vec<String>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,validation\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{}\n",
                e.epoch,
                fmt(e.loss),
                fmt(e.validation)
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: HeadModel,
    pub log: TrainLog,
}

fn init_dense(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Dense {
    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
    let data = (0..inputs * outputs)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Dense {
        weight: Matrix::from_vec(outputs, inputs, data),
        bias: vec![0.0; outputs],
    }
}

fn build_model(
    rng: &mut ChaCha8Rng,
    selector: FeatureSelector,
    inputs: usize,
    hidden: Option<usize>,
    activation: OutputActivation,
    loss: Loss,
    seed: u64,
) -> HeadModel {
    let hidden = hidden.map(|h| init_dense(rng, inputs, h));
    let out_in = hidden.as_ref().map_or(inputs, Dense::outputs);
    HeadModel {
        selector,
        output: init_dense(rng, out_in, activation.outputs()),
        hidden,
        activation,
        loss,
        seed,
    }
}

type Validator<'a> = Box<dyn Fn(&HeadModel) -> Result<f64, HeadError> + 'a>;

fn fit(
    mut model: HeadModel,
    x: &Matrix,
    targets: &Targets,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    validator: Option<Validator<'_>>,
    mut log: TrainLog,
) -> Result<Trained, HeadError> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut best: Option<(f64, HeadModel)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(chunk);
            let tb = targets.select(chunk);
            match loss_and_grad(&model, &xb, &tb, cfg.l2)? {
                None => log.skipped_batches += 1,
                Some((loss, grads)) => {
                    sum += loss;
                    count += 1;
                    for ((_, p), (_, g)) in model.parameters_mut().into_iter().zip(grads.blocks()) {
                        for (pv, gv) in p.iter_mut().zip(g) {
                            *pv -= cfg.learning_rate * gv;
                        }
                    }
                }
            }
        }
        if model
            .parameters()
            .iter()
            .any(|(_, p)| p.iter().any(|v| !v.is_finite()))
        {
            return Err(HeadError::Malformed(format!(
                "training diverged at epoch {epoch}; lower the learning rate"
            )));
        }
        let validation = validator.as_ref().map(|v| v(&model)).transpose()?;
        if let Some(score) = validation {
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, model.clone()));
                log.best_epoch = Some(epoch);
            }
        }
        log.epochs.push(EpochRecord {
            epoch,
            loss: (count > 0).then(|| sum / count as f64),
            validation,
        });
    }
    if log.skipped_batches > 0 {
        let msg = format!(
            "{} mini-batches skipped because their targets were constant",
            log.skipped_batches
        );
        warn!("{msg}");
        log.warnings.push(msg);
    }
    let model = best.map_or(model, |(_, m)| m);
    Ok(Trained { model, log })
}

fn check_rows(x: &Matrix, n_targets: usize, needed: usize) -> Result<(), HeadError> {
    if x.rows() != n_targets {
        return Err(HeadError::Config(format!(
            "{} input rows but {} targets",
            x.rows(),
            n_targets
        )));
    }
    if x.rows() < needed {
        return Err(HeadError::TooFewPairs {
            needed,
            got: x.rows(),
        });
    }
    Ok(())
}

fn check_selector(selector: FeatureSelector, x: &Matrix) -> Result<(), HeadError> {
    if selector == FeatureSelector::LogitsVa && x.cols() != selector.input_dim(0) {
        return Err(HeadError::DimensionMismatch {
            expected: selector.input_dim(0),
            found: x.cols(),
        });
    }
    Ok(())
}

/// Trains the single-layer `tanh` head on `N x 2` valence/arousal targets
/// by minimizing `1 - mean CCC` per mini-batch. With a validation split the
/// epoch with the best validation mean CCC is returned.
pub fn train_va_head(
    selector: FeatureSelector,
    x: &Matrix,
    y: &Matrix,
    cfg: &TrainConfig,
    validation: Option<(&Matrix, &Matrix)>,
) -> Result<Trained, HeadError> {
    cfg.validate(false)?;
    check_rows(x, y.rows(), 2)?;
    check_selector(selector, x)?;
    if y.cols() != 2 {
        return Err(HeadError::Config(format!(
            "VA targets need 2 columns, got {}",
            y.cols()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = build_model(
        &mut rng,
        selector,
        x.cols(),
        None,
        OutputActivation::Tanh2,
        Loss::Ccc,
        cfg.seed,
    );
    let validator = validation.map(|(vx, vy)| -> Validator<'_> {
        Box::new(move |m: &HeadModel| {
            let p = m.forward(vx)?;
            let r = mean_ccc(&p.column(0), &p.column(1), &vy.column(0), &vy.column(1))
                .map_err(|e| HeadError::Config(format!("validation split: {e}")))?;
            Ok(r.p_va)
        })
    });
    fit(
        model,
        x,
        &Targets::Regression(y.clone()),
        cfg,
        &mut rng,
        validator,
        TrainLog::default(),
    )
}

/// AUTO expression weights: inverse class frequency, normalized to mean 1
/// over the classes present. Absent classes get weight 0.
pub fn expr_class_weights(classes: &[usize], n_outputs: usize) -> (Vec<f64>, Vec<String>) {
    let mut counts = vec![0usize; n_outputs];
    for &c in classes {
        counts[c] += 1;
    }
    let inv: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
        .collect();
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    // equal counts give exactly 1 rather than a rounded quotient
    let balanced = present.windows(2).all(|w| w[0] == w[1]);
    let mean = inv.iter().sum::<f64>() / present.len().max(1) as f64;
    let warnings = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(i, _)| format!("class {i} absent from training data; weight set to 0"))
        .collect();
    let weights = counts
        .iter()
        .zip(&inv)
        .map(|(&c, w)| match c {
            0 => 0.0,
            _ if balanced => 1.0,
            _ => w / mean,
        })
        .collect();
    (weights, warnings)
}

/// AUTO action-unit weights on the positive term: negatives/positives per
/// unit, capped at 100; units without positives get 1.
pub fn au_pos_weights(bits: &Matrix<u8>) -> (Vec<f64>, Vec<String>) {
    let mut warnings = Vec::new();
    let weights = (0..bits.cols())
        .map(|u| {
            let pos = (0..bits.rows()).filter(|&r| bits.get(r, u) == 1).count();
            let neg = bits.rows() - pos;
            if pos == 0 {
                warnings.push(format!("unit {u} has no positive frames; weight set to 1"));
                1.0
            } else {
                (neg as f64 / pos as f64).min(AU_WEIGHT_CAP)
            }
        })
        .collect();
    (weights, warnings)
}

fn resolve_weights(
    cfg: &ClassWeights,
    n: usize,
    auto: impl FnOnce() -> (Vec<f64>, Vec<String>),
) -> Result<(Vec<f64>, Vec<String>), HeadError> {
    match cfg {
        ClassWeights::Auto => {
            let (w, warnings) = auto();
            for m in &warnings {
                warn!("{m}");
            }
            Ok((w, warnings))
        }
        ClassWeights::Explicit(w) if w.len() == n => Ok((w.clone(), Vec::new())),
        ClassWeights::Explicit(w) => Err(HeadError::Config(format!(
            "expected {n} class weights, got {}",
            w.len()
        ))),
    }
}

/// Trains a softmax classifier (`n_outputs` is 8 for expressions, 2 for the
/// Other detector) with weighted cross-entropy.
pub fn train_classifier(
    selector: FeatureSelector,
    x: &Matrix,
    classes: &[usize],
    n_outputs: usize,
    cfg: &TrainConfig,
    validation: Option<(&Matrix, &[usize])>,
) -> Result<Trained, HeadError> {
    cfg.validate(cfg.has_hidden())?;
    check_rows(x, classes.len(), 1)?;
    check_selector(selector, x)?;
    let activation = OutputActivation::softmax_for(n_outputs).ok_or_else(|| {
        HeadError::Config(format!("classifier needs 2 or 8 outputs, got {n_outputs}"))
    })?;
    if let Some(&label) = classes.iter().find(|&&c| c >= n_outputs) {
        return Err(HeadError::LabelOutOfRange { label, n_outputs });
    }
    let (class_weights, warnings) = resolve_weights(&cfg.class_weights, n_outputs, || {
        expr_class_weights(classes, n_outputs)
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hidden = cfg.has_hidden().then_some(cfg.hidden_size);
    let model = build_model(
        &mut rng,
        selector,
        x.cols(),
        hidden,
        activation,
        Loss::WeightedCrossEntropy { class_weights },
        cfg.seed,
    );
    let validator = validation.map(|(vx, vy)| -> Validator<'_> {
        Box::new(move |m: &HeadModel| {
            let p = m.forward(vx)?;
            let pred: Vec<usize> = p.iter_rows().map(argmax).collect();
            macro_f1(&pred, vy, n_outputs)
                .map(|r| r.macro_f1)
                .map_err(|e| HeadError::Config(format!("validation split: {e}")))
        })
    });
    let log = TrainLog {
        warnings,
        ..TrainLog::default()
    };
    fit(
        model,
        x,
        &Targets::Classes(classes.to_vec()),
        cfg,
        &mut rng,
        validator,
        log,
    )
}

/// Trains the Other/non-Other detector: a 2-way softmax whose class 1 is
/// the challenge "Other" class, always with AUTO weights.
pub fn train_other_detector(
    selector: FeatureSelector,
    x: &Matrix,
    classes: &[usize],
    cfg: &TrainConfig,
    validation: Option<(&Matrix, &[usize])>,
) -> Result<Trained, HeadError> {
    let binary = |c: &[usize]| -> Vec<usize> {
        c.iter()
            .map(|&c| usize::from(c == crate::dataio::EXPR_OTHER))
            .collect()
    };
    let cfg = TrainConfig {
        class_weights: ClassWeights::Auto,
        ..cfg.clone()
    };
    let val_bin = validation.map(|(vx, vy)| (vx, binary(vy)));
    train_classifier(
        selector,
        x,
        &binary(classes),
        2,
        &cfg,
        val_bin.as_ref().map(|(vx, vy)| (*vx, &vy[..])),
    )
}

/// Trains the 12-unit sigmoid head with weighted binary cross-entropy.
pub fn train_au_head(
    selector: FeatureSelector,
    x: &Matrix,
    bits: &Matrix<u8>,
    cfg: &TrainConfig,
    validation: Option<(&Matrix, &Matrix<u8>)>,
) -> Result<Trained, HeadError> {
    cfg.validate(cfg.has_hidden())?;
    check_rows(x, bits.rows(), 1)?;
    check_selector(selector, x)?;
    if bits.cols() != AU_COUNT {
        return Err(HeadError::Config(format!(
            "action-unit targets need {AU_COUNT} columns, got {}",
            bits.cols()
        )));
    }
    if let Some(&b) = bits.as_slice().iter().find(|&&b| b > 1) {
        return Err(HeadError::Config(format!(
            "non-binary action-unit label {b}"
        )));
    }
    let (pos_weights, warnings) =
        resolve_weights(&cfg.class_weights, AU_COUNT, || au_pos_weights(bits))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hidden = cfg.has_hidden().then_some(cfg.hidden_size);
    let model = build_model(
        &mut rng,
        selector,
        x.cols(),
        hidden,
        OutputActivation::Sigmoid12,
        Loss::WeightedBce { pos_weights },
        cfg.seed,
    );
    let validator = validation.map(|(vx, vy)| -> Validator<'_> {
        Box::new(move |m: &HeadModel| {
            let p = m.forward(vx)?;
            let pred = p.map(|s| u8::from(s >= 0.5));
            multilabel_f1(&pred, vy)
                .map(|r| r.macro_f1)
                .map_err(|e| HeadError::Config(format!("validation split: {e}")))
        })
    });
    let log = TrainLog {
        warnings,
        ..TrainLog::default()
    };
    fit(
        model,
        x,
        &Targets::Bits(bits.clone()),
        cfg,
        &mut rng,
        validator,
        log,
    )
}
