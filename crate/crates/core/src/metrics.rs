//! Evaluation measures: concordance correlation coefficient (CCC), mean CCC
//! over valence and arousal, macro-averaged F1 for single-label
//! classification and per-unit F1 for multi-label detection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 values, got {0}")]
    TooShort(usize),
    #[error("class id {id} out of range for {n_classes} classes")]
    ClassOutOfRange { id: usize, n_classes: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("non-binary entry {value} at ({row}, {col})")]
    NonBinary { row: usize, col: usize, value: u8 },
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Concordance correlation coefficient with population (divide-by-n) moments:
///
/// `2 cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))^2)`
///
/// A constant sequence yields 0, unless both sequences are the same constant,
/// which yields 1.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort(x.len()));
    }
    match (is_constant(x), is_constant(y)) {
        (true, true) if x[0] == y[0] => return Ok(1.0),
        (true, _) | (_, true) => return Ok(0.0),
        _ => {}
    }
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    let (vx, vy, cov) = (sxx / n, syy / n, sxy / n);
    let d = mx - my;
    Ok((2.0 * cov / (vx + vy + d * d)).clamp(-1.0, 1.0))
}

/// Pearson correlation; 0 when either sequence is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort(x.len()));
    }
    if is_constant(x) || is_constant(y) {
        return Ok(0.0);
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CccResult {
    pub ccc_v: f64,
    pub ccc_a: f64,
    pub p_va: f64,
}

impl CccResult {
    pub fn from_components(ccc_v: f64, ccc_a: f64) -> Self {
        Self {
            ccc_v,
            ccc_a,
            p_va: (ccc_v + ccc_a) / 2.0,
        }
    }
}

/// Valence and arousal CCC over frames pooled across all videos.
pub fn mean_ccc(
    pred_valence: &[f64],
    pred_arousal: &[f64],
    true_valence: &[f64],
    true_arousal: &[f64],
) -> Result<CccResult, MetricError> {
    Ok(CccResult::from_components(
        ccc(pred_valence, true_valence)?,
        ccc(pred_arousal, true_arousal)?,
    ))
}

/// Per-video CCC averaged over videos. Offered for diagnostics; pooled
/// [`mean_ccc`] is the headline number.
pub fn mean_ccc_per_video<'a>(
    videos: impl IntoIterator<Item = [&'a [f64]; 4]>,
) -> Result<CccResult, MetricError> {
    let (mut v, mut a, mut n) = (0.0, 0.0, 0usize);
    for [pv, pa, tv, ta] in videos {
        let r = mean_ccc(pv, pa, tv, ta)?;
        v += r.ccc_v;
        a += r.ccc_a;
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::TooShort(0));
    }
    Ok(CccResult::from_components(v / n as f64, a / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    /// Fraction of exact matches; absent for multi-label reports.
    pub accuracy: Option<f64>,
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn macro_mean(per_class: &[f64]) -> f64 {
    if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    }
}

/// Macro-averaged F1 over `n_classes` classes. Classes that never occur in
/// either sequence contribute an F1 of 0.
pub fn macro_f1(
    pred: &[usize],
    truth: &[usize],
    n_classes: usize,
) -> Result<F1Report, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    let mut correct = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        for id in [p, t] {
            if id >= n_classes {
                return Err(MetricError::ClassOutOfRange { id, n_classes });
            }
        }
        if p == t {
            tp[p] += 1;
            correct += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..n_classes)
        .map(|c| f1_from_counts(tp[c], fp[c], fn_[c]))
        .collect();
    let accuracy = if pred.is_empty() {
        0.0
    } else {
        correct as f64 / pred.len() as f64
    };
    Ok(F1Report {
        macro_f1: macro_mean(&per_class_f1),
        per_class_f1,
        accuracy: Some(accuracy),
    })
}

/// Binary F1 of the positive class for one unit (column).
pub fn binary_f1(
    pred: impl IntoIterator<Item = bool>,
    truth: impl IntoIterator<Item = bool>,
) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, t) in pred.into_iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

/// Per-unit F1 for a `T x U` multi-label problem, macro-averaged over units.
pub fn multilabel_f1(pred: &Matrix<u8>, truth: &Matrix<u8>) -> Result<F1Report, MetricError> {
    if pred.shape() != truth.shape() {
        return Err(MetricError::ShapeMismatch(pred.shape(), truth.shape()));
    }
    for m in [pred, truth] {
        if let Some(pos) = m.as_slice().iter().position(|&v| v > 1) {
            let cols = m.cols();
            return Err(MetricError::NonBinary {
                row: pos / cols,
                col: pos % cols,
                value: m.as_slice()[pos],
            });
        }
    }
    let per_class_f1: Vec<f64> = (0..pred.cols())
        .map(|u| {
            binary_f1(
                (0..pred.rows()).map(|r| pred.get(r, u) == 1),
                (0..truth.rows()).map(|r| truth.get(r, u) == 1),
            )
        })
        .collect();
    Ok(F1Report {
        macro_f1: macro_mean(&per_class_f1),
        per_class_f1,
        accuracy: None,
    })
}
