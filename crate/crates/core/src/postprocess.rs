//! Decision-level post-processing: box-filter smoothing over time, per-unit
//! threshold search, and two-member blending.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::metrics::binary_f1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PostError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("sequences are misaligned: video {video_id:?}, frame {frame:?}")]
    Misaligned {
        video_id: String,
        frame: Option<usize>,
    },
    #[error("blend weight {0} outside [0, 1]")]
    BlendWeight(f64),
    #[error("threshold grid step {0} outside (0, 0.5]")]
    GridStep(f64),
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error("{0} frame indices for {1} rows")]
    RowCount(usize, usize),
}

/// Per-frame model outputs for one video: `values` is `T x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSeq {
    pub video_id: String,
    pub frame_indices: Vec<usize>,
    pub values: Matrix,
}

impl PredictionSeq {
    pub fn new(
        video_id: impl Into<String>,
        frame_indices: Vec<usize>,
        values: Matrix,
    ) -> Result<Self, PostError> {
        if frame_indices.len() != values.rows() {
            return Err(PostError::RowCount(frame_indices.len(), values.rows()));
        }
        Ok(Self {
            video_id: video_id.into(),
            frame_indices,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }
}

/// Box filter of width `2k + 1`: each output row is the column-wise mean of
/// rows `max(0, t-k) ..= min(T-1, t+k)`. The window shrinks at the
/// boundaries and `k = 0` returns the input unchanged.
pub fn smooth(seq: &PredictionSeq, k: usize) -> PredictionSeq {
    PredictionSeq {
        video_id: seq.video_id.clone(),
        frame_indices: seq.frame_indices.clone(),
        values: smooth_matrix(&seq.values, k),
    }
}

pub fn smooth_matrix(values: &Matrix, k: usize) -> Matrix {
    let (t_len, cols) = values.shape();
    if k == 0 || t_len <= 1 {
        return values.clone();
    }
    let mut out = Matrix::zeros(t_len, cols);
    let mut prefix = vec![0.0; t_len + 1];
    for c in 0..cols {
        // prefix sums of deviations from the first value keep constant
        // columns exact and limit cancellation on long sequences
        let base = values.get(0, c);
        for t in 0..t_len {
            prefix[t + 1] = prefix[t] + (values.get(t, c) - base);
        }
        for t in 0..t_len {
            let lo = t.saturating_sub(k);
            let hi = (t + k).min(t_len - 1);
            let n = (hi - lo + 1) as f64;
            out.set(t, c, base + (prefix[hi + 1] - prefix[lo]) / n);
        }
    }
    out
}

/// Smooths every video independently.
pub fn smooth_all(seqs: &[PredictionSeq], k: usize) -> Vec<PredictionSeq> {
    seqs.par_iter().map(|s| smooth(s, k)).collect()
}

/// Per-unit decision thresholds, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdVector(Vec<f64>);

impl ThresholdVector {
    pub fn new(values: Vec<f64>) -> Result<Self, PostError> {
        if let Some(&bad) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(PostError::Threshold(bad));
        }
        Ok(Self(values))
    }

    pub fn fixed(units: usize, value: f64) -> Result<Self, PostError> {
        Self::new(vec![value; units])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ThresholdVector {
    type Error = PostError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ThresholdVector> for Vec<f64> {
    fn from(t: ThresholdVector) -> Self {
        t.0
    }
}

/// Candidate thresholds `step, 2*step, ...` up to `1 - step`.
pub fn threshold_grid(grid_step: f64) -> Result<Vec<f64>, PostError> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(PostError::GridStep(grid_step));
    }
    let upper = 1.0 - grid_step + 1e-9;
    Ok((1..)
        // snap to 12 decimals so 12 * 0.05 reads back as 0.6
        .map(|i| (i as f64 * grid_step * 1e12).round() / 1e12)
        .take_while(|&t| t <= upper)
        .collect())
}

/// Picks, for each unit independently, the grid threshold with the highest
/// binary F1; ties go to the smallest threshold. Returns the thresholds and
/// the F1 each achieves.
pub fn search_thresholds(
    scores: &Matrix,
    labels: &Matrix<u8>,
    grid_step: f64,
) -> Result<(ThresholdVector, Vec<f64>), PostError> {
    if scores.shape() != labels.shape() {
        return Err(PostError::ShapeMismatch(scores.shape(), labels.shape()));
    }
    let grid = threshold_grid(grid_step)?;
    let (rows, units) = scores.shape();
    let (mut best_th, mut best_f1) = (Vec::with_capacity(units), Vec::with_capacity(units));
    for u in 0..units {
        let mut best = (grid[0], f64::NEG_INFINITY);
        for &th in &grid {
            let f1 = binary_f1(
                (0..rows).map(|r| scores.get(r, u) >= th),
                (0..rows).map(|r| labels.get(r, u) == 1),
            );
            if f1 > best.1 {
                best = (th, f1);
            }
        }
        best_th.push(best.0);
        best_f1.push(best.1);
    }
    Ok((ThresholdVector::new(best_th)?, best_f1))
}

/// Bit is 1 iff `score >= threshold` for that unit.
pub fn apply_thresholds(scores: &Matrix, th: &ThresholdVector) -> Result<Matrix<u8>, PostError> {
    if scores.cols() != th.len() {
        return Err(PostError::ShapeMismatch(
            scores.shape(),
            (scores.rows(), th.len()),
        ));
    }
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for r in 0..scores.rows() {
        for (c, &t) in th.as_slice().iter().enumerate() {
            out.set(r, c, u8::from(scores.get(r, c) >= t));
        }
    }
    Ok(out)
}

/// `w * a + (1 - w) * b`, elementwise.
pub fn blend(a: &PredictionSeq, b: &PredictionSeq, w: f64) -> Result<PredictionSeq, PostError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(PostError::BlendWeight(w));
    }
    if a.video_id != b.video_id {
        return Err(PostError::Misaligned {
            video_id: format!("{} / {}", a.video_id, b.video_id),
            frame: None,
        });
    }
    if a.frame_indices != b.frame_indices {
        let frame = a
            .frame_indices
            .iter()
            .zip(&b.frame_indices)
            .find(|(x, y)| x != y)
            .map(|(x, _)| *x)
            .or_else(|| {
                let n = a.len().min(b.len());
                a.frame_indices.get(n).or(b.frame_indices.get(n)).copied()
            });
        return Err(PostError::Misaligned {
            video_id: a.video_id.clone(),
            frame,
        });
    }
    if a.values.shape() != b.values.shape() {
        return Err(PostError::ShapeMismatch(a.values.shape(), b.values.shape()));
    }
    let data = a
        .values
        .as_slice()
        .iter()
        .zip(b.values.as_slice())
        // equal members pass through untouched for any weight
        .map(|(&x, &y)| if x == y { x } else { w * x + (1.0 - w) * y })
        .collect();
    Ok(PredictionSeq {
        video_id: a.video_id.clone(),
        frame_indices: a.frame_indices.clone(),
        values: Matrix::from_vec(a.values.rows(), a.values.cols(), data),
    })
}

pub fn blend_all(
    a: &[PredictionSeq],
    b: &[PredictionSeq],
    w: f64,
) -> Result<Vec<PredictionSeq>, PostError> {
    if a.len() != b.len() {
        let missing = a
            .iter()
            .map(|s| &s.video_id)
            .find(|id| !b.iter().any(|s| &s.video_id == *id))
            .or_else(|| {
                b.iter()
                    .map(|s| &s.video_id)
                    .find(|id| !a.iter().any(|s| &s.video_id == *id))
            })
            .cloned()
            .unwrap_or_default();
        return Err(PostError::Misaligned {
            video_id: missing,
            frame: None,
        });
    }
    a.iter().zip(b).map(|(x, y)| blend(x, y, w)).collect()
}

/// Re-evaluates `eval_fn` on the sequences smoothed with each `k`, returning
/// points in input order.
pub fn sweep_kernel<E, F>(
    eval_fn: F,
    seqs: &[PredictionSeq],
    k_values: &[usize],
) -> Result<Vec<(usize, f64)>, E>
where
    F: Fn(&[PredictionSeq]) -> Result<f64, E> + Sync,
    E: Send,
{
    k_values
        .par_iter()
        .map(|&k| eval_fn(&smooth_all(seqs, k)).map(|m| (k, m)))
        .collect()
}
