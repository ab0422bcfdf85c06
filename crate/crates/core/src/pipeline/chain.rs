//! The post-processing chain shared by evaluate, predict and sweep.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExprMethod, PostProcessConfig, ThresholdMode};
use super::{PipelineError, Result};
use crate::dataio::{DataError, Dataset, LabelSet, Target, Task, AU_COUNT, EXPR_CLASSES};
use crate::heads::{
    argmax, gate_other, pretrained_expression_probs, HeadError, HeadModel, OutputActivation,
};
use crate::matrix::Matrix;
use crate::metrics::{macro_f1, mean_ccc, multilabel_f1, CccResult, F1Report};
use crate::postprocess::{
    apply_thresholds, blend_all, search_thresholds, smooth_all, PostError, PredictionSeq,
    ThresholdVector,
};

/// Metric block of a report; its shape follows the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricBlock {
    Ccc(CccResult),
    F1(F1Report),
}

impl MetricBlock {
    /// `P_VA` for valence/arousal, macro F1 for the classification tasks.
    pub fn headline(&self) -> f64 {
        match self {
            MetricBlock::Ccc(r) => r.p_va,
            MetricBlock::F1(r) => r.macro_f1,
        }
    }
}

/// Discrete per-frame outputs, parallel to [`Outputs::scores`].
#[derive(Debug, Clone, PartialEq)]
pub enum Decisions {
    /// Valence/arousal scores are the final outputs.
    Va,
    Expr(Vec<Vec<usize>>),
    Au(Vec<Matrix<u8>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub task: Task,
    /// Blended and smoothed scores, one sequence per video.
    pub scores: Vec<PredictionSeq>,
    pub decisions: Decisions,
    pub thresholds: Option<Vec<f64>>,
    pub thresholds_tuned_on_eval: bool,
}

/// Valid labeled frames located inside a list of prediction sequences.
#[derive(Debug, Clone)]
pub struct LabelIndex {
    pub task: Task,
    /// `(sequence, row)` per labeled frame, in (video, frame) order.
    pub rows: Vec<(usize, usize)>,
    pub targets: Vec<Target>,
}

impl LabelIndex {
    /// Locates every valid label of `labels` in `seqs`. Labels for videos
    /// that have no sequence are an error; labeled frames without a
    /// prediction are skipped with a warning.
    pub fn build(seqs: &[PredictionSeq], labels: &LabelSet, task: Task) -> Result<Self> {
        let by_id: BTreeMap<&str, usize> = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.video_id.as_str(), i))
            .collect();
        let unknown: Vec<String> = labels
            .keys()
            .filter(|id| !by_id.contains_key(id.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(DataError::UnknownVideos(unknown).into());
        }
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut skipped = 0;
        for (video_id, tl) in labels {
            if tl.task != task {
                return Err(DataError::TaskMismatch {
                    video_id: video_id.clone(),
                    expected: task,
                    found: tl.task,
                }
                .into());
            }
            let s = by_id[video_id.as_str()];
            let mut records: Vec<_> = tl
                .records
                .iter()
                .filter_map(|r| r.target.map(|t| (r.frame_index, t)))
                .collect();
            records.sort_by_key(|r| r.0);
            for (frame, target) in records {
                match seqs[s].frame_indices.binary_search(&frame) {
                    Ok(r) => {
                        rows.push((s, r));
                        targets.push(target);
                    }
                    Err(_) => skipped += 1,
                }
            }
        }
        if skipped > 0 {
            warn!("{skipped} labeled frames have no prediction and were skipped");
        }
        Ok(Self {
            task,
            rows,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn gather(&self, seqs: &[PredictionSeq]) -> Matrix {
        let cols = seqs.first().map_or(0, |s| s.values.cols());
        let data = self
            .rows
            .iter()
            .flat_map(|&(s, r)| seqs[s].values.row(r).iter().copied())
            .collect();
        Matrix::from_vec(self.rows.len(), cols, data)
    }

    fn bits(&self) -> Matrix<u8> {
        let data = self
            .targets
            .iter()
            .flat_map(|t| match t {
                Target::Au(b) => *b,
                _ => unreachable!("index built for the au task"),
            })
            .collect();
        Matrix::from_vec(self.targets.len(), AU_COUNT, data)
    }

    /// Scores the final decisions of `out` against the labels.
    pub fn score(&self, out: &Outputs) -> Result<MetricBlock> {
        if self.is_empty() {
            return Err(PipelineError::Empty("no labeled frames to evaluate".into()));
        }
        Ok(match &out.decisions {
            Decisions::Va => {
                let m = self.gather(&out.scores);
                let (mut tv, mut ta) = (Vec::new(), Vec::new());
                for t in &self.targets {
                    if let Target::Va { valence, arousal } = t {
                        tv.push(*valence);
                        ta.push(*arousal);
                    }
                }
                MetricBlock::Ccc(mean_ccc(&m.column(0), &m.column(1), &tv, &ta)?)
            }
            Decisions::Expr(classes) => {
                let pred: Vec<usize> = self.rows.iter().map(|&(s, r)| classes[s][r]).collect();
                let truth: Vec<usize> = self
                    .targets
                    .iter()
                    .map(|t| match t {
                        Target::Expr(c) => *c,
                        _ => unreachable!("index built for the expr task"),
                    })
                    .collect();
                MetricBlock::F1(macro_f1(&pred, &truth, EXPR_CLASSES.len())?)
            }
            Decisions::Au(bits) => {
                let data = self
                    .rows
                    .iter()
                    .flat_map(|&(s, r)| bits[s].row(r).iter().copied())
                    .collect();
                let pred = Matrix::from_vec(self.rows.len(), AU_COUNT, data);
                MetricBlock::F1(multilabel_f1(&pred, &self.bits())?)
            }
        })
    }
}

/// One or two prediction sources over the same frames, in dataset order.
#[derive(Debug, Clone)]
pub struct MemberSet {
    pub task: Task,
    pub method: ExprMethod,
    pub names: Vec<String>,
    pub members: Vec<Vec<PredictionSeq>>,
}

fn expected_activation(task: Task, method: ExprMethod) -> (OutputActivation, &'static str) {
    match (task, method) {
        (Task::Va, _) => (OutputActivation::Tanh2, "valence/arousal"),
        (Task::Expr, ExprMethod::Classifier) => {
            (OutputActivation::Softmax8, "expression classifier")
        }
        (Task::Expr, ExprMethod::PretrainedLogits) => {
            (OutputActivation::Softmax2, "Other detector")
        }
        (Task::Au, _) => (OutputActivation::Sigmoid12, "action-unit"),
    }
}

/// Runs `model` over every track of `dataset`. Expression detectors are
/// turned into 8-way probabilities using the frame's backbone logits.
pub fn model_member(
    model: &HeadModel,
    dataset: &Dataset,
    task: Task,
    method: ExprMethod,
) -> Result<Vec<PredictionSeq>> {
    let (activation, name) = expected_activation(task, method);
    if model.activation != activation {
        return Err(HeadError::WrongHead {
            expected: name,
            found: model.activation,
        }
        .into());
    }
    let expected = model.selector.input_dim(dataset.dim);
    if model.input_dim() != expected {
        return Err(HeadError::DimensionMismatch {
            expected: model.input_dim(),
            found: expected,
        }
        .into());
    }
    dataset
        .tracks
        .par_iter()
        .map(|track| -> Result<PredictionSeq> {
            let x = model.selector.matrix(&track.frames, dataset.dim)?;
            let mut y = model.forward(&x)?;
            if activation == OutputActivation::Softmax2 {
                let mut data = Vec::with_capacity(y.rows() * 8);
                for (f, row) in track.frames.iter().zip(y.iter_rows()) {
                    data.extend(pretrained_expression_probs(&f.logits, row[1])?);
                }
                y = Matrix::from_vec(track.frames.len(), 8, data);
            }
            Ok(PredictionSeq::new(
                track.video_id.clone(),
                track.frame_indices(),
                y,
            )?)
        })
        .collect()
}

/// Checks that an externally produced member covers exactly the frames of
/// `dataset` and returns its sequences in dataset order.
pub fn align_external(
    dataset: &Dataset,
    mut seqs: Vec<PredictionSeq>,
) -> Result<Vec<PredictionSeq>> {
    let misaligned = |video_id: &str, frame| {
        PipelineError::Post(PostError::Misaligned {
            video_id: video_id.to_string(),
            frame,
        })
    };
    if let Some(extra) = seqs.iter().find(|s| dataset.track(&s.video_id).is_none()) {
        return Err(misaligned(&extra.video_id, None));
    }
    let mut out = Vec::with_capacity(dataset.tracks.len());
    for track in &dataset.tracks {
        let Some(pos) = seqs.iter().position(|s| s.video_id == track.video_id) else {
            return Err(misaligned(&track.video_id, None));
        };
        let seq = seqs.swap_remove(pos);
        let frames = track.frame_indices();
        if seq.frame_indices != frames {
            let n = frames.len().min(seq.len());
            let frame = (0..n)
                .find(|&i| frames[i] != seq.frame_indices[i])
                .map(|i| frames[i].min(seq.frame_indices[i]))
                .or_else(|| frames.get(n).or(seq.frame_indices.get(n)).copied());
            return Err(misaligned(&track.video_id, frame));
        }
        out.push(seq);
    }
    Ok(out)
}

/// Class decisions for (smoothed) expression probabilities.
pub fn discretize_expr(
    scores: &[PredictionSeq],
    method: ExprMethod,
    other_threshold: f64,
) -> Vec<Vec<usize>> {
    scores
        .iter()
        .map(|s| {
            s.values
                .iter_rows()
                .map(|row| match method {
                    ExprMethod::Classifier => argmax(row),
                    ExprMethod::PretrainedLogits => gate_other(row, other_threshold),
                })
                .collect()
        })
        .collect()
}

pub(crate) fn read_thresholds(path: &Path) -> Result<ThresholdVector> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let th: ThresholdVector = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    if th.len() != AU_COUNT {
        return Err(PipelineError::Config(format!(
            "{}: expected {AU_COUNT} thresholds, found {}",
            path.display(),
            th.len()
        )));
    }
    Ok(th)
}

impl MemberSet {
    pub fn new(task: Task, method: ExprMethod) -> Self {
        Self {
            task,
            method,
            names: Vec::new(),
            members: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, seqs: Vec<PredictionSeq>) -> Result<()> {
        if self.members.len() == 2 {
            return Err(PipelineError::Config(
                "at most two blend members are supported".into(),
            ));
        }
        self.names.push(name.into());
        self.members.push(seqs);
        Ok(())
    }

    /// Blended raw scores: the single member, or `w * first + (1 - w) * second`.
    pub fn combined(&self, blend_weight: f64) -> Result<Vec<PredictionSeq>> {
        match &self.members[..] {
            [] => Err(PipelineError::Config("no prediction member given".into())),
            [only] => Ok(only.clone()),
            [a, b] => Ok(blend_all(a, b, blend_weight)?),
            _ => unreachable!("push caps members at two"),
        }
    }

    /// Blend, smooth and discretize. Searched thresholds need `labels`.
    pub fn outputs(
        &self,
        post: &PostProcessConfig,
        labels: Option<&LabelIndex>,
    ) -> Result<Outputs> {
        let scores = smooth_all(&self.combined(post.blend_weight)?, post.k);
        let mut thresholds = None;
        let mut tuned = false;
        let decisions = match self.task {
            Task::Va => Decisions::Va,
            Task::Expr => {
                Decisions::Expr(discretize_expr(&scores, self.method, post.other_threshold))
            }
            Task::Au => {
                let th = match post.thresholds {
                    ThresholdMode::Fixed => ThresholdVector::fixed(AU_COUNT, 0.5)?,
                    ThresholdMode::File => {
                        let path = post.thresholds_file.as_deref().ok_or_else(|| {
                            PipelineError::Config("post.thresholds_file is not set".into())
                        })?;
                        read_thresholds(path)?
                    }
                    ThresholdMode::Search => {
                        let labels = labels.ok_or_else(|| {
                            PipelineError::Config(
                                "threshold search needs labels for the evaluated split".into(),
                            )
                        })?;
                        if labels.is_empty() {
                            return Err(PipelineError::Empty(
                                "no labeled frames to tune thresholds on".into(),
                            ));
                        }
                        tuned = true;
                        search_thresholds(
                            &labels.gather(&scores),
                            &labels.bits(),
                            post.threshold_grid_step,
                        )?
                        .0
                    }
                };
                let bits = scores
                    .iter()
                    .map(|s| apply_thresholds(&s.values, &th))
                    .collect::<std::result::Result<_, _>>()?;
                thresholds = Some(th.as_slice().to_vec());
                Decisions::Au(bits)
            }
        };
        Ok(Outputs {
            task: self.task,
            scores,
            decisions,
            thresholds,
            thresholds_tuned_on_eval: tuned,
        })
    }

    pub fn evaluate(
        &self,
        post: &PostProcessConfig,
        labels: &LabelIndex,
    ) -> Result<(MetricBlock, Outputs)> {
        let out = self.outputs(post, Some(labels))?;
        Ok((labels.score(&out)?, out))
    }
}
