use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use super::chain::{align_external, model_member, LabelIndex, MemberSet, MetricBlock, Outputs};
use super::config::{ExprMethod, PipelineConfig, ThresholdMode};
use super::predictions::{read_predictions, save_predictions, PredictionFile, PredictionHeader};
use super::{PipelineError, Result};
use crate::dataio::{
    align, generate_synthetic, load_features, load_labels, write_features, write_labels, Aligned,
    Dataset, LabelSet, SyntheticSpec, Target, Task, AU_COUNT,
};
use crate::heads::{
    load_model, save_model, train_au_head, train_classifier, train_other_detector, train_va_head,
    FeatureSelector, Targets, TrainLog, Trained,
};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub param: String,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub metrics: MetricBlock,
    /// Labeled frames that were scored.
    pub frames: usize,
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    /// True when the action-unit thresholds were searched on the very frames
    /// being scored, which makes the metric optimistic.
    pub thresholds_tuned_on_eval: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curves: Vec<Curve>,
    pub config: PipelineConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model_path: PathBuf,
    pub log_path: PathBuf,
    pub log: TrainLog,
    /// Aligned training frames.
    pub frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K,
    BlendWeight,
    AuThresholdGrid,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::K => "k",
            SweepParam::BlendWeight => "blend_weight",
            SweepParam::AuThresholdGrid => "au_threshold_grid",
        }
    }
}

impl FromStr for SweepParam {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepParam::K),
            "blend_weight" => Ok(SweepParam::BlendWeight),
            "au_threshold_grid" => Ok(SweepParam::AuThresholdGrid),
            other => Err(PipelineError::Config(format!(
                "unknown sweep parameter {other:?} (expected k, blend_weight or au_threshold_grid)"
            ))),
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| PipelineError::io(path, e))
}

fn load_split(features: &Path, labels: &Path, task: Task) -> Result<(Dataset, LabelSet)> {
    Ok((load_features(features)?, load_labels(labels, task)?))
}

fn design(
    aligned: &Aligned<'_>,
    selector: FeatureSelector,
    dim: usize,
) -> Result<(Matrix, Targets)> {
    let x = selector.matrix(aligned.frames.iter().map(|f| f.features), dim)?;
    let n = aligned.len();
    let targets = match aligned.task {
        Task::Va => {
            let data = aligned
                .frames
                .iter()
                .flat_map(|f| match f.target {
                    Target::Va { valence, arousal } => [valence, arousal],
                    _ => unreachable!("aligned for va"),
                })
                .collect();
            Targets::Regression(Matrix::from_vec(n, 2, data))
        }
        Task::Expr => Targets::Classes(
            aligned
                .frames
                .iter()
                .map(|f| match f.target {
                    Target::Expr(c) => c,
                    _ => unreachable!("aligned for expr"),
                })
                .collect(),
        ),
        Task::Au => {
            let data = aligned
                .frames
                .iter()
                .flat_map(|f| match f.target {
                    Target::Au(b) => b,
                    _ => unreachable!("aligned for au"),
                })
                .collect();
            Targets::Bits(Matrix::from_vec(n, AU_COUNT, data))
        }
    };
    Ok((x, targets))
}

/// Trains the configured head and writes the model file plus a per-epoch
/// CSV log next to it (`<model stem>_log.csv`).
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let task = cfg.task;
    let selector = cfg.selector();
    let (dataset, labels) = load_split(cfg.features_path()?, cfg.labels_path()?, task)?;
    let aligned = align(&dataset, &labels, task)?;
    if aligned.is_empty() {
        return Err(PipelineError::Empty(
            "no labeled frames align with the features".into(),
        ));
    }
    let (x, targets) = design(&aligned, selector, dataset.dim)?;

    let validation = match (&cfg.paths.validation_features, &cfg.paths.validation_labels) {
        (Some(f), Some(l)) => Some(load_split(f, l, task)?),
        (None, None) => None,
        _ => {
            return Err(PipelineError::Config(
                "validation_features and validation_labels must be given together".into(),
            ))
        }
    };
    let val_design = match &validation {
        Some((vd, vl)) => {
            let va = align(vd, vl, task)?;
            if va.is_empty() {
                return Err(PipelineError::Empty(
                    "no validation frames align with the features".into(),
                ));
            }
            Some(design(&va, selector, vd.dim)?)
        }
        None => None,
    };
    let val = val_design.as_ref();

    let tc = cfg.train_config();
    info!("training {task} head on {} frames", aligned.len());
    let trained: Trained = match (&targets, cfg.expr_method) {
        (Targets::Regression(y), _) => train_va_head(
            selector,
            &x,
            y,
            &tc,
            val.map(|(vx, vt)| match vt {
                Targets::Regression(vy) => (vx, vy),
                _ => unreachable!(),
            }),
        )?,
        (Targets::Classes(c), method) => {
            let v = val.map(|(vx, vt)| match vt {
                Targets::Classes(vc) => (vx, &vc[..]),
                _ => unreachable!(),
            });
            match method {
                ExprMethod::Classifier => train_classifier(selector, &x, c, 8, &tc, v)?,
                ExprMethod::PretrainedLogits => train_other_detector(selector, &x, c, &tc, v)?,
            }
        }
        (Targets::Bits(b), _) => train_au_head(
            selector,
            &x,
            b,
            &tc,
            val.map(|(vx, vt)| match vt {
                Targets::Bits(vb) => (vx, vb),
                _ => unreachable!(),
            }),
        )?,
    };
    for w in &trained.log.warnings {
        log::warn!("{w}");
    }

    let model_path = cfg.model_path();
    if let Some(parent) = model_path.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    save_model(&trained.model, &model_path)?;
    let stem = model_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    let log_path = model_path.with_file_name(format!("{stem}_log.csv"));
    write_file(&log_path, trained.log.to_csv().as_bytes())?;
    Ok(TrainOutcome {
        model_path,
        log_path,
        log: trained.log,
        frames: aligned.len(),
    })
}

fn build_members(cfg: &PipelineConfig, dataset: &Dataset, models: &[PathBuf]) -> Result<MemberSet> {
    let mut set = MemberSet::new(cfg.task, cfg.expr_method);
    if models.len() + usize::from(cfg.post.external_member.is_some()) > 2 {
        return Err(PipelineError::Config(
            "at most two blend members are supported".into(),
        ));
    }
    for path in models {
        let model = load_model(path)?;
        set.push(
            path.display().to_string(),
            model_member(&model, dataset, cfg.task, cfg.expr_method)?,
        )?;
    }
    if let Some(path) = &cfg.post.external_member {
        let file = read_predictions(path)?;
        if file.header.task != cfg.task {
            return Err(PipelineError::Config(format!(
                "{}: external member predicts {}, config task is {}",
                path.display(),
                file.header.task,
                cfg.task
            )));
        }
        set.push(
            path.display().to_string(),
            align_external(dataset, file.outputs.scores)?,
        )?;
    }
    if set.members.is_empty() {
        return Err(PipelineError::Config(
            "no model or external member given".into(),
        ));
    }
    Ok(set)
}

fn write_side_outputs(cfg: &PipelineConfig, out: &Outputs) -> Result<()> {
    if let (Some(th), ThresholdMode::Search) = (&out.thresholds, cfg.post.thresholds) {
        let path = cfg
            .paths
            .output
            .join(format!("{}_thresholds.json", cfg.task));
        let mut s = serde_json::to_string_pretty(th).expect("thresholds serialize");
        s.push('\n');
        write_file(&path, s.as_bytes())?;
    }
    Ok(())
}

/// Runs models (and an optional external member) through blend, smoothing
/// and discretization, then scores the result. Writes
/// `<output>/<task>_report.json`, plus the searched thresholds when the
/// threshold mode is `search`.
pub fn cmd_evaluate(cfg: &PipelineConfig, models: &[PathBuf]) -> Result<EvalReport> {
    cfg.validate()?;
    let (dataset, labels) = load_split(cfg.features_path()?, cfg.labels_path()?, cfg.task)?;
    let members = build_members(cfg, &dataset, models)?;
    let index = LabelIndex::build(&members.members[0], &labels, cfg.task)?;
    let (metrics, out) = members.evaluate(&cfg.post, &index)?;

    let mut curves = Vec::new();
    if !cfg.post.k_sweep.is_empty() {
        let values: Vec<f64> = cfg.post.k_sweep.iter().map(|&k| k as f64).collect();
        curves.push(Curve {
            param: SweepParam::K.as_str().into(),
            points: sweep_points(cfg, &members, &index, SweepParam::K, &values)?,
        });
    }
    let report = EvalReport {
        task: cfg.task,
        metrics,
        frames: index.len(),
        members: members.names.clone(),
        thresholds: out.thresholds.clone(),
        thresholds_tuned_on_eval: out.thresholds_tuned_on_eval,
        curves,
        config: cfg.clone(),
    };
    write_side_outputs(cfg, &out)?;
    write_file(
        &cfg.paths.output.join(format!("{}_report.json", cfg.task)),
        report.to_json().as_bytes(),
    )?;
    Ok(report)
}

/// Writes fully post-processed per-frame outputs for every frame of every
/// track to `<output>/<task>_predictions.csv`.
pub fn cmd_predict(cfg: &PipelineConfig, models: &[PathBuf]) -> Result<PathBuf> {
    cfg.validate()?;
    let dataset = load_features(cfg.features_path()?)?;
    let members = build_members(cfg, &dataset, models)?;
    let index = match (cfg.task, cfg.post.thresholds) {
        (Task::Au, ThresholdMode::Search) => {
            let labels = load_labels(cfg.labels_path()?, cfg.task)?;
            Some(LabelIndex::build(&members.members[0], &labels, cfg.task)?)
        }
        _ => None,
    };
    let outputs = members.outputs(&cfg.post, index.as_ref())?;
    let mut header = PredictionHeader::new(cfg.task, cfg.post.k);
    header.thresholds = outputs.thresholds.clone();
    header.thresholds_tuned_on_eval = outputs.thresholds_tuned_on_eval;
    write_side_outputs(cfg, &outputs)?;
    let path = cfg
        .paths
        .output
        .join(format!("{}_predictions.csv", cfg.task));
    save_predictions(&PredictionFile { header, outputs }, &path)?;
    Ok(path)
}

/// Scores the decisions stored in a prediction file against the configured
/// labels, without re-running any model or post-processing.
pub fn evaluate_predictions(cfg: &PipelineConfig, predictions: &Path) -> Result<EvalReport> {
    let file = read_predictions(predictions)?;
    if file.header.task != cfg.task {
        return Err(PipelineError::Config(format!(
            "{}: file holds {} predictions, config task is {}",
            predictions.display(),
            file.header.task,
            cfg.task
        )));
    }
    let labels = load_labels(cfg.labels_path()?, cfg.task)?;
    let index = LabelIndex::build(&file.outputs.scores, &labels, cfg.task)?;
    Ok(EvalReport {
        task: cfg.task,
        metrics: index.score(&file.outputs)?,
        frames: index.len(),
        members: vec![predictions.display().to_string()],
        thresholds: file.outputs.thresholds.clone(),
        thresholds_tuned_on_eval: file.outputs.thresholds_tuned_on_eval,
        curves: Vec::new(),
        config: cfg.clone(),
    })
}

fn sweep_points(
    cfg: &PipelineConfig,
    members: &MemberSet,
    index: &LabelIndex,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(PipelineError::Config(
            "sweep needs at least one value".into(),
        ));
    }
    values
        .iter()
        .map(|&value| {
            let mut post = cfg.post.clone();
            match param {
                SweepParam::K => {
                    if value < 0.0 || value.fract() != 0.0 {
                        return Err(PipelineError::Config(format!(
                            "k must be a non-negative integer, got {value}"
                        )));
                    }
                    post.k = value as usize;
                }
                SweepParam::BlendWeight => {
                    if members.members.len() != 2 {
                        return Err(PipelineError::Config(
                            "blend_weight sweep needs two members".into(),
                        ));
                    }
                    post.blend_weight = value;
                }
                SweepParam::AuThresholdGrid => {
                    if cfg.task != Task::Au {
                        return Err(PipelineError::Config(
                            "au_threshold_grid sweep needs the au task".into(),
                        ));
                    }
                    post.thresholds = ThresholdMode::Search;
                    post.threshold_grid_step = value;
                }
            }
            let (metrics, _) = members.evaluate(&post, index)?;
            Ok(SweepPoint {
                value,
                metric: metrics.headline(),
            })
        })
        .collect()
}

pub fn sweep_csv(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut s = format!("{},metric\n", param.as_str());
    for p in points {
        s.push_str(&format!("{},{:?}\n", p.value, p.metric));
    }
    s
}

/// Evaluates one setting of `param` per value, everything else held fixed,
/// and writes `<output>/<task>_sweep_<param>.csv`. The headline metric is
/// `P_VA` for valence/arousal and macro F1 otherwise.
pub fn cmd_sweep(
    cfg: &PipelineConfig,
    models: &[PathBuf],
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(PipelineError::Config(
            "sweep needs at least one value".into(),
        ));
    }
    let (dataset, labels) = load_split(cfg.features_path()?, cfg.labels_path()?, cfg.task)?;
    let members = build_members(cfg, &dataset, models)?;
    let index = LabelIndex::build(&members.members[0], &labels, cfg.task)?;
    let points = sweep_points(cfg, &members, &index, param, values)?;
    let path = cfg
        .paths
        .output
        .join(format!("{}_sweep_{}.csv", cfg.task, param.as_str()));
    write_file(&path, sweep_csv(param, &points).as_bytes())?;
    Ok(points)
}

/// Writes a synthetic split as `<out>/features.csv` and `<out>/labels/`.
pub fn cmd_synth(spec: SyntheticSpec, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let (dataset, labels) = generate_synthetic(spec)?;
    let features = out.join("features.csv");
    let mut buf = Vec::new();
    write_features(&dataset, &mut buf).map_err(|e| PipelineError::io(&features, e))?;
    write_file(&features, &buf)?;
    let label_dir = out.join("labels");
    write_labels(&label_dir, &labels)?;
    Ok((features, label_dir))
}
