use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::dataio::Task;
use crate::heads::{Architecture, ClassWeights, FeatureSelector, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExprMethod {
    /// 8-way softmax head; argmax decides.
    #[default]
    Classifier,
    /// Other/non-Other detector gating the backbone's own logits.
    PretrainedLogits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// 0.5 for every unit.
    #[default]
    Fixed,
    /// Per-unit search on the evaluated split itself.
    Search,
    /// Thresholds read from `post.thresholds_file` (held-out tuning).
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostProcessConfig {
    /// Box-filter half-width; the window spans `2k + 1` frames.
    pub k: usize,
    pub thresholds: ThresholdMode,
    pub thresholds_file: Option<PathBuf>,
    pub threshold_grid_step: f64,
    /// Weight of the first member when two members are blended.
    pub blend_weight: f64,
    /// Prediction file used as an additional blend member.
    pub external_member: Option<PathBuf>,
    pub other_threshold: f64,
    /// Extra kernel sizes evaluated into the report's `k` curve.
    pub k_sweep: Vec<usize>,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        Self {
            k: 0,
            thresholds: ThresholdMode::Fixed,
            thresholds_file: None,
            threshold_grid_step: 0.05,
            blend_weight: 0.5,
            external_member: None,
            other_threshold: 0.5,
            k_sweep: Vec::new(),
        }
    }
}

/// Training hyperparameters as they appear in the config file. The seed
/// comes from [`PipelineConfig::seed`]; an absent batch size means 4096 for
/// valence/arousal and 512 otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub hidden_size: usize,
    pub class_weights: ClassWeights,
    pub architecture: Architecture,
    pub l2: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: None,
            hidden_size: d.hidden_size,
            class_weights: d.class_weights,
            architecture: d.architecture,
            l2: d.l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub validation_features: Option<PathBuf>,
    pub validation_labels: Option<PathBuf>,
    /// Model file written by `train`; defaults to `<output>/<task>_model.json`.
    pub model: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            features: None,
            labels: None,
            validation_features: None,
            validation_labels: None,
            model: None,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    /// Defaults to `logits_va` for valence/arousal and `embeddings` otherwise.
    pub selector: Option<FeatureSelector>,
    pub expr_method: ExprMethod,
    pub train: TrainSettings,
    pub post: PostProcessConfig,
    pub paths: Paths,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            task: Task::Va,
            selector: None,
            expr_method: ExprMethod::Classifier,
            train: TrainSettings::default(),
            post: PostProcessConfig::default(),
            paths: Paths::default(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn selector(&self) -> FeatureSelector {
        self.selector.unwrap_or(match self.task {
            Task::Va => FeatureSelector::LogitsVa,
            Task::Expr | Task::Au => FeatureSelector::Embeddings,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let default_batch = match self.task {
            Task::Va => TrainConfig::va_default().batch_size,
            _ => TrainConfig::default().batch_size,
        };
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size.unwrap_or(default_batch),
            hidden_size: self.train.hidden_size,
            seed: self.seed,
            class_weights: self.train.class_weights.clone(),
            architecture: self.train.architecture,
            l2: self.train.l2,
        }
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths
            .model
            .clone()
            .unwrap_or_else(|| self.paths.output.join(format!("{}_model.json", self.task)))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(PipelineError::Config(m));
        if self.task != Task::Au && self.post.thresholds != ThresholdMode::Fixed {
            return err(format!(
                "threshold mode applies to the au task only, not {}",
                self.task
            ));
        }
        if self.post.thresholds == ThresholdMode::File && self.post.thresholds_file.is_none() {
            return err("thresholds mode \"file\" needs post.thresholds_file".into());
        }
        if self.task != Task::Expr && self.expr_method != ExprMethod::Classifier {
            return err("expr_method applies to the expr task only".into());
        }
        if !(0.0..=1.0).contains(&self.post.blend_weight) {
            return err(format!(
                "blend_weight {} outside [0, 1]",
                self.post.blend_weight
            ));
        }
        if !(self.post.threshold_grid_step > 0.0 && self.post.threshold_grid_step <= 0.5) {
            return err(format!(
                "threshold_grid_step {} outside (0, 0.5]",
                self.post.threshold_grid_step
            ));
        }
        if !(0.0..=1.0).contains(&self.post.other_threshold) {
            return err(format!(
                "other_threshold {} outside [0, 1]",
                self.post.other_threshold
            ));
        }
        Ok(())
    }

    pub(crate) fn features_path(&self) -> Result<&Path> {
        self.paths
            .features
            .as_deref()
            .ok_or_else(|| PipelineError::Config("paths.features is not set".into()))
    }

    pub(crate) fn labels_path(&self) -> Result<&Path> {
        self.paths
            .labels
            .as_deref()
            .ok_or_else(|| PipelineError::Config("paths.labels is not set".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let cfg = PipelineConfig::from_json(r#"{"task":"au","post":{"k":3}}"#).unwrap();
        assert_eq!(cfg.task, Task::Au);
        assert_eq!(cfg.post.k, 3);
        assert_eq!(cfg.post.blend_weight, 0.5);
        assert_eq!(cfg.selector(), FeatureSelector::Embeddings);
        assert_eq!(cfg.train_config().batch_size, 512);
        let va = PipelineConfig::default();
        assert_eq!(va.train_config().batch_size, 4096);
        assert_eq!(va.selector(), FeatureSelector::LogitsVa);
        assert_eq!(va.model_path(), PathBuf::from("out/va_model.json"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_json(r#"{"task":"va","kk":1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"task":"xyz"}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = PipelineConfig {
            task: Task::Expr,
            ..Default::default()
        };
        cfg.train.class_weights = ClassWeights::Explicit(vec![1.0; 8]);
        cfg.post.external_member = Some("member.csv".into());
        let back = PipelineConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_rules() {
        let mut cfg = PipelineConfig::default();
        cfg.post.thresholds = ThresholdMode::Search;
        assert!(cfg.validate().is_err());
        cfg.task = Task::Au;
        cfg.validate().unwrap();
        cfg.post.thresholds = ThresholdMode::File;
        assert!(cfg.validate().is_err());
        cfg.post.thresholds = ThresholdMode::Fixed;
        cfg.post.blend_weight = 1.5;
        assert!(cfg.validate().is_err());
    }
}
