//! Per-frame feature and label data: domain types, the interchange formats,
//! alignment of features with annotations, and the synthetic generator.

mod align;
mod features;
mod format;
mod labels;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{align, Aligned, AlignedFrame};
pub use features::{load_features, read_features, write_features, FeatureHeader};
pub use format::format_sig9;
pub use labels::{load_labels, load_labels_with, write_labels, Sentinels};
pub use synthetic::{generate_synthetic, SyntheticSpec, SYNTH_AR_COEFF, SYNTH_DIM};

/// Expression classes in the order the pretrained backbone emits its logits.
pub const AFFECTNET_CLASSES: [&str; 8] = [
    "Anger",
    "Contempt",
    "Disgust",
    "Fear",
    "Happiness",
    "Neutral",
    "Sadness",
    "Surprise",
];

/// Challenge expression classes; the position is the class id used in label
/// files and predictions.
pub const EXPR_CLASSES: [&str; 8] = [
    "Neutral",
    "Anger",
    "Disgust",
    "Fear",
    "Happiness",
    "Sadness",
    "Surprise",
    "Other",
];

pub const EXPR_OTHER: usize = 7;

pub const AU_NAMES: [&str; 12] = [
    "AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU15", "AU23", "AU24", "AU25", "AU26",
];

pub const AU_COUNT: usize = 12;
pub const LOGIT_COUNT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Va,
    Expr,
    Au,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Va => "va",
            Task::Expr => "expr",
            Task::Au => "au",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "va" => Ok(Task::Va),
            "expr" => Ok(Task::Expr),
            "au" => Ok(Task::Au),
            other => Err(format!("unknown task {other:?} (expected va, expr or au)")),
        }
    }
}

/// One frame's affect representation as produced by the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub frame_index: usize,
    pub embedding: Vec<f64>,
    /// Backbone logits in [`AFFECTNET_CLASSES`] order.
    pub logits: [f64; LOGIT_COUNT],
    pub valence: f64,
    pub arousal: f64,
}

/// Frames of one video, sorted by strictly increasing `frame_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTrack {
    pub video_id: String,
    pub frames: Vec<FrameFeatures>,
}

impl VideoTrack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.frame_index).collect()
    }
}

/// Features for a set of videos. Tracks are kept in lexical `video_id` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub tracks: Vec<VideoTrack>,
}

impl Dataset {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            tracks: Vec::new(),
        }
    }

    pub fn frame_count(&self) -> usize {
        self.tracks.iter().map(VideoTrack::len).sum()
    }

    pub fn track(&self, video_id: &str) -> Option<&VideoTrack> {
        self.tracks
            .binary_search_by(|t| t.video_id.as_str().cmp(video_id))
            .ok()
            .map(|i| &self.tracks[i])
    }
}

/// Ground truth for one frame and one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Va { valence: f64, arousal: f64 },
    Expr(usize),
    Au([u8; AU_COUNT]),
}

impl Target {
    pub fn task(&self) -> Task {
        match self {
            Target::Va { .. } => Task::Va,
            Target::Expr(_) => Task::Expr,
            Target::Au(_) => Task::Au,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRecord {
    pub frame_index: usize,
    /// `None` marks an invalid (sentinel) frame.
    pub target: Option<Target>,
}

impl LabelRecord {
    pub fn is_valid(&self) -> bool {
        self.target.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskLabels {
    pub task: Task,
    pub records: Vec<LabelRecord>,
}

pub type LabelSet = BTreeMap<String, TaskLabels>;

/// What went wrong on a single line of an input file.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseIssue {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-numeric value {value:?} in column {column}")]
    NonNumeric { column: String, value: String },
    #[error("duplicate frame {frame} for video {video_id:?}")]
    DuplicateFrame { video_id: String, frame: usize },
    #[error("{column} value {value} outside [-1, 1]")]
    OutOfRange { column: String, value: f64 },
    #[error("unknown expression class id {0}")]
    UnknownClass(i64),
    #[error("action-unit row has {0} entries, expected 12")]
    AuWidth(usize),
    #[error("non-binary action-unit entry {0:?}")]
    NonBinary(String),
    #[error("empty video id")]
    EmptyVideoId,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {issue}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        #[source]
        issue: ParseIssue,
    },
    #[error("labels reference videos absent from the features: {0:?}")]
    UnknownVideos(Vec<String>),
    #[error("expected {expected} labels, found {found} for video {video_id:?}")]
    TaskMismatch {
        video_id: String,
        expected: Task,
        found: Task,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}
