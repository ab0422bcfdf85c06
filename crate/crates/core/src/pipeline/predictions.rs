//! Prediction files: a JSON header line followed by one CSV row per frame.
//!
//! Columns depend on the task:
//!
//! | task | columns after `video_id,frame` |
//! |------|--------------------------------|
//! | va   | `valence,arousal`              |
//! | expr | `class,p0..p7`                 |
//! | au   | `b0..b11,s0..s11`              |
//!
//! Reals are written in shortest round-trip form, so reading a file back
//! reproduces the in-memory values bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::chain::{Decisions, Outputs};
use super::{PipelineError, Result};
use crate::dataio::{Task, AU_COUNT};
use crate::matrix::Matrix;
use crate::postprocess::PredictionSeq;

pub const PREDICTION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionHeader {
    pub version: u32,
    pub task: Task,
    /// Smoothing half-width applied before the scores were written.
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default)]
    pub thresholds_tuned_on_eval: bool,
    pub columns: String,
}

impl PredictionHeader {
    pub fn new(task: Task, k: usize) -> Self {
        Self {
            version: PREDICTION_FORMAT_VERSION,
            task,
            k,
            thresholds: None,
            thresholds_tuned_on_eval: false,
            columns: columns(task),
        }
    }
}

fn columns(task: Task) -> String {
    let mut cols = vec!["video_id".to_string(), "frame".to_string()];
    match task {
        Task::Va => cols.extend(["valence".to_string(), "arousal".to_string()]),
        Task::Expr => {
            cols.push("class".into());
            cols.extend((0..8).map(|i| format!("p{i}")));
        }
        Task::Au => {
            cols.extend((0..AU_COUNT).map(|i| format!("b{i}")));
            cols.extend((0..AU_COUNT).map(|i| format!("s{i}")));
        }
    }
    cols.join(",")
}

fn score_width(task: Task) -> usize {
    match task {
        Task::Va => 2,
        Task::Expr => 8,
        Task::Au => AU_COUNT,
    }
}

/// A prediction file in memory: post-processed scores plus the decisions
/// derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFile {
    pub header: PredictionHeader,
    pub outputs: Outputs,
}

pub fn write_predictions<W: Write>(file: &PredictionFile, mut w: W) -> std::io::Result<()> {
    let header = serde_json::to_string(&file.header).expect("header serializes");
    writeln!(w, "{header}")?;
    let out = &file.outputs;
    for (i, seq) in out.scores.iter().enumerate() {
        for (r, &frame) in seq.frame_indices.iter().enumerate() {
            write!(w, "{},{frame}", seq.video_id)?;
            match &out.decisions {
                Decisions::Va => {}
                Decisions::Expr(classes) => write!(w, ",{}", classes[i][r])?,
                Decisions::Au(bits) => {
                    for b in bits[i].row(r) {
                        write!(w, ",{b}")?;
                    }
                }
            }
            for v in seq.values.row(r) {
                write!(w, ",{v:?}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn save_predictions(file: &PredictionFile, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let mut buf = Vec::new();
    write_predictions(file, &mut buf).expect("write to Vec");
    fs::write(path, buf).map_err(|e| PipelineError::io(path, e))
}

struct Row {
    frame: usize,
    decision: Vec<f64>,
    scores: Vec<f64>,
}

/// Reads a prediction file, grouping rows by video (lexical order) and
/// sorting each video by frame index.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<PredictionFile> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    parse(BufReader::new(f), path)
}

fn parse<R: BufRead>(reader: R, path: &Path) -> Result<PredictionFile> {
    let err = |line: usize, message: String| PipelineError::PredictionFile {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut lines = reader.lines();
    let first = match lines.next() {
        Some(l) => l.map_err(|e| PipelineError::io(path, e))?,
        None => return Err(err(1, "missing header".into())),
    };
    let header: PredictionHeader =
        serde_json::from_str(&first).map_err(|e| err(1, format!("malformed header: {e}")))?;
    if header.version != PREDICTION_FORMAT_VERSION {
        return Err(err(1, format!("unsupported version {}", header.version)));
    }
    let task = header.task;
    if header.columns != columns(task) {
        return Err(err(1, format!("columns do not match the {task} layout")));
    }
    let n_decision = match task {
        Task::Va => 0,
        Task::Expr => 1,
        Task::Au => AU_COUNT,
    };
    let width = score_width(task);
    let expected = 2 + n_decision + width;

    let mut videos: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(err(
                lineno,
                format!("expected {expected} columns, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(err(lineno, "empty video id".into()));
        }
        let frame: usize = fields[1]
            .parse()
            .map_err(|_| err(lineno, format!("bad frame index {:?}", fields[1])))?;
        let mut nums = Vec::with_capacity(expected - 2);
        for v in &fields[2..] {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| err(lineno, format!("non-numeric value {v:?}")))?;
            if !x.is_finite() {
                return Err(err(lineno, format!("non-finite value {v:?}")));
            }
            nums.push(x);
        }
        let scores = nums.split_off(n_decision);
        match task {
            Task::Expr if !(nums[0] >= 0.0 && nums[0] < 8.0 && nums[0].fract() == 0.0) => {
                return Err(err(lineno, format!("class {} outside 0..8", nums[0])));
            }
            Task::Au if nums.iter().any(|&b| b != 0.0 && b != 1.0) => {
                return Err(err(lineno, "action-unit bits must be 0 or 1".into()));
            }
            _ => {}
        }
        let rows = videos.entry(fields[0].to_string()).or_default();
        rows.push(Row {
            frame,
            decision: nums,
            scores,
        });
    }

    let mut scores = Vec::with_capacity(videos.len());
    let mut classes = Vec::new();
    let mut bits = Vec::new();
    for (video_id, mut rows) in videos {
        rows.sort_by_key(|r| r.frame);
        if let Some(w) = rows.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(err(
                0,
                format!("duplicate frame {} for video {video_id:?}", w[0].frame),
            ));
        }
        let frames = rows.iter().map(|r| r.frame).collect();
        let data = rows.iter().flat_map(|r| r.scores.iter().copied()).collect();
        let values = Matrix::from_vec(rows.len(), width, data);
        match task {
            Task::Va => {}
            Task::Expr => classes.push(rows.iter().map(|r| r.decision[0] as usize).collect()),
            Task::Au => {
                let data = rows
                    .iter()
                    .flat_map(|r| r.decision.iter().map(|&b| b as u8))
                    .collect();
                bits.push(Matrix::from_vec(rows.len(), AU_COUNT, data));
            }
        }
        scores.push(PredictionSeq::new(video_id, frames, values)?);
    }
    let decisions = match task {
        Task::Va => Decisions::Va,
        Task::Expr => Decisions::Expr(classes),
        Task::Au => Decisions::Au(bits),
    };
    let thresholds = header.thresholds.clone();
    Ok(PredictionFile {
        outputs: Outputs {
            task,
            scores,
            decisions,
            thresholds,
            thresholds_tuned_on_eval: header.thresholds_tuned_on_eval,
        },
        header,
    })
}
