//! Feature interchange format: one JSON header line followed by CSV rows
//! `video_id,frame,valence,arousal,l0..l7,e0..e{D-1}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::format_sig9;
use super::{
    DataError, Dataset, FrameFeatures, ParseIssue, VideoTrack, AFFECTNET_CLASSES, LOGIT_COUNT,
};

pub const FEATURE_FORMAT_VERSION: u32 = 1;

const LEADING_COLUMNS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub version: u32,
    #[serde(rename = "D")]
    pub dim: usize,
    pub logit_order: Vec<String>,
    pub columns: String,
}

impl FeatureHeader {
    pub fn new(dim: usize) -> Self {
        Self {
            version: FEATURE_FORMAT_VERSION,
            dim,
            logit_order: AFFECTNET_CLASSES.iter().map(|s| s.to_string()).collect(),
            columns: column_spec(dim),
        }
    }

    fn validate(&self) -> Result<(), ParseIssue> {
        if self.version != FEATURE_FORMAT_VERSION {
            return Err(ParseIssue::MalformedHeader(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.dim == 0 {
            return Err(ParseIssue::MalformedHeader("D must be positive".into()));
        }
        if self
            .logit_order
            .iter()
            .map(String::as_str)
            .ne(AFFECTNET_CLASSES)
        {
            return Err(ParseIssue::MalformedHeader(format!(
                "logit_order must be {AFFECTNET_CLASSES:?}"
            )));
        }
        let expected = column_spec(self.dim);
        if self.columns != expected {
            return Err(ParseIssue::MalformedHeader(format!(
                "columns {:?} do not match {expected:?}",
                self.columns
            )));
        }
        Ok(())
    }
}

fn column_spec(dim: usize) -> String {
    format!("video_id,frame,valence,arousal,l0..l7,e0..e{}", dim - 1)
}

/// Loads a feature file. Tracks come back in lexical `video_id` order with
/// frames sorted by index.
pub fn load_features(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_features(BufReader::new(file), path)
}

/// Parses the feature format from any reader; `origin` is only used in error
/// messages.
pub fn read_features<R: BufRead>(
    reader: R,
    origin: impl Into<PathBuf>,
) -> Result<Dataset, DataError> {
    let origin = origin.into();
    let parse_err = |line: usize, issue: ParseIssue| DataError::Parse {
        file: origin.clone(),
        line,
        issue,
    };
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| DataError::io(&origin, e))?,
        None => {
            return Err(parse_err(
                1,
                ParseIssue::MalformedHeader("missing header line".into()),
            ))
        }
    };
    let header: FeatureHeader = serde_json::from_str(header_line.trim_end_matches('\r'))
        .map_err(|e| parse_err(1, ParseIssue::MalformedHeader(e.to_string())))?;
    header.validate().map_err(|issue| parse_err(1, issue))?;
    let dim = header.dim;

    let mut by_video: BTreeMap<String, BTreeMap<usize, FrameFeatures>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| DataError::io(&origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (video_id, frame) = parse_row(line, dim).map_err(|issue| parse_err(line_no, issue))?;
        let index = frame.frame_index;
        let frames = by_video.entry(video_id.clone()).or_default();
        if frames.insert(index, frame).is_some() {
            return Err(parse_err(
                line_no,
                ParseIssue::DuplicateFrame {
                    video_id,
                    frame: index,
                },
            ));
        }
    }
    let tracks = by_video
        .into_iter()
        .map(|(video_id, frames)| VideoTrack {
            video_id,
            frames: frames.into_values().collect(),
        })
        .collect();
    Ok(Dataset { dim, tracks })
}

fn parse_row(line: &str, dim: usize) -> Result<(String, FrameFeatures), ParseIssue> {
    let fields: Vec<&str> = line.split(',').collect();
    let expected = LEADING_COLUMNS + LOGIT_COUNT + dim;
    if fields.len() != expected {
        return Err(ParseIssue::DimensionMismatch {
            expected,
            found: fields.len(),
        });
    }
    let video_id = fields[0].trim();
    if video_id.is_empty() {
        return Err(ParseIssue::EmptyVideoId);
    }
    let frame_index: usize = fields[1]
        .trim()
        .parse()
        .map_err(|_| ParseIssue::NonNumeric {
            column: "frame".into(),
            value: fields[1].into(),
        })?;
    let real = |idx: usize, column: &str| -> Result<f64, ParseIssue> {
        let raw = fields[idx].trim();
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ParseIssue::NonNumeric {
                column: column.to_owned(),
                value: raw.to_owned(),
            })
    };
    let valence = real(2, "valence")?;
    let arousal = real(3, "arousal")?;
    for (name, v) in [("valence", valence), ("arousal", arousal)] {
        if !(-1.0..=1.0).contains(&v) {
            return Err(ParseIssue::OutOfRange {
                column: name.into(),
                value: v,
            });
        }
    }
    let mut logits = [0.0; LOGIT_COUNT];
    for (j, l) in logits.iter_mut().enumerate() {
        *l = real(LEADING_COLUMNS + j, &format!("l{j}"))?;
    }
    let embedding = (0..dim)
        .map(|j| real(LEADING_COLUMNS + LOGIT_COUNT + j, &format!("e{j}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        video_id.to_owned(),
        FrameFeatures {
            frame_index,
            embedding,
            logits,
            valence,
            arousal,
        },
    ))
}

/// Writes a dataset in the feature format, reals with 9 significant digits.
pub fn write_features<W: Write>(dataset: &Dataset, writer: W) -> std::io::Result<()> {
    if dataset.dim == 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "embedding dimension D must be positive",
        ));
    }
    let mut w = BufWriter::new(writer);
    let header = serde_json::to_string(&FeatureHeader::new(dataset.dim))?;
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for track in &dataset.tracks {
        if track.video_id.is_empty() || track.video_id.contains([',', '\n', '\r']) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("video id {:?} cannot be written to CSV", track.video_id),
            ));
        }
        for f in &track.frames {
            if f.embedding.len() != dataset.dim {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!(
                        "frame {} of {:?} has {} embedding values, dataset D is {}",
                        f.frame_index,
                        track.video_id,
                        f.embedding.len(),
                        dataset.dim
                    ),
                ));
            }
            line.clear();
            line.push_str(&track.video_id);
            line.push(',');
            line.push_str(&f.frame_index.to_string());
            for v in [f.valence, f.arousal]
                .iter()
                .chain(f.logits.iter())
                .chain(f.embedding.iter())
            {
                line.push(',');
                line.push_str(&format_sig9(*v));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
    }
    w.flush()
}
