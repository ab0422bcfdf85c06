//! Per-video annotation files: `<video_id>.txt`, line `i` holds frame `i`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::format::format_sig9;
use super::{
    DataError, LabelRecord, LabelSet, ParseIssue, Target, Task, TaskLabels, AU_COUNT, EXPR_CLASSES,
};

/// Codes that mark a frame as unannotated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sentinels {
    /// Either valence or arousal equal to this value invalidates the frame.
    pub va: f64,
    /// Expression class id, or any action-unit entry, equal to this value
    /// invalidates the frame.
    pub class: i64,
}

impl Default for Sentinels {
    fn default() -> Self {
        Self {
            va: -5.0,
            class: -1,
        }
    }
}

pub fn load_labels(dir: impl AsRef<Path>, task: Task) -> Result<LabelSet, DataError> {
    load_labels_with(dir, task, Sentinels::default())
}

/// Reads every `*.txt` file in `dir` as the labels of the video named by the
/// file stem.
pub fn load_labels_with(
    dir: impl AsRef<Path>,
    task: Task,
    sentinels: Sentinels,
) -> Result<LabelSet, DataError> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| DataError::io(dir, e))?;
    let mut set = LabelSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| DataError::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") || !path.is_file() {
            continue;
        }
        let Some(video_id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        let records =
            parse_label_text(&text, task, sentinels).map_err(|(line, issue)| DataError::Parse {
                file: path.clone(),
                line,
                issue,
            })?;
        set.insert(video_id.to_owned(), TaskLabels { task, records });
    }
    Ok(set)
}

fn parse_label_text(
    text: &str,
    task: Task,
    sentinels: Sentinels,
) -> Result<Vec<LabelRecord>, (usize, ParseIssue)> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines
        .iter()
        .enumerate()
        .map(|(frame_index, raw)| {
            let line = raw.trim_end_matches('\r').trim();
            let target = parse_label_line(line, task, sentinels)
                .map_err(|issue| (frame_index + 1, issue))?;
            Ok(LabelRecord {
                frame_index,
                target,
            })
        })
        .collect()
}

fn parse_label_line(
    line: &str,
    task: Task,
    sentinels: Sentinels,
) -> Result<Option<Target>, ParseIssue> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    match task {
        Task::Va => {
            if fields.len() != 2 {
                return Err(ParseIssue::DimensionMismatch {
                    expected: 2,
                    found: fields.len(),
                });
            }
            let real = |i: usize, column: &str| {
                fields[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ParseIssue::NonNumeric {
                        column: column.into(),
                        value: fields[i].into(),
                    })
            };
            let valence = real(0, "valence")?;
            let arousal = real(1, "arousal")?;
            if valence == sentinels.va || arousal == sentinels.va {
                return Ok(None);
            }
            for (column, value) in [("valence", valence), ("arousal", arousal)] {
                if !(-1.0..=1.0).contains(&value) {
                    return Err(ParseIssue::OutOfRange {
                        column: column.into(),
                        value,
                    });
                }
            }
            Ok(Some(Target::Va { valence, arousal }))
        }
        Task::Expr => {
            if fields.len() != 1 {
                return Err(ParseIssue::DimensionMismatch {
                    expected: 1,
                    found: fields.len(),
                });
            }
            let id: i64 = fields[0].parse().map_err(|_| ParseIssue::NonNumeric {
                column: "class".into(),
                value: fields[0].into(),
            })?;
            if id == sentinels.class {
                return Ok(None);
            }
            if !(0..EXPR_CLASSES.len() as i64).contains(&id) {
                return Err(ParseIssue::UnknownClass(id));
            }
            Ok(Some(Target::Expr(id as usize)))
        }
        Task::Au => {
            if fields.len() != AU_COUNT {
                return Err(ParseIssue::AuWidth(fields.len()));
            }
            let mut bits = [0u8; AU_COUNT];
            let mut invalid = false;
            for (b, raw) in bits.iter_mut().zip(&fields) {
                match raw.parse::<i64>() {
                    Ok(0) => *b = 0,
                    Ok(1) => *b = 1,
                    Ok(v) if v == sentinels.class => invalid = true,
                    _ => return Err(ParseIssue::NonBinary((*raw).to_owned())),
                }
            }
            Ok((!invalid).then_some(Target::Au(bits)))
        }
    }
}

/// Writes one `<video_id>.txt` per video. Frames missing from a record list
/// and invalid records are written as sentinel lines.
pub fn write_labels(dir: impl AsRef<Path>, labels: &LabelSet) -> Result<(), DataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let sentinels = Sentinels::default();
    for (video_id, tl) in labels {
        let path = dir.join(format!("{video_id}.txt"));
        let n = tl
            .records
            .iter()
            .map(|r| r.frame_index + 1)
            .max()
            .unwrap_or(0);
        let mut lines = vec![None; n];
        for r in &tl.records {
            lines[r.frame_index] = r.target;
        }
        let mut out = Vec::new();
        for target in lines {
            let line = match (tl.task, target) {
                (_, Some(Target::Va { valence, arousal })) => {
                    format!("{},{}", format_sig9(valence), format_sig9(arousal))
                }
                (_, Some(Target::Expr(c))) => c.to_string(),
                (_, Some(Target::Au(bits))) => join(bits.iter().map(|b| b.to_string())),
                (Task::Va, None) => format!(
                    "{},{}",
                    format_sig9(sentinels.va),
                    format_sig9(sentinels.va)
                ),
                (Task::Expr, None) => sentinels.class.to_string(),
                (Task::Au, None) => {
                    join(std::iter::repeat_n(sentinels.class.to_string(), AU_COUNT))
                }
            };
            writeln!(out, "{line}").expect("write to Vec");
        }
        fs::write(&path, out).map_err(|e| DataError::io(&path, e))?;
    }
    Ok(())
}

fn join(it: impl Iterator<Item = String>) -> String {
    it.collect::<Vec<_>>().join(",")
}
