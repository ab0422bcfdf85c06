use log::warn;

use super::{DataError, Dataset, FrameFeatures, LabelSet, Target, Task};

/// One valid, feature-bearing labeled frame.
#[derive(Debug, Clone, Copy)]
pub struct AlignedFrame<'a> {
    pub video_id: &'a str,
    pub features: &'a FrameFeatures,
    pub target: Target,
}

#[derive(Debug, Clone)]
pub struct Aligned<'a> {
    pub task: Task,
    pub frames: Vec<AlignedFrame<'a>>,
    /// Valid labels whose frame index has no features.
    pub skipped: Vec<(String, usize)>,
    /// Labeled frames dropped because they carry the invalid sentinel.
    pub invalid: usize,
}

impl Aligned<'_> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Pairs features with labels for `task`, in (video_id, frame_index) order.
pub fn align<'a>(
    dataset: &'a Dataset,
    labels: &LabelSet,
    task: Task,
) -> Result<Aligned<'a>, DataError> {
    let unknown: Vec<String> = labels
        .keys()
        .filter(|id| dataset.track(id).is_none())
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(DataError::UnknownVideos(unknown));
    }
    let mut out = Aligned {
        task,
        frames: Vec::new(),
        skipped: Vec::new(),
        invalid: 0,
    };
    // LabelSet is a BTreeMap, so iteration is already lexical by video id
    for (video_id, tl) in labels {
        if tl.task != task {
            return Err(DataError::TaskMismatch {
                video_id: video_id.clone(),
                expected: task,
                found: tl.task,
            });
        }
        let track = dataset.track(video_id).expect("checked above");
        let mut records: Vec<_> = tl.records.iter().collect();
        records.sort_by_key(|r| r.frame_index);
        for rec in records {
            let Some(target) = rec.target else {
                out.invalid += 1;
                continue;
            };
            match track
                .frames
                .binary_search_by_key(&rec.frame_index, |f| f.frame_index)
            {
                Ok(i) => out.frames.push(AlignedFrame {
                    video_id: &track.video_id,
                    features: &track.frames[i],
                    target,
                }),
                Err(_) => out.skipped.push((video_id.clone(), rec.frame_index)),
            }
        }
    }
    if !out.skipped.is_empty() {
        warn!(
            "{} labeled frames have no features and were skipped (first: {:?})",
            out.skipped.len(),
            out.skipped[0]
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{LabelRecord, TaskLabels, VideoTrack};
    use super::*;

    fn frame(i: usize) -> FrameFeatures {
        FrameFeatures {
            frame_index: i,
            embedding: vec![i as f64],
            logits: [0.0; 8],
            valence: 0.0,
            arousal: 0.0,
        }
    }

    fn dataset(frames: &[usize]) -> Dataset {
        Dataset {
            dim: 1,
            tracks: vec![VideoTrack {
                video_id: "v".into(),
                frames: frames.iter().copied().map(frame).collect(),
            }],
        }
    }

    fn labels(video: &str, recs: &[(usize, Option<usize>)]) -> LabelSet {
        let mut set = LabelSet::new();
        set.insert(
            video.into(),
            TaskLabels {
                task: Task::Expr,
                records: recs
                    .iter()
                    .map(|&(frame_index, c)| LabelRecord {
                        frame_index,
                        target: c.map(Target::Expr),
                    })
                    .collect(),
            },
        );
        set
    }

    #[test]
    fn invalid_frames_dropped() {
        let ds = dataset(&[0, 1, 2]);
        let l = labels("v", &[(0, Some(1)), (1, None), (2, Some(3))]);
        let a = align(&ds, &l, Task::Expr).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a.invalid, 1);
        assert_eq!(a.frames[1].features.frame_index, 2);
    }

    #[test]
    fn unknown_video_is_error() {
        let ds = dataset(&[0]);
        let l = labels("ghost", &[(0, Some(1))]);
        match align(&ds, &l, Task::Expr).unwrap_err() {
            DataError::UnknownVideos(ids) => assert_eq!(ids, ["ghost"]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn disjoint_frames_skipped() {
        let ds = dataset(&[10, 11, 12]);
        let l = labels("v", &[(0, Some(1)), (1, Some(2)), (2, Some(3))]);
        let a = align(&ds, &l, Task::Expr).unwrap();
        assert!(a.is_empty());
        assert_eq!(a.skipped.len(), 3);
    }

    #[test]
    fn wrong_task_labels_rejected() {
        let ds = dataset(&[0]);
        let l = labels("v", &[(0, Some(1))]);
        assert!(matches!(
            align(&ds, &l, Task::Au),
            Err(DataError::TaskMismatch { .. })
        ));
    }
}
