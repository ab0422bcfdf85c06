use std::collections::BTreeMap;

use affectkit::dataio::{
    align, format_sig9, generate_synthetic, read_features, write_features, Dataset, FrameFeatures,
    SyntheticSpec, Target, Task, VideoTrack,
};
use affectkit::heads::FeatureSelector;
use affectkit::metrics::ccc;
use affectkit::postprocess::{smooth, PredictionSeq};
use affectkit::Matrix;
use proptest::prelude::*;

/// Values that survive 9-significant-digit formatting unchanged.
fn sig9(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo..hi).prop_map(|x| format_sig9(x).parse().unwrap())
}

fn frame_strategy(dim: usize) -> impl Strategy<Value = (Vec<f64>, [f64; 8], f64, f64)> {
    (
        prop::collection::vec(sig9(-50.0, 50.0), dim),
        prop::array::uniform8(sig9(-10.0, 10.0)),
        sig9(-1.0, 1.0),
        sig9(-1.0, 1.0),
    )
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..5).prop_flat_map(|dim| {
        prop::collection::btree_map(
            "[a-z0-9_]{1,6}",
            prop::collection::btree_map(0usize..500, frame_strategy(dim), 1..6),
            0..4,
        )
        .prop_map(
            move |videos: BTreeMap<String, BTreeMap<usize, _>>| Dataset {
                dim,
                tracks: videos
                    .into_iter()
                    .map(|(video_id, frames)| VideoTrack {
                        video_id,
                        frames: frames
                            .into_iter()
                            .map(|(frame_index, (embedding, logits, valence, arousal))| {
                                FrameFeatures {
                                    frame_index,
                                    embedding,
                                    logits,
                                    valence,
                                    arousal,
                                }
                            })
                            .collect(),
                    })
                    .collect(),
            },
        )
    })
}

proptest! {
    #[test]
    fn load_of_write_is_identity(ds in dataset_strategy()) {
        let mut text = Vec::new();
        write_features(&ds, &mut text).unwrap();
        let back = read_features(&text[..], "mem.csv").unwrap();
        prop_assert_eq!(&back, &ds);
        let mut again = Vec::new();
        write_features(&back, &mut again).unwrap();
        prop_assert_eq!(again, text);
    }
}

#[test]
fn zero_width_embeddings_cannot_be_written() {
    assert!(write_features(&Dataset::empty(0), Vec::new()).is_err());
}

/// Ordinary least squares with an intercept, solved through the normal
/// equations by Gauss-Jordan elimination with partial pivoting.
fn least_squares(x: &Matrix, y: &[f64]) -> Vec<f64> {
    let p = x.cols() + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for (r, row) in x.iter_rows().enumerate() {
        let xr: Vec<f64> = row.iter().copied().chain([1.0]).collect();
        for i in 0..p {
            for j in 0..p {
                a[i][j] += xr[i] * xr[j];
            }
            a[i][p] += xr[i] * y[r];
        }
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        let pivot_row = a[col].clone();
        for (i, row) in a.iter_mut().enumerate() {
            if i != col {
                let f = row[col];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
    }
    a.iter().map(|r| r[p]).collect()
}

#[test]
fn noiseless_generator_is_linearly_recoverable() {
    let (ds, labels) = generate_synthetic(SyntheticSpec {
        task: Task::Va,
        n_videos: 10,
        frames_per_video: 400,
        noise_sigma: 0.0,
        seed: 77,
    })
    .unwrap();
    let aligned = align(&ds, &labels, Task::Va).unwrap();
    let x = FeatureSelector::LogitsVa
        .matrix(aligned.frames.iter().map(|f| f.features), ds.dim)
        .unwrap();
    for dim in 0..2 {
        let y: Vec<f64> = aligned
            .frames
            .iter()
            .map(|f| match f.target {
                Target::Va { valence, arousal } => [valence, arousal][dim],
                _ => unreachable!(),
            })
            .collect();
        let beta = least_squares(&x, &y);
        let fit: Vec<f64> = x
            .iter_rows()
            .map(|row| {
                row.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + beta[beta.len() - 1]
            })
            .collect();
        let c = ccc(&fit, &y).unwrap();
        assert!(c >= 0.999, "dimension {dim}: CCC {c}");
    }
}

#[test]
fn single_frame_videos_are_unchanged_by_smoothing() {
    let (ds, _) = generate_synthetic(SyntheticSpec {
        task: Task::Va,
        n_videos: 3,
        frames_per_video: 1,
        noise_sigma: 0.2,
        seed: 5,
    })
    .unwrap();
    for track in &ds.tracks {
        let f = &track.frames[0];
        let seq = PredictionSeq::new(
            &track.video_id[..],
            vec![0],
            Matrix::from_vec(1, 2, vec![f.valence, f.arousal]),
        )
        .unwrap();
        for k in [0, 1, 5, 200] {
            assert_eq!(smooth(&seq, k), seq);
        }
    }
}

#[test]
fn alignment_never_emits_invalid_frames() {
    let (ds, mut labels) = generate_synthetic(SyntheticSpec {
        task: Task::Expr,
        n_videos: 4,
        frames_per_video: 50,
        noise_sigma: 0.1,
        seed: 9,
    })
    .unwrap();
    let mut invalidated = 0;
    for tl in labels.values_mut() {
        for r in tl.records.iter_mut().step_by(3) {
            r.target = None;
            invalidated += 1;
        }
    }
    let aligned = align(&ds, &labels, Task::Expr).unwrap();
    assert_eq!(aligned.invalid, invalidated);
    assert_eq!(aligned.len(), 200 - invalidated);
    assert!(aligned
        .frames
        .iter()
        .all(|f| f.features.frame_index % 3 != 0));
}
