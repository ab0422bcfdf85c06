//! Seeded synthetic affect sequences.
//!
//! Each video carries a 4-dimensional latent state following a stationary
//! AR(1) process; the first two latent coordinates are valence and arousal.
//! Features are a fixed linear map of the latent state plus Gaussian noise and
//! labels are deterministic functions of the latent state.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    DataError, Dataset, FrameFeatures, LabelRecord, LabelSet, Target, Task, TaskLabels, VideoTrack,
    AU_COUNT, LOGIT_COUNT,
};

/// Embedding width of synthetic datasets.
pub const SYNTH_DIM: usize = 16;
pub const SYNTH_AR_COEFF: f64 = 0.98;

const LATENT: usize = 4;
const LATENT_STD: f64 = 0.4;
const NEUTRAL_RADIUS: f64 = 0.2;
// seeds the fixed feature map; independent of the caller's seed
const MAP_SEED: u64 = 0x0AFF_EC7D;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub task: Task,
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

struct FeatureMap {
    logits: [[f64; LATENT]; LOGIT_COUNT],
    logit_bias: [f64; LOGIT_COUNT],
    embedding: [[f64; LATENT]; SYNTH_DIM],
    au: [[f64; LATENT]; AU_COUNT],
    au_bias: [f64; AU_COUNT],
}

impl FeatureMap {
    fn canonical() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(MAP_SEED);
        let mut row =
            |scale: f64| -> [f64; LATENT] { std::array::from_fn(|_| rng.gen_range(-scale..scale)) };
        let logits = std::array::from_fn(|_| row(1.0));
        let embedding = std::array::from_fn(|_| row(1.5));
        // unit-norm functionals keep every unit's decision margin on the same scale
        let au = std::array::from_fn(|_| {
            let a = row(1.0);
            let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            a.map(|v| v / n)
        });
        let logit_bias = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let au_bias = std::array::from_fn(|_| rng.gen_range(-0.35..0.05));
        Self {
            logits,
            logit_bias,
            embedding,
            au,
            au_bias,
        }
    }
}

fn dot(a: &[f64; LATENT], z: &[f64; LATENT]) -> f64 {
    a.iter().zip(z).map(|(x, y)| x * y).sum()
}

/// Quantizes a (valence, arousal) point into a challenge expression class:
/// Neutral near the origin, otherwise one of seven angular sectors.
fn expression_region(valence: f64, arousal: f64) -> usize {
    if valence.hypot(arousal) < NEUTRAL_RADIUS {
        return 0;
    }
    let angle = arousal.atan2(valence).rem_euclid(2.0 * PI);
    let sector = (angle / (2.0 * PI / 7.0)) as usize;
    1 + sector.min(6)
}

pub fn generate_synthetic(spec: SyntheticSpec) -> Result<(Dataset, LabelSet), DataError> {
    if spec.n_videos == 0 || spec.frames_per_video == 0 {
        return Err(DataError::Argument(
            "n_videos and frames_per_video must be at least 1".into(),
        ));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(DataError::Argument(format!(
            "noise_sigma must be a finite non-negative real, got {}",
            spec.noise_sigma
        )));
    }
    let map = FeatureMap::canonical();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let innovation = LATENT_STD * (1.0 - SYNTH_AR_COEFF * SYNTH_AR_COEFF).sqrt();
    let width = spec.n_videos.to_string().len().max(3);

    let mut tracks = Vec::with_capacity(spec.n_videos);
    let mut labels = LabelSet::new();
    for v in 0..spec.n_videos {
        let video_id = format!("synth{v:0width$}");
        let mut z: [f64; LATENT] =
            std::array::from_fn(|_| LATENT_STD * rng.sample::<f64, _>(StandardNormal));
        let mut frames = Vec::with_capacity(spec.frames_per_video);
        let mut records = Vec::with_capacity(spec.frames_per_video);
        for t in 0..spec.frames_per_video {
            if t > 0 {
                for zi in z.iter_mut() {
                    *zi = SYNTH_AR_COEFF * *zi + innovation * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let mut noise = || spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            let valence = (z[0] + noise()).clamp(-1.0, 1.0);
            let arousal = (z[1] + noise()).clamp(-1.0, 1.0);
            let logits: [f64; LOGIT_COUNT] =
                std::array::from_fn(|j| dot(&map.logits[j], &z) + map.logit_bias[j] + noise());
            let embedding: Vec<f64> = (0..SYNTH_DIM)
                .map(|j| dot(&map.embedding[j], &z) + noise())
                .collect();
            frames.push(FrameFeatures {
                frame_index: t,
                embedding,
                logits,
                valence,
                arousal,
            });
            let target = match spec.task {
                Task::Va => Target::Va {
                    valence: z[0].clamp(-1.0, 1.0),
                    arousal: z[1].clamp(-1.0, 1.0),
                },
                Task::Expr => Target::Expr(expression_region(z[0], z[1])),
                Task::Au => Target::Au(std::array::from_fn(|u| {
                    u8::from(dot(&map.au[u], &z) + map.au_bias[u] > 0.0)
                })),
            };
            records.push(LabelRecord {
                frame_index: t,
                target: Some(target),
            });
        }
        labels.insert(
            video_id.clone(),
            TaskLabels {
                task: spec.task,
                records,
            },
        );
        tracks.push(VideoTrack { video_id, frames });
    }
    Ok((
        Dataset {
            dim: SYNTH_DIM,
            tracks,
        },
        labels,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::write_features;

    fn spec(task: Task, n: usize, t: usize, sigma: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            task,
            n_videos: n,
            frames_per_video: t,
            noise_sigma: sigma,
            seed,
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let bytes = |seed| {
            let (ds, _) = generate_synthetic(spec(Task::Au, 3, 50, 0.3, seed)).unwrap();
            let mut out = Vec::new();
            write_features(&ds, &mut out).unwrap();
            out
        };
        assert_eq!(bytes(7), bytes(7));
        assert_ne!(bytes(7), bytes(8));
        let a = generate_synthetic(spec(Task::Va, 2, 20, 0.1, 3)).unwrap();
        let b = generate_synthetic(spec(Task::Va, 2, 20, 0.1, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn latent_valence_autocorrelation() {
        let (_, labels) = generate_synthetic(spec(Task::Va, 10, 2000, 0.0, 11)).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        let all: Vec<Vec<f64>> = labels
            .values()
            .map(|tl| {
                tl.records
                    .iter()
                    .map(|r| match r.target {
                        Some(Target::Va { valence, .. }) => valence,
                        _ => unreachable!(),
                    })
                    .collect()
            })
            .collect();
        let n: usize = all.iter().map(Vec::len).sum();
        let mean = all.iter().flatten().sum::<f64>() / n as f64;
        for v in &all {
            for w in v.windows(2) {
                num += (w[0] - mean) * (w[1] - mean);
            }
            for x in v {
                den += (x - mean) * (x - mean);
            }
        }
        let rho = num / den;
        assert!((0.96..=0.995).contains(&rho), "lag-1 autocorrelation {rho}");
    }

    #[test]
    fn all_expression_classes_occur() {
        let (_, labels) = generate_synthetic(spec(Task::Expr, 20, 500, 0.0, 1)).unwrap();
        let mut counts = [0usize; 8];
        for tl in labels.values() {
            for r in &tl.records {
                if let Some(Target::Expr(c)) = r.target {
                    counts[c] += 1;
                }
            }
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn features_respect_ranges() {
        let (ds, _) = generate_synthetic(spec(Task::Va, 2, 200, 2.0, 5)).unwrap();
        for f in ds.tracks.iter().flat_map(|t| &t.frames) {
            assert!((-1.0..=1.0).contains(&f.valence));
            assert!((-1.0..=1.0).contains(&f.arousal));
            assert_eq!(f.embedding.len(), SYNTH_DIM);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_synthetic(spec(Task::Va, 0, 10, 0.0, 0)).is_err());
        assert!(generate_synthetic(spec(Task::Va, 1, 0, 0.0, 0)).is_err());
        assert!(generate_synthetic(spec(Task::Va, 1, 1, -0.1, 0)).is_err());
    }
}
